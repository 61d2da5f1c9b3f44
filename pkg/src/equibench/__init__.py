"""equibench: annual equity-return forecasting benchmark.

A one-factor expected-return model with fixed estimation conventions is
compared out-of-sample against gradient-boosted trees, a probabilistic
Gaussian boosting variant, and shallow/deep feed-forward networks, all
trained on lagged panel features with hyperparameters tuned by grid or
TPE search, and explained via exact Shapley values and permutation
importance. Every algorithm is implemented here from first principles on
top of numpy.
"""

__version__ = "0.1.0"

from .errors import EquibenchError  # noqa: F401
