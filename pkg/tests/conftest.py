import numpy as np
import pytest

from equibench.dataset import SynthConfig, generate_synthetic


@pytest.fixture(scope="session")
def small_world():
    """40 assets x 10 years, default noise: the workhorse fixture."""
    return generate_synthetic(SynthConfig(n_assets=40, n_years=10, seed=11))


@pytest.fixture(scope="session")
def pure_capm_world():
    """Zero noise, zero nonlinearity: an exact one-factor equilibrium."""
    return generate_synthetic(SynthConfig(
        n_assets=60, n_years=12, seed=5, noise_scale=0.0, nonlinear_amplitude=0.0,
    ))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
