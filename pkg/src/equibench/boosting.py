"""Gradient-boosted regression trees, plus a probabilistic Gaussian variant.

The point model fits each round's tree to the squared-error residuals and
adds it with shrinkage; split search is exact greedy over midpoints of
consecutive distinct sorted feature values, with XGBoost-style leaf
penalization (leaf value = sum(residuals) / (count + l2_leaf_penalty) and
gain computed from the same penalized scores). Ties break to the lowest
feature index, then the smallest threshold, so fits are independent of row
iteration order; training rows are additionally re-ordered into a
canonical lexicographic order once per fit, which makes the whole fit
bit-identical under any permutation of the input rows.

The probabilistic variant boosts the two parameters of a per-row Gaussian
(mu, log sigma) with trees fitted to the natural gradient of the negative
log-likelihood: for the Gaussian with parameters (mu, log sigma) the
Fisher information is diag(1/sigma^2, 2), so the natural-gradient
components are (mu - y) and 0.5 * (1 - ((y - mu)/sigma)^2).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError
from .util import child_rng

_SERIAL_VERSION = 1


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    l2_leaf_penalty: float = 0.0
    min_samples_leaf: int = 1
    subsample_rows: float = 1.0
    subsample_features: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 0:
            raise ConfigurationError("n_estimators must be >= 0")
        if self.max_depth < 0:
            raise ConfigurationError("max_depth must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.l2_leaf_penalty < 0:
            raise ConfigurationError("l2_leaf_penalty must be >= 0")
        if self.min_samples_leaf < 1:
            raise ConfigurationError("min_samples_leaf must be >= 1")
        for name in ("subsample_rows", "subsample_features"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "l2_leaf_penalty": self.l2_leaf_penalty,
            "min_samples_leaf": self.min_samples_leaf,
            "subsample_rows": self.subsample_rows,
            "subsample_features": self.subsample_features,
            "seed": self.seed,
        }


@dataclass
class TreeNode:
    """Internal node (feature_index, threshold, two children) or leaf (value).

    Routing: feature value <= threshold goes left, else right.
    """

    feature_index: int = -1
    threshold: float = math.nan
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float = math.nan

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        self._predict_into(X, np.arange(len(X)), out)
        return out

    def _predict_into(self, X, idx, out):
        if self.is_leaf:
            out[idx] = self.value
            return
        go_left = X[idx, self.feature_index] <= self.threshold
        if go_left.any():
            self.left._predict_into(X, idx[go_left], out)
        if not go_left.all():
            self.right._predict_into(X, idx[~go_left], out)

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


def _leaf(residuals: np.ndarray, penalty: float) -> TreeNode:
    return TreeNode(value=float(residuals.sum() / (len(residuals) + penalty)))


def _best_split(X: np.ndarray, residuals: np.ndarray, feature_ids: np.ndarray,
                penalty: float, min_leaf: int):
    """Best (feature, threshold, gain) over the candidate features.

    Gain is the penalized squared-error reduction
        SL^2/(nL+p) + SR^2/(nR+p) - S^2/(n+p),
    evaluated for every midpoint between consecutive distinct sorted values
    of each feature, vectorized across split positions and features.
    Returns None when no split has positive gain.
    """
    n = len(residuals)
    if n < 2 or n < 2 * min_leaf:
        return None
    cols = X[:, feature_ids]
    order = np.argsort(cols, axis=0, kind="stable")
    xs = np.take_along_axis(cols, order, axis=0)
    rs = residuals[order]
    prefix = np.cumsum(rs, axis=0)
    total = prefix[-1]

    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    left_sum = prefix[:-1]
    right_sum = total[None, :] - left_sum
    parent = float(residuals.sum()) ** 2 / (n + penalty)
    gains = (left_sum ** 2 / (n_left + penalty)
             + right_sum ** 2 / (n_right + penalty)
             - parent)

    valid = xs[:-1] < xs[1:]
    if min_leaf > 1:
        pos = np.arange(1, n)[:, None]
        valid &= (pos >= min_leaf) & (n - pos >= min_leaf)
    gains[~valid] = -np.inf

    # Zero gain means stop; tolerance absorbs the float residue of exactly
    # redundant splits (e.g. constant residuals).
    tol = 1e-12 * (abs(parent) + 1.0)
    best = None  # (gain, feature, threshold, position in this column's order)
    for c in range(len(feature_ids)):
        p = int(np.argmax(gains[:, c]))
        g = gains[p, c]
        if g <= tol:
            continue
        if best is None or g > best[0]:
            lo, hi = xs[p, c], xs[p + 1, c]
            thr = (lo + hi) / 2.0
            if not (lo <= thr < hi):  # midpoint rounded onto hi: clamp down
                thr = lo
            best = (float(g), int(feature_ids[c]), float(thr))
    return best


def _grow(X, residuals, depth, params: GbtParams, rng, n_features) -> TreeNode:
    if depth >= params.max_depth or len(residuals) < 2:
        return _leaf(residuals, params.l2_leaf_penalty)
    if params.subsample_features < 1.0:
        k = max(1, int(round(params.subsample_features * n_features)))
        feature_ids = np.sort(rng.choice(n_features, size=k, replace=False))
    else:
        feature_ids = np.arange(n_features)
    split = _best_split(X, residuals, feature_ids,
                        params.l2_leaf_penalty, params.min_samples_leaf)
    if split is None:
        return _leaf(residuals, params.l2_leaf_penalty)
    _, feat, thr = split
    mask = X[:, feat] <= thr
    return TreeNode(
        feature_index=feat,
        threshold=thr,
        left=_grow(X[mask], residuals[mask], depth + 1, params, rng, n_features),
        right=_grow(X[~mask], residuals[~mask], depth + 1, params, rng, n_features),
    )


def fit_tree(X: np.ndarray, residuals: np.ndarray, params: GbtParams,
             rng: np.random.Generator | None = None) -> TreeNode:
    """Grow one regression tree on the residuals (greedy, depth-first).

    The rng is consumed only for per-node feature subsampling when
    subsample_features < 1.
    """
    X = np.asarray(X, dtype=np.float64)
    residuals = np.asarray(residuals, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(residuals) or len(X) == 0:
        raise ValidationError("fit_tree needs a non-empty (n, d) matrix and n residuals")
    if not np.isfinite(residuals).all():
        raise ValidationError("residuals must be finite")
    if rng is None:
        rng = child_rng(params.seed, "tree")
    return _grow(X, residuals, 0, params, rng, X.shape[1])


@dataclass
class TreeEnsemble:
    """Additive composition: base_score + learning_rate * sum of tree outputs."""

    base_score: float
    trees: list[TreeNode]
    learning_rate: float
    params: GbtParams
    n_features: int
    train_mse_curve: list[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(
                f"expected (n, {self.n_features}) feature matrix, got {X.shape}"
            )
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Lexicographic row order by (features..., target): fits become
    independent of the caller's row ordering."""
    keys = (y,) + tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1))
    return np.lexsort(keys)


def _unpack_training_data(train):
    if isinstance(train, tuple):
        X, y = train
    else:
        X, y = train.X, train.y
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValidationError("training data is empty")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValidationError("training features and targets must be finite (no NaN/inf)")
    return X, y


def gbt_fit(train, params: GbtParams) -> TreeEnsemble:
    """Boost squared-error residual trees; records per-round training MSE.

    `train` is a FeatureMatrix or an (X, y) tuple.
    """
    X, y = _unpack_training_data(train)
    order = _canonical_order(X, y)
    Xc, yc = X[order], y[order]
    n = len(yc)
    rng = child_rng(params.seed, "gbt")

    base = float(yc.mean())
    pred = np.full(n, base)
    trees: list[TreeNode] = []
    curve: list[float] = []
    for _ in range(params.n_estimators):
        residuals = yc - pred
        if params.subsample_rows < 1.0:
            k = max(1, int(round(params.subsample_rows * n)))
            rows = np.sort(rng.choice(n, size=k, replace=False))
            tree = fit_tree(Xc[rows], residuals[rows], params, rng)
        else:
            tree = fit_tree(Xc, residuals, params, rng)
        trees.append(tree)
        pred += params.learning_rate * tree.predict(Xc)
        curve.append(float(np.mean((yc - pred) ** 2)))
    return TreeEnsemble(
        base_score=base,
        trees=trees,
        learning_rate=params.learning_rate,
        params=params,
        n_features=X.shape[1],
        train_mse_curve=curve,
    )


def gbt_predict(model: TreeEnsemble, X) -> np.ndarray:
    return model.predict(X)


# ---------------------------------------------------------------------------
# Probabilistic Gaussian boosting
# ---------------------------------------------------------------------------

SIGMA_FLOOR = 1e-6


@dataclass
class GaussianBoostEnsemble:
    """Boosted per-row Gaussian: mu and log sigma each get a tree per round."""

    base_mu: float
    base_log_sigma: float
    trees_mu: list[TreeNode]
    trees_log_sigma: list[TreeNode]
    learning_rate: float
    params: GbtParams
    n_features: int
    train_nll_curve: list[float] = field(default_factory=list)

    def predict_dist(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(
                f"expected (n, {self.n_features}) feature matrix, got {X.shape}"
            )
        mu = np.full(len(X), self.base_mu)
        log_sigma = np.full(len(X), self.base_log_sigma)
        for t_mu, t_ls in zip(self.trees_mu, self.trees_log_sigma):
            mu -= self.learning_rate * t_mu.predict(X)
            log_sigma -= self.learning_rate * t_ls.predict(X)
        sigma = np.maximum(np.exp(log_sigma), SIGMA_FLOOR)
        return mu, sigma

    def predict(self, X) -> np.ndarray:
        """Point-prediction mode: the Gaussian mean."""
        return self.predict_dist(X)[0]


def _gaussian_nll(y, mu, sigma) -> float:
    z = (y - mu) / sigma
    return float(np.mean(0.5 * math.log(2.0 * math.pi) + np.log(sigma) + 0.5 * z * z))


def ngboost_fit(train, params: GbtParams) -> GaussianBoostEnsemble:
    """Boost the Gaussian (mu, log sigma) by natural gradient descent.

    Each round fits one tree per parameter to the natural gradient of the
    negative log-likelihood on the (optionally row-subsampled) batch and
    steps against it with the learning rate. Per-round training NLL is
    recorded.
    """
    X, y = _unpack_training_data(train)
    order = _canonical_order(X, y)
    Xc, yc = X[order], y[order]
    n = len(yc)
    rng = child_rng(params.seed, "ngboost")

    base_mu = float(yc.mean())
    base_log_sigma = float(math.log(max(yc.std(), SIGMA_FLOOR)))
    mu = np.full(n, base_mu)
    log_sigma = np.full(n, base_log_sigma)
    trees_mu: list[TreeNode] = []
    trees_ls: list[TreeNode] = []
    curve: list[float] = []
    for _ in range(params.n_estimators):
        sigma = np.maximum(np.exp(log_sigma), SIGMA_FLOOR)
        z = (yc - mu) / sigma
        nat_grad_mu = mu - yc
        nat_grad_ls = 0.5 * (1.0 - z * z)
        if params.subsample_rows < 1.0:
            k = max(1, int(round(params.subsample_rows * n)))
            rows = np.sort(rng.choice(n, size=k, replace=False))
        else:
            rows = slice(None)
        t_mu = fit_tree(Xc[rows], nat_grad_mu[rows], params, rng)
        t_ls = fit_tree(Xc[rows], nat_grad_ls[rows], params, rng)
        trees_mu.append(t_mu)
        trees_ls.append(t_ls)
        mu -= params.learning_rate * t_mu.predict(Xc)
        log_sigma -= params.learning_rate * t_ls.predict(Xc)
        curve.append(_gaussian_nll(yc, mu, np.maximum(np.exp(log_sigma), SIGMA_FLOOR)))
    return GaussianBoostEnsemble(
        base_mu=base_mu,
        base_log_sigma=base_log_sigma,
        trees_mu=trees_mu,
        trees_log_sigma=trees_ls,
        learning_rate=params.learning_rate,
        params=params,
        n_features=X.shape[1],
        train_nll_curve=curve,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _tree_to_nodes(root: TreeNode) -> list[dict]:
    """Flatten to an explicit node array; children referenced by index."""
    nodes: list[dict] = []

    def visit(node: TreeNode) -> int:
        idx = len(nodes)
        nodes.append({})
        if node.is_leaf:
            nodes[idx] = {"feature": -1, "threshold": None,
                          "left": -1, "right": -1, "value": node.value}
        else:
            left = visit(node.left)
            right = visit(node.right)
            nodes[idx] = {"feature": node.feature_index, "threshold": node.threshold,
                          "left": left, "right": right, "value": None}
        return idx

    visit(root)
    return nodes


def _tree_from_nodes(nodes: list[dict]) -> TreeNode:
    def build(idx: int) -> TreeNode:
        rec = nodes[idx]
        if rec["left"] == -1:
            return TreeNode(value=float(rec["value"]))
        return TreeNode(
            feature_index=int(rec["feature"]),
            threshold=float(rec["threshold"]),
            left=build(rec["left"]),
            right=build(rec["right"]),
        )

    return build(0)


def ensemble_to_dict(model: TreeEnsemble) -> dict:
    return {
        "format_version": _SERIAL_VERSION,
        "model_type": "gbt",
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "n_features": model.n_features,
        "params": model.params.to_dict(),
        "trees": [_tree_to_nodes(t) for t in model.trees],
    }


def ensemble_from_dict(payload: dict) -> TreeEnsemble:
    if payload.get("format_version") != _SERIAL_VERSION:
        raise ValidationError("unsupported model format version")
    return TreeEnsemble(
        base_score=float(payload["base_score"]),
        trees=[_tree_from_nodes(n) for n in payload["trees"]],
        learning_rate=float(payload["learning_rate"]),
        params=GbtParams(**payload["params"]),
        n_features=int(payload["n_features"]),
    )


def gaussian_ensemble_to_dict(model: GaussianBoostEnsemble) -> dict:
    return {
        "format_version": _SERIAL_VERSION,
        "model_type": "ngboost",
        "base_mu": model.base_mu,
        "base_log_sigma": model.base_log_sigma,
        "learning_rate": model.learning_rate,
        "n_features": model.n_features,
        "params": model.params.to_dict(),
        "trees_mu": [_tree_to_nodes(t) for t in model.trees_mu],
        "trees_log_sigma": [_tree_to_nodes(t) for t in model.trees_log_sigma],
    }


def gaussian_ensemble_from_dict(payload: dict) -> GaussianBoostEnsemble:
    if payload.get("format_version") != _SERIAL_VERSION:
        raise ValidationError("unsupported model format version")
    return GaussianBoostEnsemble(
        base_mu=float(payload["base_mu"]),
        base_log_sigma=float(payload["base_log_sigma"]),
        trees_mu=[_tree_from_nodes(n) for n in payload["trees_mu"]],
        trees_log_sigma=[_tree_from_nodes(n) for n in payload["trees_log_sigma"]],
        learning_rate=float(payload["learning_rate"]),
        params=GbtParams(**payload["params"]),
        n_features=int(payload["n_features"]),
    )


def save_model(model, path) -> None:
    if isinstance(model, TreeEnsemble):
        payload = ensemble_to_dict(model)
    elif isinstance(model, GaussianBoostEnsemble):
        payload = gaussian_ensemble_to_dict(model)
    else:
        raise ConfigurationError(f"cannot serialize {type(model).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    kind = payload.get("model_type")
    if kind == "gbt":
        return ensemble_from_dict(payload)
    if kind == "ngboost":
        return gaussian_ensemble_from_dict(payload)
    raise ValidationError(f"unknown model_type {kind!r} in {path}")
