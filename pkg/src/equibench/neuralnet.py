"""Feed-forward regression networks trained by backpropagation.

Architecture per hidden layer: affine map, optional batch normalization,
then a relu or tanh activation; the output head is a single linear unit.
Training minimizes mean squared error plus an L2 penalty on all weight
matrices, using mini-batch Adam (beta1=0.9, beta2=0.999, eps=1e-8) with a
per-epoch seeded shuffle. Batch norm uses batch statistics in training
mode and exponential-moving-average running statistics (momentum 0.9) at
inference, so a trained model's forward pass is a pure per-row function.

Everything is float64; `gradient_check` compares the analytic gradients
against central finite differences on a sampled parameter subset, which is
the correctness oracle for the whole backward pass (batch-norm gradients
included, since the analytic pass differentiates through the batch
statistics and the finite-difference pass recomputes them).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingDivergedError, ValidationError
from .util import child_rng

_SERIAL_VERSION = 1
_BN_EPS = 1e-5
_BN_MOMENTUM = 0.9
_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8

ACTIVATIONS = ("relu", "tanh")

SHALLOW_LAYER_RANGE = (1, 2)
DEEP_LAYER_RANGE = (3, 5)
PRESET_WIDTH_RANGE = (256, 1024)


def _broadcast(value, n, kinds, what):
    if isinstance(value, (list, tuple)):
        out = tuple(value)
        if len(out) != n:
            raise ConfigurationError(f"{what} must have one entry per hidden layer")
    else:
        out = (value,) * n
    for v in out:
        if kinds and v not in kinds:
            raise ConfigurationError(f"{what} entries must be one of {kinds}, got {v!r}")
    return out


@dataclass(frozen=True)
class MlpConfig:
    hidden_layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    batch_norm: tuple[bool, ...]
    l2_penalty: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if any(w < 1 for w in self.hidden_layer_sizes):
            raise ConfigurationError("hidden layer widths must be >= 1")
        n = len(self.hidden_layer_sizes)
        if len(self.activations) != n or len(self.batch_norm) != n:
            raise ConfigurationError("per-layer settings must match the number of hidden layers")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")
        if self.l2_penalty < 0:
            raise ConfigurationError("l2_penalty must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def build(cls, hidden_layer_sizes, activation="relu", batch_norm=False,
              **kwargs) -> "MlpConfig":
        """Convenience constructor broadcasting scalar per-layer settings."""
        sizes = tuple(int(w) for w in hidden_layer_sizes)
        n = len(sizes)
        return cls(
            hidden_layer_sizes=sizes,
            activations=_broadcast(activation, n, ACTIVATIONS, "activation"),
            batch_norm=tuple(bool(b) for b in _broadcast(batch_norm, n, None, "batch_norm")),
            **kwargs,
        )

    @classmethod
    def shallow_preset(cls, n_layers=1, width=256, **kwargs) -> "MlpConfig":
        _check_preset(n_layers, width, SHALLOW_LAYER_RANGE, "shallow")
        return cls.build([width] * n_layers, **kwargs)

    @classmethod
    def deep_preset(cls, n_layers=3, width=256, **kwargs) -> "MlpConfig":
        _check_preset(n_layers, width, DEEP_LAYER_RANGE, "deep")
        return cls.build([width] * n_layers, **kwargs)

    def to_dict(self) -> dict:
        return {
            "hidden_layer_sizes": list(self.hidden_layer_sizes),
            "activations": list(self.activations),
            "batch_norm": list(self.batch_norm),
            "l2_penalty": self.l2_penalty,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
        }


def _check_preset(n_layers, width, layer_range, name):
    lo, hi = layer_range
    if not lo <= n_layers <= hi:
        raise ConfigurationError(f"{name} preset takes {lo}-{hi} hidden layers, got {n_layers}")
    if not PRESET_WIDTH_RANGE[0] <= width <= PRESET_WIDTH_RANGE[1]:
        raise ConfigurationError(
            f"preset widths live in {PRESET_WIDTH_RANGE}, got {width}"
        )


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class DenseLayer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray     # (fan_out,)
    activation: str | None  # None on the linear output head
    bn: BatchNormState | None


@dataclass
class MlpModel:
    input_dim: int
    layers: list[DenseLayer]
    config: MlpConfig

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[1]


def mlp_init(config: MlpConfig, input_dim: int) -> MlpModel:
    """Fan-in-scaled Gaussian weights (variance 2/fan_in), zero biases,
    identity batch-norm state; fully determined by config.seed."""
    if input_dim < 1:
        raise ConfigurationError("input_dim must be >= 1")
    rng = child_rng(config.seed, "mlp-init")
    dims = [input_dim, *config.hidden_layer_sizes, 1]
    layers: list[DenseLayer] = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        is_hidden = i < len(config.hidden_layer_sizes)
        bn = None
        if is_hidden and config.batch_norm[i]:
            bn = BatchNormState(
                gamma=np.ones(fan_out), beta=np.zeros(fan_out),
                running_mean=np.zeros(fan_out), running_var=np.ones(fan_out),
            )
        layers.append(DenseLayer(
            weights=W, bias=b,
            activation=config.activations[i] if is_hidden else None,
            bn=bn,
        ))
    return MlpModel(input_dim=input_dim, layers=layers, config=config)


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(name, z):
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _forward(model: MlpModel, X: np.ndarray, training: bool,
             update_running: bool, want_cache: bool):
    A = X
    cache = []
    for layer in model.layers:
        z = A @ layer.weights + layer.bias
        bn_cache = None
        if layer.bn is not None:
            bn = layer.bn
            if training:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_running:
                    bn.running_mean = _BN_MOMENTUM * bn.running_mean + (1 - _BN_MOMENTUM) * mu
                    bn.running_var = _BN_MOMENTUM * bn.running_var + (1 - _BN_MOMENTUM) * var
            else:
                mu, var = bn.running_mean, bn.running_var
            inv_std = 1.0 / np.sqrt(var + _BN_EPS)
            xhat = (z - mu) * inv_std
            zn = bn.gamma * xhat + bn.beta
            bn_cache = (xhat, inv_std)
        else:
            zn = z
        out = _activate(layer.activation, zn) if layer.activation else zn
        if want_cache:
            cache.append((A, zn, bn_cache))
        A = out
    return (A, cache) if want_cache else A


def mlp_forward(model: MlpModel, X, training_mode: bool = False) -> np.ndarray:
    """Predictions as a flat vector; never mutates running statistics."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValidationError(f"expected (n, {model.input_dim}) inputs, got {X.shape}")
    return _forward(model, X, training_mode, update_running=False, want_cache=False)[:, 0]


def _loss_and_grads(model: MlpModel, X, y, training: bool, update_running: bool):
    """Objective (MSE + L2) and gradients for every parameter array."""
    pred, cache = _forward(model, X, training, update_running, want_cache=True)
    err = pred[:, 0] - y
    n = len(y)
    l2 = model.config.l2_penalty
    loss = float(np.mean(err ** 2))
    grads = []
    dA = (2.0 / n) * err[:, None]
    for layer, (A_prev, zn, bn_cache) in zip(reversed(model.layers), reversed(cache)):
        dZn = dA * _activate_grad(layer.activation, zn) if layer.activation else dA
        g = {}
        if layer.bn is not None:
            xhat, inv_std = bn_cache
            g["gamma"] = (dZn * xhat).sum(axis=0)
            g["beta"] = dZn.sum(axis=0)
            dxhat = dZn * layer.bn.gamma
            b = len(X)
            dZ = (inv_std / b) * (
                b * dxhat
                - dxhat.sum(axis=0)
                - xhat * (dxhat * xhat).sum(axis=0)
            )
        else:
            dZ = dZn
        g["weights"] = A_prev.T @ dZ + 2.0 * l2 * layer.weights
        g["bias"] = dZ.sum(axis=0)
        grads.append(g)
        dA = dZ @ layer.weights.T
    grads.reverse()
    if l2 > 0:
        loss += l2 * sum(float((layer.weights ** 2).sum()) for layer in model.layers)
    return loss, grads


def mlp_train(model: MlpModel, train, config: MlpConfig | None = None):
    """Mini-batch Adam on MSE + L2; returns (model, per-epoch loss curve).

    `train` is a FeatureMatrix or an (X, y) tuple; features should already
    be standardized. The loss curve is the full-train objective after each
    epoch, evaluated with batch statistics but without touching the running
    averages. Raises TrainingDivergedError on a non-finite loss.
    """
    if config is None:
        config = model.config
    if isinstance(train, tuple):
        X, y = train
    else:
        X, y = train.X, train.y
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValidationError("training data is empty")
    if X.shape[1] != model.input_dim:
        raise ValidationError(f"expected (n, {model.input_dim}) inputs, got {X.shape}")

    rng = child_rng(config.seed, "mlp-train")
    params = _parameter_arrays(model)
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step = 0
    losses: list[float] = []
    n = len(y)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = _loss_and_grads(model, X[idx], y[idx],
                                       training=True, update_running=True)
            step += 1
            flat_grads = _gradient_arrays(model, grads)
            for p, m, v, g in zip(params, m_state, v_state, flat_grads):
                m *= _ADAM_BETA1
                m += (1 - _ADAM_BETA1) * g
                v *= _ADAM_BETA2
                v += (1 - _ADAM_BETA2) * g * g
                mhat = m / (1 - _ADAM_BETA1 ** step)
                vhat = v / (1 - _ADAM_BETA2 ** step)
                p -= config.learning_rate * mhat / (np.sqrt(vhat) + _ADAM_EPS)
        loss, _ = _loss_and_grads(model, X, y, training=True, update_running=False)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, config.learning_rate)
        losses.append(loss)
    return model, losses


def _parameter_arrays(model: MlpModel) -> list[np.ndarray]:
    out = []
    for layer in model.layers:
        out.append(layer.weights)
        out.append(layer.bias)
        if layer.bn is not None:
            out.append(layer.bn.gamma)
            out.append(layer.bn.beta)
    return out


def _gradient_arrays(model: MlpModel, grads: list[dict]) -> list[np.ndarray]:
    out = []
    for layer, g in zip(model.layers, grads):
        out.append(g["weights"])
        out.append(g["bias"])
        if layer.bn is not None:
            out.append(g["gamma"])
            out.append(g["beta"])
    return out


def gradient_check(model: MlpModel, batch, n_params: int = 100,
                   step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks at least `n_params` randomly sampled parameters (all of them on
    small models). Batch norm runs in training mode; running statistics are
    left untouched by the repeated forward passes.
    """
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValidationError("gradient_check needs a non-empty batch")
    _, grads = _loss_and_grads(model, X, y, training=True, update_running=False)
    params = _parameter_arrays(model)
    flat_grads = _gradient_arrays(model, grads)

    sizes = [p.size for p in params]
    total = sum(sizes)
    rng = child_rng(seed, "gradient-check")
    if total <= n_params:
        positions = np.arange(total)
    else:
        positions = np.sort(rng.choice(total, size=n_params, replace=False))
    offsets = np.cumsum([0, *sizes])

    def loss_at() -> float:
        loss, _ = _loss_and_grads(model, X, y, training=True, update_running=False)
        return loss

    max_rel = 0.0
    for pos in positions:
        k = int(np.searchsorted(offsets, pos, side="right")) - 1
        local = int(pos - offsets[k])
        arr = params[k]
        original = arr.flat[local]
        arr.flat[local] = original + step
        up = loss_at()
        arr.flat[local] = original - step
        down = loss_at()
        arr.flat[local] = original
        numeric = (up - down) / (2.0 * step)
        analytic = flat_grads[k].flat[local]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, abs(analytic - numeric) / denom)
    return max_rel


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def mlp_to_dict(model: MlpModel) -> dict:
    layers = []
    for layer in model.layers:
        rec = {
            "shape": list(layer.weights.shape),
            "weights": layer.weights.ravel().tolist(),  # row-major
            "bias": layer.bias.tolist(),
            "activation": layer.activation,
            "bn": None,
        }
        if layer.bn is not None:
            rec["bn"] = {
                "gamma": layer.bn.gamma.tolist(),
                "beta": layer.bn.beta.tolist(),
                "running_mean": layer.bn.running_mean.tolist(),
                "running_var": layer.bn.running_var.tolist(),
            }
        layers.append(rec)
    return {
        "format_version": _SERIAL_VERSION,
        "model_type": "mlp",
        "input_dim": model.input_dim,
        "config": model.config.to_dict(),
        "layers": layers,
    }


def mlp_from_dict(payload: dict) -> MlpModel:
    if payload.get("format_version") != _SERIAL_VERSION:
        raise ValidationError("unsupported model format version")
    cfg_raw = dict(payload["config"])
    config = MlpConfig(
        hidden_layer_sizes=tuple(cfg_raw.pop("hidden_layer_sizes")),
        activations=tuple(cfg_raw.pop("activations")),
        batch_norm=tuple(cfg_raw.pop("batch_norm")),
        **cfg_raw,
    )
    layers = []
    for rec in payload["layers"]:
        shape = tuple(rec["shape"])
        bn = None
        if rec["bn"] is not None:
            bn = BatchNormState(
                gamma=np.array(rec["bn"]["gamma"]),
                beta=np.array(rec["bn"]["beta"]),
                running_mean=np.array(rec["bn"]["running_mean"]),
                running_var=np.array(rec["bn"]["running_var"]),
            )
        layers.append(DenseLayer(
            weights=np.array(rec["weights"]).reshape(shape),
            bias=np.array(rec["bias"]),
            activation=rec["activation"],
            bn=bn,
        ))
    return MlpModel(input_dim=int(payload["input_dim"]), layers=layers, config=config)


def save_mlp(model: MlpModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mlp_to_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_mlp(path) -> MlpModel:
    with open(path, encoding="utf-8") as fh:
        return mlp_from_dict(json.load(fh))
