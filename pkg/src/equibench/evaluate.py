"""Out-of-sample benchmark: one-factor predictions versus the ML roster.

`run_benchmark` builds the feature matrix, holds out the chronologically
last fraction of years, tunes each ML model on an inner sequential
validation split carved from the training years (the test set never leaks
into model selection), retrains the winning configuration on the full
training set, and scores every model on the identical ordered test rows.
The linear-factor model has no hyperparameters and is scored on the same
(asset, year) keys via its fixed estimation conventions.

A failed model never aborts the run; its row is marked failed and the
other rows stand.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import boosting, capm, neuralnet
from .dataset import FundamentalsPanel, MacroPanel, PricePanel
from .errors import ConfigurationError, EquibenchError
from .features import (
    FeatureMatrix,
    SplitDataset,
    build_feature_matrix,
    sequential_split,
    standardize_features,
)
from .hpo import Categorical, Integer, LogUniform, SearchSpace, Uniform, optimize
from .util import child_rng, config_digest

MODEL_NAMES = ("capm", "gbt", "ngboost", "shallow_fnn", "deep_fnn")


def default_gbt_space() -> SearchSpace:
    return {
        "n_estimators": Integer(50, 500),
        "max_depth": Integer(2, 8),
        "learning_rate": LogUniform(0.01, 0.3),
        "l2_leaf_penalty": LogUniform(1e-3, 10.0),
        "subsample_rows": Uniform(0.5, 1.0),
        "subsample_features": Uniform(0.5, 1.0),
    }


def default_ngboost_space() -> SearchSpace:
    return {"n_estimators": Categorical((100, 200, 300, 400, 500))}


def _fnn_space(layer_range: tuple[int, int]) -> SearchSpace:
    return {
        "n_layers": Integer(*layer_range),
        "width": Integer(*neuralnet.PRESET_WIDTH_RANGE),
        "activation": Categorical(("relu", "tanh")),
        "batch_norm": Categorical((False, True)),
        "l2_penalty": LogUniform(1e-6, 1e-2),
        "learning_rate": LogUniform(1e-4, 1e-2),
    }


def default_shallow_fnn_space() -> SearchSpace:
    return _fnn_space(neuralnet.SHALLOW_LAYER_RANGE)


def default_deep_fnn_space() -> SearchSpace:
    return _fnn_space(neuralnet.DEEP_LAYER_RANGE)


def default_spaces() -> dict[str, SearchSpace]:
    return {
        "gbt": default_gbt_space(),
        "ngboost": default_ngboost_space(),
        "shallow_fnn": default_shallow_fnn_space(),
        "deep_fnn": default_deep_fnn_space(),
    }


@dataclass
class BenchmarkSettings:
    """Everything about a benchmark run except the data and the roster.

    Trial budgets default to the published protocol (50 for tree models,
    100 for networks); desk-scale runs usually pass smaller budgets.
    """

    test_fraction: float = 0.30
    window_years: int = 3
    inner_val_fraction: float = 0.20
    hpo_budgets: dict = field(default_factory=lambda: {
        "gbt": 50, "shallow_fnn": 100, "deep_fnn": 100,
    })
    spaces: dict = field(default_factory=default_spaces)
    fnn_epochs: int = 40
    fnn_batch_size: int = 128
    data_source: str = "unspecified"

    def budget_for(self, model_name: str) -> int:
        return int(self.hpo_budgets.get(model_name, 50))


@dataclass(frozen=True)
class EvalPair:
    predictions: np.ndarray
    actuals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "predictions",
                           np.asarray(self.predictions, dtype=np.float64))
        object.__setattr__(self, "actuals",
                           np.asarray(self.actuals, dtype=np.float64))
        p, a = self.predictions, self.actuals
        if p.ndim != 1 or p.shape != a.shape or len(p) == 0:
            raise ConfigurationError(
                f"predictions and actuals must be equal-length non-empty vectors, "
                f"got {p.shape} vs {a.shape}"
            )
        if not (np.isfinite(p).all() and np.isfinite(a).all()):
            raise ConfigurationError("predictions and actuals must be finite")


def mse(pair: EvalPair) -> float:
    """(1/n) * sum of squared prediction errors."""
    diff = pair.predictions - pair.actuals
    return float(np.mean(diff * diff))


@dataclass
class ModelRow:
    model_name: str
    status: str  # "ok" | "failed"
    test_mse: float | None
    n_test_rows: int
    train_duration_s: float
    config_digest: str
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "model_name": self.model_name,
            "status": self.status,
            "test_mse": self.test_mse,
            "n_test_rows": self.n_test_rows,
            "train_duration_s": self.train_duration_s,
            "config_digest": self.config_digest,
            "error": self.error,
        }


@dataclass
class BenchmarkReport:
    rows: list[ModelRow]
    metadata: dict

    @property
    def all_ok(self) -> bool:
        return all(r.status == "ok" for r in self.rows)

    def to_json(self) -> dict:
        return {"metadata": self.metadata, "rows": [r.to_json() for r in self.rows]}

    def render_table(self) -> str:
        lines = [f"{'model':<14} {'test_mse':>12} {'n_test_rows':>12}  status"]
        for r in self.rows:
            shown = f"{r.test_mse:.4f}" if r.test_mse is not None else "-"
            lines.append(f"{r.model_name:<14} {shown:>12} {r.n_test_rows:>12}  {r.status}")
        return "\n".join(lines) + "\n"


def write_report_json(report: BenchmarkReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "test_mse", "n_test_rows"])
        for r in report.rows:
            writer.writerow([
                r.model_name,
                "" if r.test_mse is None else repr(r.test_mse),
                r.n_test_rows,
            ])


# ---------------------------------------------------------------------------
# Per-model training routes
# ---------------------------------------------------------------------------

def _predict_capm(prices, macro, test: FeatureMatrix, window_years: int):
    estimates = capm.capm_predictions(prices, macro, test.keys(), window_years)
    preds = np.array([e.expected_return for e in estimates])
    digest = config_digest({
        "model": "capm", "window_years": window_years,
        "rf_series": capm.RISK_FREE_SERIES, "annualization": "arithmetic",
        "index": "value-weighted",
    })
    return preds, digest


def _gbt_params_from(params: dict, seed: int) -> boosting.GbtParams:
    return boosting.GbtParams(
        n_estimators=int(params["n_estimators"]),
        max_depth=int(params.get("max_depth", 3)),
        learning_rate=float(params.get("learning_rate", 0.1)),
        l2_leaf_penalty=float(params.get("l2_leaf_penalty", 0.0)),
        min_samples_leaf=int(params.get("min_samples_leaf", 5)),
        subsample_rows=float(params.get("subsample_rows", 1.0)),
        subsample_features=float(params.get("subsample_features", 1.0)),
        seed=seed,
    )


def _train_tree_model(model_name: str, split: SplitDataset,
                      settings: BenchmarkSettings, seed: int, history_path=None):
    inner = sequential_split(split.train, settings.inner_val_fraction)
    fit_fn = boosting.gbt_fit if model_name == "gbt" else boosting.ngboost_fit
    fit_seed = int(child_rng(seed, model_name, "fit").integers(2 ** 31))

    def objective(params: dict) -> float:
        model = fit_fn((inner.train.X, inner.train.y), _gbt_params_from(params, fit_seed))
        pair = EvalPair(model.predict(inner.test.X), inner.test.y)
        return mse(pair)

    space = settings.spaces[model_name]
    method = "grid" if model_name == "ngboost" else "tpe"
    hpo_seed = int(child_rng(seed, model_name, "hpo").integers(2 ** 31))
    best, _history = optimize(space, objective, n_trials=settings.budget_for(model_name),
                              method=method, seed=hpo_seed, history_path=history_path)
    final_params = _gbt_params_from(best.params, fit_seed)
    model = fit_fn((split.train.X, split.train.y), final_params)
    preds = model.predict(split.test.X)
    return preds, config_digest({"model": model_name, **final_params.to_dict()}), model


def _mlp_config_from(params: dict, settings: BenchmarkSettings, seed: int) -> neuralnet.MlpConfig:
    width = int(params["width"])
    n_layers = int(params["n_layers"])
    return neuralnet.MlpConfig.build(
        [width] * n_layers,
        activation=str(params.get("activation", "relu")),
        batch_norm=bool(params.get("batch_norm", False)),
        l2_penalty=float(params.get("l2_penalty", 0.0)),
        learning_rate=float(params.get("learning_rate", 1e-3)),
        batch_size=settings.fnn_batch_size,
        epochs=settings.fnn_epochs,
        seed=seed,
    )


def _train_fnn_model(model_name: str, split: SplitDataset,
                     settings: BenchmarkSettings, seed: int, history_path=None):
    inner = standardize_features(sequential_split(split.train, settings.inner_val_fraction))
    fit_seed = int(child_rng(seed, model_name, "fit").integers(2 ** 31))

    def objective(params: dict) -> float:
        config = _mlp_config_from(params, settings, fit_seed)
        model = neuralnet.mlp_init(config, inner.train.n_features)
        model, _losses = neuralnet.mlp_train(model, (inner.train.X, inner.train.y))
        pair = EvalPair(neuralnet.mlp_forward(model, inner.test.X), inner.test.y)
        return mse(pair)

    space = settings.spaces[model_name]
    hpo_seed = int(child_rng(seed, model_name, "hpo").integers(2 ** 31))
    best, _history = optimize(space, objective, n_trials=settings.budget_for(model_name),
                              method="tpe", seed=hpo_seed, history_path=history_path)
    config = _mlp_config_from(best.params, settings, fit_seed)
    full = standardize_features(SplitDataset(train=split.train, test=split.test,
                                             test_fraction=split.test_fraction))
    model = neuralnet.mlp_init(config, full.train.n_features)
    model, _losses = neuralnet.mlp_train(model, (full.train.X, full.train.y))
    preds = neuralnet.mlp_forward(model, full.test.X)
    return preds, config_digest({"model": model_name, **config.to_dict()}), model


def train_and_predict(model_name: str, prices: PricePanel, macro: MacroPanel,
                      split: SplitDataset, settings: BenchmarkSettings, seed: int,
                      history_path=None):
    """Train one roster model and predict the test rows.

    Returns (predictions, config_digest, fitted model or None for capm).
    When history_path is set, HPO trials are appended there as JSONL.
    """
    if model_name == "capm":
        preds, digest = _predict_capm(prices, macro, split.test, settings.window_years)
        return preds, digest, None
    if model_name in ("gbt", "ngboost"):
        return _train_tree_model(model_name, split, settings, seed, history_path)
    if model_name in ("shallow_fnn", "deep_fnn"):
        return _train_fnn_model(model_name, split, settings, seed, history_path)
    raise ConfigurationError(f"unknown model {model_name!r}")


def _score_model(model_name, prices, macro, split, settings, seed,
                 n_test_rows) -> ModelRow:
    t0 = time.perf_counter()
    try:
        preds, digest, _model = train_and_predict(
            model_name, prices, macro, split, settings, seed)
        value = mse(EvalPair(preds, split.test.y))
        return ModelRow(
            model_name=model_name, status="ok", test_mse=value,
            n_test_rows=n_test_rows,
            train_duration_s=time.perf_counter() - t0,
            config_digest=digest,
        )
    except EquibenchError as exc:
        return ModelRow(
            model_name=model_name, status="failed", test_mse=None,
            n_test_rows=n_test_rows,
            train_duration_s=time.perf_counter() - t0,
            config_digest="", error=str(exc),
        )


def run_benchmark(prices: PricePanel, fundamentals: FundamentalsPanel,
                  macro: MacroPanel, roster, seed: int,
                  settings: BenchmarkSettings | None = None,
                  jobs: int = 1) -> BenchmarkReport:
    """Full comparison on one dataset; returns the report.

    Every row is scored against the identical ordered (asset, target_year)
    test keys, asserted by a shared digest in the metadata. With jobs > 1,
    roster models train concurrently (each model's randomness is derived
    independently from the run seed, so results do not depend on
    scheduling); rows are merged back in roster order.
    """
    settings = settings or BenchmarkSettings()
    roster = list(roster)
    unknown = [m for m in roster if m not in MODEL_NAMES]
    if unknown:
        raise ConfigurationError(
            f"unknown models {unknown}; roster must be a subset of {MODEL_NAMES}"
        )
    if not roster:
        raise ConfigurationError("empty model roster")

    matrix = build_feature_matrix(prices, fundamentals, macro, settings.window_years)
    split = sequential_split(matrix, settings.test_fraction)
    if len(split.test) == 0 or len(split.train) == 0:
        raise ConfigurationError(
            f"degenerate split: {len(split.train)} train rows, {len(split.test)} test rows"
        )
    test_keys = [[a, int(y)] for a, y in split.test.keys()]
    keys_digest = config_digest(test_keys)

    n_test = len(split.test)
    if jobs > 1 and len(roster) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(
                lambda name: _score_model(name, prices, macro, split, settings,
                                          seed, n_test),
                roster,
            ))
    else:
        rows = [_score_model(name, prices, macro, split, settings, seed, n_test)
                for name in roster]

    metadata = {
        "seed": int(seed),
        "test_fraction": settings.test_fraction,
        "window_years": settings.window_years,
        "inner_val_fraction": settings.inner_val_fraction,
        "data_source": settings.data_source,
        "n_rows": len(matrix),
        "n_features": matrix.n_features,
        "n_test_rows": len(split.test),
        "test_keys_digest": keys_digest,
        "train_years": [int(y) for y in sorted(set(split.train.target_years.tolist()))],
        "test_years": [int(y) for y in sorted(set(split.test.target_years.tolist()))],
    }
    return BenchmarkReport(rows=rows, metadata=metadata)
