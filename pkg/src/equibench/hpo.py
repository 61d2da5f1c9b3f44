"""Hyperparameter search: exhaustive grid and a tree-structured Parzen
estimator (TPE).

TPE models the conditional densities of parameters given trial quality:
past trials are split at the gamma-quantile of the objective into a
"good" and a "bad" set, each dimension gets a kernel-density model per
set (Gaussian kernels with a Silverman-rule bandwidth; categorical
dimensions use add-one smoothed frequencies), candidates are drawn from
the good model, and the candidate maximizing the good/bad density ratio
is evaluated next. Until `n_startup` trials exist, samples come from the
prior.

Every trial is appended to an optional JSONL history file, and `optimize`
resumes from such a file mid-run with results identical to an
uninterrupted run (per-trial generators are derived from (seed,
trial_index), so the random stream does not depend on how many times the
process restarted).
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EquibenchError

DEFAULT_GAMMA = 0.25
DEFAULT_N_STARTUP = 10
DEFAULT_N_CANDIDATES = 24
_BW_FLOOR_FRACTION = 1e-3


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigurationError(f"uniform bounds need lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ConfigurationError(
                f"log_uniform bounds need 0 < lo < hi, got [{self.lo}, {self.hi}]"
            )


@dataclass(frozen=True)
class Integer:
    lo: int
    hi: int  # inclusive

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigurationError(f"integer bounds need lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Categorical:
    choices: tuple

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        if not self.choices:
            raise ConfigurationError("categorical dimension needs at least one choice")


Dimension = Uniform | LogUniform | Integer | Categorical
SearchSpace = dict[str, Dimension]


@dataclass
class TrialRecord:
    index: int
    params: dict
    objective: float | None
    status: str  # "ok" | "failed"
    duration_s: float = 0.0

    def to_json(self) -> dict:
        return {"index": self.index, "params": self.params,
                "objective": self.objective, "status": self.status,
                "duration_s": self.duration_s}

    @classmethod
    def from_json(cls, payload: dict) -> "TrialRecord":
        return cls(index=int(payload["index"]), params=dict(payload["params"]),
                   objective=payload["objective"], status=str(payload["status"]),
                   duration_s=float(payload.get("duration_s", 0.0)))


# ---------------------------------------------------------------------------
# Sampling primitives
# ---------------------------------------------------------------------------

def sample_prior(space: SearchSpace, rng: np.random.Generator) -> dict:
    """One in-bounds draw from each dimension's prior (dimensions in sorted
    name order so the stream is reproducible)."""
    out = {}
    for name in sorted(space):
        dim = space[name]
        if isinstance(dim, Uniform):
            out[name] = float(rng.uniform(dim.lo, dim.hi))
        elif isinstance(dim, LogUniform):
            out[name] = float(np.exp(rng.uniform(math.log(dim.lo), math.log(dim.hi))))
        elif isinstance(dim, Integer):
            out[name] = int(rng.integers(dim.lo, dim.hi + 1))
        else:
            out[name] = dim.choices[int(rng.integers(len(dim.choices)))]
    return out


def in_bounds(space: SearchSpace, params: dict) -> bool:
    for name, dim in space.items():
        v = params[name]
        if isinstance(dim, (Uniform, LogUniform)):
            if not dim.lo <= v <= dim.hi:
                return False
        elif isinstance(dim, Integer):
            if not (isinstance(v, (int, np.integer)) and dim.lo <= v <= dim.hi):
                return False
        elif v not in dim.choices:
            return False
    return True


def _bandwidth(values: np.ndarray, span: float) -> float:
    n = len(values)
    sigma = float(values.std())
    bw = 1.06 * sigma * n ** (-0.2) if sigma > 0 else 0.0
    return max(bw, _BW_FLOOR_FRACTION * span)


class _NumericKde:
    """Gaussian mixture over observed values, in transformed coordinates."""

    def __init__(self, values: np.ndarray, lo: float, hi: float):
        self.values = values
        self.lo, self.hi = lo, hi
        self.bw = _bandwidth(values, hi - lo)

    def sample(self, rng: np.random.Generator) -> float:
        center = self.values[int(rng.integers(len(self.values)))]
        draw = center + self.bw * rng.normal()
        return float(np.clip(draw, self.lo, self.hi))

    def log_density(self, x: float) -> float:
        z = (x - self.values) / self.bw
        dens = float(np.mean(np.exp(-0.5 * z * z))) / (self.bw * math.sqrt(2 * math.pi))
        return math.log(max(dens, 1e-300))


class _CategoricalModel:
    def __init__(self, values, choices):
        counts = np.array([sum(1 for v in values if v == c) for c in choices], dtype=float)
        self.probs = (counts + 1.0) / (counts.sum() + len(choices))
        self.choices = choices

    def sample(self, rng: np.random.Generator):
        return self.choices[int(rng.choice(len(self.choices), p=self.probs))]

    def log_density(self, x) -> float:
        return math.log(self.probs[self.choices.index(x)])


def _dimension_model(dim: Dimension, raw_values: list):
    if isinstance(dim, Categorical):
        return _CategoricalModel(raw_values, dim.choices)
    if isinstance(dim, LogUniform):
        vals = np.log(np.asarray(raw_values, dtype=np.float64))
        return _NumericKde(vals, math.log(dim.lo), math.log(dim.hi))
    return _NumericKde(np.asarray(raw_values, dtype=np.float64),
                       float(dim.lo), float(dim.hi))


def _model_sample(dim: Dimension, model, rng) -> object:
    if isinstance(dim, Categorical):
        return model.sample(rng)
    x = model.sample(rng)
    if isinstance(dim, LogUniform):
        return float(np.exp(x))
    if isinstance(dim, Integer):
        return int(np.clip(round(x), dim.lo, dim.hi))
    return float(x)


def _model_log_density(dim: Dimension, model, value) -> float:
    if isinstance(dim, Categorical):
        return model.log_density(value)
    if isinstance(dim, LogUniform):
        return model.log_density(math.log(value))
    return model.log_density(float(value))


def tpe_suggest(history: list[TrialRecord], space: SearchSpace,
                gamma: float = DEFAULT_GAMMA,
                n_candidates: int = DEFAULT_N_CANDIDATES,
                rng: np.random.Generator | None = None,
                n_startup: int = DEFAULT_N_STARTUP) -> dict:
    """Next parameter point given the trial history.

    Prior sample during startup; afterwards the argmax over `n_candidates`
    draws from the good-set density of the good/bad density ratio.
    """
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError("gamma must be in (0, 1)")
    if rng is None:
        rng = np.random.default_rng()
    ok = [t for t in history if t.status == "ok" and t.objective is not None]
    if len(ok) < n_startup:
        return sample_prior(space, rng)

    ranked = sorted(ok, key=lambda t: t.objective)
    n_good = max(1, math.ceil(gamma * len(ranked)))
    good, bad = ranked[:n_good], ranked[n_good:]

    names = sorted(space)
    good_models = {n: _dimension_model(space[n], [t.params[n] for t in good]) for n in names}
    bad_models = {n: _dimension_model(space[n], [t.params[n] for t in bad]) for n in names}

    best_params, best_score = None, -math.inf
    for _ in range(n_candidates):
        cand = {n: _model_sample(space[n], good_models[n], rng) for n in names}
        score = sum(
            _model_log_density(space[n], good_models[n], cand[n])
            - _model_log_density(space[n], bad_models[n], cand[n])
            for n in names
        )
        if score > best_score:
            best_params, best_score = cand, score
    return best_params


# ---------------------------------------------------------------------------
# Search drivers
# ---------------------------------------------------------------------------

def _grid_points(space: SearchSpace) -> list[dict]:
    names = sorted(space)
    axes = []
    for name in names:
        dim = space[name]
        if isinstance(dim, Integer):
            axes.append(list(range(dim.lo, dim.hi + 1)))
        elif isinstance(dim, Categorical):
            axes.append(list(dim.choices))
        else:
            raise ConfigurationError(
                f"grid search needs finite dimensions; {name!r} is continuous"
            )
    return [dict(zip(names, combo)) for combo in itertools.product(*axes)]


def _evaluate(objective_fn, index: int, params: dict) -> TrialRecord:
    t0 = time.perf_counter()
    try:
        value = float(objective_fn(params))
        status = "ok" if math.isfinite(value) else "failed"
        objective = value if status == "ok" else None
    except Exception:
        status, objective = "failed", None
    return TrialRecord(index=index, params=params, objective=objective,
                       status=status, duration_s=time.perf_counter() - t0)


def _best_of(history: list[TrialRecord]) -> TrialRecord:
    ok = [t for t in history if t.status == "ok"]
    if not ok:
        raise EquibenchError("every trial failed; nothing to return")
    best = ok[0]
    for t in ok[1:]:
        if t.objective < best.objective:  # strict: ties keep the earlier trial
            best = t
    return best


def grid_search(space: SearchSpace, objective_fn,
                history_path=None) -> tuple[TrialRecord, list[TrialRecord]]:
    """Evaluate every grid point in lexicographic order; return the argmin.

    Failed evaluations are recorded and skipped; it is an error for all of
    them to fail.
    """
    history: list[TrialRecord] = []
    for i, params in enumerate(_grid_points(space)):
        record = _evaluate(objective_fn, i, params)
        history.append(record)
        _persist(history_path, record)
    return _best_of(history), history


def _trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed),
                                                        spawn_key=(index,)))


def _persist(path, record: TrialRecord) -> None:
    if path is None:
        return
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")


def load_history(path) -> list[TrialRecord]:
    records = []
    path = Path(path)
    if not path.exists():
        return records
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(TrialRecord.from_json(json.loads(line)))
    return records


def optimize(space: SearchSpace, objective_fn, n_trials: int,
             method: str = "tpe", seed: int = 0, history_path=None,
             gamma: float = DEFAULT_GAMMA,
             n_candidates: int = DEFAULT_N_CANDIDATES,
             n_startup: int = DEFAULT_N_STARTUP
             ) -> tuple[TrialRecord, list[TrialRecord]]:
    """Run the search loop and return (best trial, full history).

    With `history_path` set, each trial is appended as one JSON line and an
    interrupted run resumes where it stopped. Grid search evaluates the
    whole grid (n_trials does not truncate an exhaustive search).
    """
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    if method == "grid":
        return grid_search(space, objective_fn, history_path=history_path)
    if method != "tpe":
        raise ConfigurationError(f"unknown search method {method!r}")

    history = load_history(history_path) if history_path else []
    if len(history) > n_trials:
        history = history[:n_trials]
    for i in range(len(history), n_trials):
        rng = _trial_rng(seed, i)
        params = tpe_suggest(history, space, gamma=gamma,
                             n_candidates=n_candidates, rng=rng,
                             n_startup=n_startup)
        record = _evaluate(objective_fn, i, params)
        history.append(record)
        _persist(history_path, record)
    return _best_of(history), history
