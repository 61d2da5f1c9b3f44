"""Model explanations: exact Shapley attributions and permutation importance.

`shapley_exact` enumerates all coalitions of the attributed features (hard
cap 2^15 evaluations) with absent features marginalized by averaging over
a background set; it is model-agnostic and satisfies efficiency, dummy,
and symmetry by construction. For full ~200-feature models the ranking
comes from permutation importance instead, and Shapley runs on a chosen
top subset for local explanations.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError
from .util import child_rng

MAX_EXACT_FEATURES = 15
EFFICIENCY_TOL = 1e-9


@dataclass(frozen=True)
class Attribution:
    """Per-feature contributions for one row.

    base_value is the mean prediction over the background set and
    base_value + phi.sum() equals `prediction` (the value of the full
    coalition; the model's own prediction of the row when every feature is
    attributed).
    """

    base_value: float
    phi: np.ndarray
    prediction: float
    feature_names: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "base_value": self.base_value,
            "prediction": self.prediction,
            "phi": {name: float(v) for name, v in zip(self.feature_names, self.phi)},
        }


@dataclass(frozen=True)
class ImportanceEntry:
    feature_name: str
    importance: float       # clipped at zero for ranking
    raw_importance: float   # unclipped mean metric degradation


@dataclass(frozen=True)
class ImportanceRanking:
    entries: tuple[ImportanceEntry, ...]  # sorted descending by importance

    def __len__(self) -> int:
        return len(self.entries)

    def top(self, k: int) -> tuple[ImportanceEntry, ...]:
        return self.entries[:max(0, k)]


def shapley_exact(predict_fn, row, background_rows,
                  feature_subset=None,
                  feature_names: tuple[str, ...] | None = None) -> Attribution:
    """Exact Shapley attribution of `row`'s prediction over a feature subset.

    predict_fn maps an (n, d) matrix to n predictions. The coalition value
    v(S) is the mean prediction over background rows with the features in S
    replaced by the row's values; features outside `feature_subset`
    (indices; default all) stay marginalized at background values.
    """
    row = np.asarray(row, dtype=np.float64).ravel()
    background = np.asarray(background_rows, dtype=np.float64)
    if background.ndim != 2 or background.shape[0] == 0:
        raise ValidationError("background_rows must be a non-empty (n, d) matrix")
    if background.shape[1] != row.size:
        raise ValidationError("row and background dimensions differ")
    if feature_subset is None:
        feature_subset = list(range(row.size))
    subset = [int(i) for i in feature_subset]
    d = len(subset)
    if d == 0:
        raise ConfigurationError("feature_subset must not be empty")
    if d > MAX_EXACT_FEATURES:
        raise ConfigurationError(
            f"exact Shapley enumerates 2^{d} coalitions; cap is {MAX_EXACT_FEATURES} "
            f"features. Use permutation_importance for wide models."
        )
    if feature_names is None:
        feature_names = tuple(f"feature_{i}" for i in subset)
    else:
        feature_names = tuple(feature_names)
        if len(feature_names) != d:
            raise ValidationError("feature_names must align with feature_subset")

    cols = np.array(subset)
    values = np.empty(1 << d)
    for mask in range(1 << d):
        hybrid = background.copy()
        if mask:
            on = cols[[i for i in range(d) if mask >> i & 1]]
            hybrid[:, on] = row[on]
        values[mask] = float(np.mean(predict_fn(hybrid)))

    fact = [math.factorial(k) for k in range(d + 1)]
    weights = [fact[s] * fact[d - s - 1] / fact[d] for s in range(d)]
    phi = np.zeros(d)
    for mask in range(1 << d):
        size = mask.bit_count()
        w = weights[size] if size < d else 0.0
        for i in range(d):
            if not mask >> i & 1:
                phi[i] += w * (values[mask | (1 << i)] - values[mask])

    base = values[0]
    prediction = values[(1 << d) - 1]
    gap = abs(base + phi.sum() - prediction)
    if gap > EFFICIENCY_TOL:
        raise AssertionError(f"efficiency violated by {gap:g}; numerically unstable predict_fn?")
    return Attribution(base_value=float(base), phi=phi,
                       prediction=float(prediction), feature_names=feature_names)


def permutation_importance(predict_fn, test, n_repeats: int = 5,
                           seed: int = 0) -> ImportanceRanking:
    """Mean MSE degradation per feature when its column is shuffled.

    `test` is a FeatureMatrix (attributes X, y, feature_names). Negative
    values are clipped to zero in the ranking; the raw mean is retained.
    """
    if n_repeats < 1:
        raise ConfigurationError("n_repeats must be >= 1")
    X = np.asarray(test.X, dtype=np.float64)
    y = np.asarray(test.y, dtype=np.float64)
    names = tuple(test.feature_names)
    rng = child_rng(seed, "permutation-importance")
    baseline = float(np.mean((predict_fn(X) - y) ** 2))
    raw = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        acc = 0.0
        for _ in range(n_repeats):
            order = rng.permutation(len(X))
            shuffled = X.copy()
            shuffled[:, j] = X[order, j]
            acc += float(np.mean((predict_fn(shuffled) - y) ** 2)) - baseline
        raw[j] = acc / n_repeats
    entries = [
        ImportanceEntry(feature_name=names[j],
                        importance=max(0.0, float(raw[j])),
                        raw_importance=float(raw[j]))
        for j in range(X.shape[1])
    ]
    entries.sort(key=lambda e: -e.importance)
    return ImportanceRanking(entries=tuple(entries))


def ranking_from_attributions(attributions: list[Attribution]) -> ImportanceRanking:
    """Mean |phi| ranking across locally explained rows."""
    if not attributions:
        raise ValidationError("need at least one attribution")
    names = attributions[0].feature_names
    stack = np.vstack([a.phi for a in attributions])
    mean_abs = np.abs(stack).mean(axis=0)
    entries = [ImportanceEntry(n, float(v), float(v)) for n, v in zip(names, mean_abs)]
    entries.sort(key=lambda e: -e.importance)
    return ImportanceRanking(entries=tuple(entries))


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

_SVG_WIDTH = 640
_BAR_HEIGHT = 18
_ROW_HEIGHT = 26
_LABEL_WIDTH = 230
_MARGIN = 12


def importance_report(ranking: ImportanceRanking, top_k: int = 10) -> tuple[str, str]:
    """(plain-text table, SVG bar chart) of the top_k features.

    Output bytes are a pure function of the ranking, so repeated runs
    produce identical artifacts.
    """
    if top_k < 1:
        raise ConfigurationError("top_k must be >= 1")
    rows = ranking.top(top_k)
    name_w = max([len(e.feature_name) for e in rows] + [7])
    lines = [f"{'rank':>4}  {'feature':<{name_w}}  importance"]
    for rank, e in enumerate(rows, start=1):
        lines.append(f"{rank:>4}  {e.feature_name:<{name_w}}  {e.importance:.6g}")
    table = "\n".join(lines) + "\n"

    height = 2 * _MARGIN + _ROW_HEIGHT * len(rows)
    scale = max((e.importance for e in rows), default=0.0)
    bar_span = _SVG_WIDTH - _LABEL_WIDTH - 90
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_WIDTH}" height="{height}" '
        f'font-family="monospace" font-size="12">',
        f'<rect x="0" y="0" width="{_SVG_WIDTH}" height="{height}" fill="white"/>',
    ]
    for i, e in enumerate(rows):
        y = _MARGIN + i * _ROW_HEIGHT
        frac = e.importance / scale if scale > 0 else 0.0
        bar = max(1, int(round(frac * bar_span)))
        parts.append(
            f'<text x="{_MARGIN}" y="{y + 13}">{_svg_escape(e.feature_name)}</text>'
        )
        parts.append(
            f'<rect x="{_LABEL_WIDTH}" y="{y}" width="{bar}" height="{_BAR_HEIGHT}" '
            f'fill="#4878cf"/>'
        )
        parts.append(
            f'<text x="{_LABEL_WIDTH + bar + 6}" y="{y + 13}">{e.importance:.4g}</text>'
        )
    parts.append("</svg>")
    return table, "\n".join(parts) + "\n"


def _svg_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_importance_csv(ranking: ImportanceRanking, path, top_k: int | None = None) -> None:
    rows = ranking.entries if top_k is None else ranking.top(top_k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "feature", "importance"])
        for rank, e in enumerate(rows, start=1):
            writer.writerow([rank, e.feature_name, repr(e.importance)])


def write_attribution_json(attribution: Attribution, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(attribution.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
