"""Supervised dataset construction with a strict no-look-ahead guarantee.

One row per (asset, target_year): the target is the compounded 12-month
return of the target year, and every feature is computed from data whose
timestamp falls strictly before the target year starts. For each of the
`window_years` prior years the recipe emits the asset's annual return,
mean monthly volume and year-end price, every fundamentals line item, a
set of fundamentals ratios, and each macro series' annual level (mean of
its 12 months) and within-year change (December minus January). The
default schema lands at ~200 features for a 3-year window.

Rows with any missing ingredient are dropped, never imputed. The
`audit_leakage` operation re-derives every row from panels truncated at
the target-year boundary and flags any mismatch, so a feature that ever
touched future data cannot survive the audit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .dataset import (
    MONTHS_PER_YEAR,
    FundamentalsPanel,
    MacroPanel,
    PricePanel,
)
from .errors import ValidationError

#: name -> (numerator item, denominator item); skipped when the loaded
#: panel lacks either item.
RATIO_DEFINITIONS = {
    "profit_margin": ("net_income", "revenue"),
    "operating_margin": ("ebit", "revenue"),
    "leverage": ("total_debt", "total_assets"),
    "current_ratio": ("current_assets", "current_liabilities"),
    "return_on_assets": ("net_income", "total_assets"),
    "return_on_equity": ("net_income", "total_equity"),
    "ocf_to_debt": ("operating_cash_flow", "total_debt"),
    "capex_intensity": ("capex", "revenue"),
    "debt_to_equity": ("total_debt", "total_equity"),
    "asset_turnover": ("revenue", "total_assets"),
}

DEFAULT_WINDOW_YEARS = 3


@dataclass(eq=False)
class FeatureMatrix:
    """Dense (asset, target_year) rows; ordering is (asset_id, target_year)."""

    asset_ids: tuple[str, ...]
    target_years: np.ndarray
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    window_years: int
    dropped_missing: int = 0

    def __post_init__(self):
        self.target_years = np.asarray(self.target_years, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        n = len(self.asset_ids)
        if self.X.shape != (n, len(self.feature_names)) or len(self.y) != n \
                or len(self.target_years) != n:
            raise ValidationError("feature matrix arrays are inconsistently shaped")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def keys(self) -> list[tuple[str, int]]:
        return list(zip(self.asset_ids, self.target_years.tolist()))

    def take(self, mask_or_index) -> "FeatureMatrix":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.nonzero(idx)[0]
        return FeatureMatrix(
            asset_ids=tuple(self.asset_ids[i] for i in idx),
            target_years=self.target_years[idx],
            X=self.X[idx],
            y=self.y[idx],
            feature_names=self.feature_names,
            window_years=self.window_years,
            dropped_missing=0,
        )


@dataclass(eq=False)
class FeatureScaler:
    """Per-column affine transform fitted on training rows only."""

    means: np.ndarray
    stds: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = X - self.means
        nz = self.stds > 0
        out[:, nz] /= self.stds[nz]
        out[:, ~nz] = 0.0  # zero-variance columns carry no information
        return out


@dataclass(eq=False)
class SplitDataset:
    train: FeatureMatrix
    test: FeatureMatrix
    test_fraction: float
    standardized: bool = False
    scaler: FeatureScaler | None = None


# ---------------------------------------------------------------------------
# Per-panel aggregate tables (shared by the builder and the audit)
# ---------------------------------------------------------------------------

class _PriceStats:
    """Per-asset annual aggregates over the complete years of a price panel."""

    def __init__(self, prices: PricePanel):
        self.annual_return: dict[str, dict[int, float]] = {}
        self.mean_volume: dict[str, dict[int, float]] = {}
        self.year_end_price: dict[str, dict[int, float]] = {}
        for aid, sl in prices.asset_index.items():
            months = prices.months[sl]
            m0, m1 = int(months[0]), int(months[-1])
            growth = np.cumprod(1.0 + prices.monthly_returns[sl])
            ret: dict[int, float] = {}
            vol: dict[int, float] = {}
            yep: dict[int, float] = {}
            y_first = -(-m0 // MONTHS_PER_YEAR)
            y_last = (m1 + 1) // MONTHS_PER_YEAR - 1
            for y in range(y_first, y_last + 1):
                a = y * MONTHS_PER_YEAR - m0
                b = a + MONTHS_PER_YEAR
                # prefix-product ratio keeps the audit's truncated recompute
                # bit-identical to the full build
                ret[y] = float(growth[b - 1] / growth[a - 1]) - 1.0 if a > 0 \
                    else float(growth[b - 1]) - 1.0
                vol[y] = float(prices.volumes[sl][a:b].mean())
                yep[y] = float(prices.prices[sl][a + MONTHS_PER_YEAR - 1])
            self.annual_return[aid] = ret
            self.mean_volume[aid] = vol
            self.year_end_price[aid] = yep


class _MacroStats:
    """Annual level (mean) and within-year change per macro series."""

    def __init__(self, macro: MacroPanel):
        self.level: dict[str, dict[int, float]] = {}
        self.change: dict[str, dict[int, float]] = {}
        months = macro.months
        if len(months) == 0:
            for name in macro.series:
                self.level[name] = {}
                self.change[name] = {}
            return
        m0, m1 = int(months[0]), int(months[-1])
        y_first = -(-m0 // MONTHS_PER_YEAR)
        y_last = (m1 + 1) // MONTHS_PER_YEAR - 1
        for name, values in macro.series.items():
            lv: dict[int, float] = {}
            ch: dict[int, float] = {}
            for y in range(y_first, y_last + 1):
                a = y * MONTHS_PER_YEAR - m0
                lv[y] = float(values[a:a + MONTHS_PER_YEAR].mean())
                ch[y] = float(values[a + MONTHS_PER_YEAR - 1] - values[a])
            self.level[name] = lv
            self.change[name] = ch


class _FundStats:
    def __init__(self, fundamentals: FundamentalsPanel):
        self.items = fundamentals.items
        self.item_names = fundamentals.item_names
        self.lookup = fundamentals.row_lookup
        self.ratios = {
            name: pair for name, pair in RATIO_DEFINITIONS.items()
            if pair[0] in fundamentals.items and pair[1] in fundamentals.items
        }

    def value(self, aid: str, year: int, item: str) -> float:
        row = self.lookup.get((aid, year))
        return float(self.items[item][row]) if row is not None else np.nan

    def ratio(self, aid: str, year: int, name: str) -> float:
        num_item, den_item = self.ratios[name]
        num = self.value(aid, year, num_item)
        den = self.value(aid, year, den_item)
        if den == 0.0 or np.isnan(den) or np.isnan(num):
            return np.nan
        return num / den


def feature_schema(fundamentals: FundamentalsPanel, macro: MacroPanel,
                   window_years: int) -> tuple[str, ...]:
    """Ordered feature names for the given panels and window."""
    names: list[str] = []
    ratios = [n for n, pair in RATIO_DEFINITIONS.items()
              if pair[0] in fundamentals.items and pair[1] in fundamentals.items]
    for k in range(1, window_years + 1):
        names.append(f"annual_return_lag{k}")
        names.append(f"mean_volume_lag{k}")
        names.append(f"year_end_price_lag{k}")
        names.extend(f"{item}_lag{k}" for item in fundamentals.item_names)
        names.extend(f"{r}_lag{k}" for r in ratios)
        for s in macro.series_names:
            names.append(f"{s}_level_lag{k}")
            names.append(f"{s}_change_lag{k}")
    return tuple(names)


def _assemble_row(aid: str, target_year: int, window_years: int,
                  price_stats: _PriceStats, fund_stats: _FundStats,
                  macro_stats: _MacroStats) -> np.ndarray | None:
    """Feature vector for one (asset, target_year), or None if anything
    required is missing. Uses only years strictly before target_year."""
    values: list[float] = []
    ar = price_stats.annual_return.get(aid)
    if ar is None:
        return None
    mv = price_stats.mean_volume[aid]
    yep = price_stats.year_end_price[aid]
    for k in range(1, window_years + 1):
        y = target_year - k
        if y not in ar:
            return None
        values.append(ar[y])
        values.append(mv[y])
        values.append(yep[y])
        for item in fund_stats.item_names:
            values.append(fund_stats.value(aid, y, item))
        for r in fund_stats.ratios:
            values.append(fund_stats.ratio(aid, y, r))
        for s in macro_stats.level:
            lv = macro_stats.level[s].get(y)
            ch = macro_stats.change[s].get(y)
            if lv is None or ch is None:
                return None
            values.append(lv)
            values.append(ch)
    vec = np.array(values, dtype=np.float64)
    if np.isnan(vec).any():
        return None
    return vec


def build_feature_matrix(prices: PricePanel, fundamentals: FundamentalsPanel,
                         macro: MacroPanel, window_years: int = DEFAULT_WINDOW_YEARS
                         ) -> FeatureMatrix:
    """One row per (asset, target_year) with complete lagged history.

    The target is the compounded return over the target year's 12 months;
    incomplete rows are dropped and counted in `dropped_missing`.
    """
    if window_years < 1:
        raise ValidationError("window_years must be >= 1")
    if len(prices) == 0 or len(fundamentals) == 0 or len(macro) == 0:
        raise ValidationError("cannot build features from empty panels")

    price_stats = _PriceStats(prices)
    fund_stats = _FundStats(fundamentals)
    macro_stats = _MacroStats(macro)
    names = feature_schema(fundamentals, macro, window_years)

    rows_assets: list[str] = []
    rows_years: list[int] = []
    rows_x: list[np.ndarray] = []
    rows_y: list[float] = []
    dropped = 0
    for aid in sorted(price_stats.annual_return):
        ar = price_stats.annual_return[aid]
        if not ar:
            continue
        years = sorted(ar)
        for target_year in years:
            if target_year - window_years < years[0]:
                continue  # no full lag window inside this asset's history
            vec = _assemble_row(aid, target_year, window_years,
                                price_stats, fund_stats, macro_stats)
            if vec is None:
                dropped += 1
                continue
            rows_assets.append(aid)
            rows_years.append(target_year)
            rows_x.append(vec)
            rows_y.append(ar[target_year])

    if not rows_x:
        X = np.empty((0, len(names)))
        y = np.empty(0)
    else:
        X = np.vstack(rows_x)
        y = np.array(rows_y)
    return FeatureMatrix(
        asset_ids=tuple(rows_assets),
        target_years=np.array(rows_years, dtype=np.int64),
        X=X,
        y=y,
        feature_names=names,
        window_years=window_years,
        dropped_missing=dropped,
    )


# ---------------------------------------------------------------------------
# Leakage audit
# ---------------------------------------------------------------------------

def _truncate_panels(prices: PricePanel, fundamentals: FundamentalsPanel,
                     macro: MacroPanel, cutoff_month: int):
    """Copies of the panels containing only data strictly before cutoff_month."""
    kept_rows: list[int] = []
    for aid, sl in prices.asset_index.items():
        months = prices.months[sl]
        n_keep = int((months < cutoff_month).sum())
        kept_rows.extend(range(sl.start, sl.start + n_keep))
    idx = np.array(kept_rows, dtype=np.int64)
    p = PricePanel(
        asset_ids=tuple(prices.asset_ids[i] for i in kept_rows),
        months=prices.months[idx],
        prices=prices.prices[idx],
        monthly_returns=prices.monthly_returns[idx],
        volumes=prices.volumes[idx],
        shares_outstanding=prices.shares_outstanding[idx],
    )
    cutoff_year = cutoff_month // MONTHS_PER_YEAR
    fmask = fundamentals.fiscal_years < cutoff_year
    f = FundamentalsPanel(
        asset_ids=tuple(a for a, keep in zip(fundamentals.asset_ids, fmask) if keep),
        fiscal_years=fundamentals.fiscal_years[fmask],
        items={k: v[fmask] for k, v in fundamentals.items.items()},
    )
    mmask = macro.months < cutoff_month
    m = MacroPanel(months=macro.months[mmask],
                   series={k: v[mmask] for k, v in macro.series.items()})
    return p, f, m


def audit_leakage(matrix: FeatureMatrix, prices: PricePanel,
                  fundamentals: FundamentalsPanel, macro: MacroPanel) -> dict:
    """Re-derive every row from panels truncated at its target-year boundary.

    Any feature value that cannot be reproduced from strictly-prior data is
    a leakage violation. Returns the audit report dict (also JSON-ready).
    """
    violations: list[dict] = []
    for year in sorted(set(matrix.target_years.tolist())):
        cutoff = year * MONTHS_PER_YEAR
        tp, tf, tm = _truncate_panels(prices, fundamentals, macro, cutoff)
        price_stats = _PriceStats(tp)
        fund_stats = _FundStats(tf)
        macro_stats = _MacroStats(tm)
        for i in np.nonzero(matrix.target_years == year)[0]:
            aid = matrix.asset_ids[i]
            vec = _assemble_row(aid, year, matrix.window_years,
                                price_stats, fund_stats, macro_stats)
            stored = matrix.X[i]
            if vec is None:
                violations.append({
                    "asset_id": aid, "target_year": int(year),
                    "feature": None,
                    "detail": "row not reproducible from pre-target data",
                })
                continue
            if not np.array_equal(vec, stored):
                j = int(np.nonzero(vec != stored)[0][0])
                violations.append({
                    "asset_id": aid, "target_year": int(year),
                    "feature": matrix.feature_names[j],
                    "detail": f"stored {stored[j]!r} != recomputed {vec[j]!r}",
                })
    return {
        "rows": len(matrix),
        "dropped_missing": matrix.dropped_missing,
        "leakage_violations": len(violations),
        "violations": violations,
    }


def write_audit_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Split and standardization
# ---------------------------------------------------------------------------

def sequential_split(matrix: FeatureMatrix, test_fraction: float) -> SplitDataset:
    """Hold out the chronologically last years whose cumulative row share
    first reaches test_fraction; no year straddles the boundary."""
    if not 0.0 <= test_fraction <= 1.0:
        raise ValidationError("test_fraction must be in [0, 1]")
    if len(matrix) == 0:
        raise ValidationError("cannot split an empty feature matrix")
    years, counts = np.unique(matrix.target_years, return_counts=True)
    total = counts.sum()
    cum = 0
    boundary = len(years)  # first index belonging to the test side
    while boundary > 0:
        if cum / total >= test_fraction:
            break
        cum += counts[boundary - 1]
        boundary -= 1
    test_years = set(years[boundary:].tolist())
    mask = np.array([y in test_years for y in matrix.target_years.tolist()])
    return SplitDataset(
        train=matrix.take(~mask),
        test=matrix.take(mask),
        test_fraction=test_fraction,
    )


def standardize_features(split: SplitDataset) -> SplitDataset:
    """Zero-mean unit-variance columns using train statistics only.

    Zero-variance columns become 0. Applying the transform twice would
    silently recenter on the test side, so a standardized split refuses a
    second pass.
    """
    if split.standardized:
        raise ValidationError("split is already standardized; refusing a second pass")
    if len(split.train) == 0:
        raise ValidationError("cannot standardize with an empty training set")
    means = split.train.X.mean(axis=0)
    stds = split.train.X.std(axis=0)
    scaler = FeatureScaler(means=means, stds=stds)
    train = replace(split.train, X=scaler.transform(split.train.X.copy()))
    test = split.test
    if len(test):
        test = replace(test, X=scaler.transform(test.X.copy()))
    return SplitDataset(train=train, test=test, test_fraction=split.test_fraction,
                        standardized=True, scaler=scaler)


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def write_features_csv(matrix: FeatureMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["asset_id", "target_year", "target", *matrix.feature_names])
        for i in range(len(matrix)):
            writer.writerow([
                matrix.asset_ids[i], int(matrix.target_years[i]),
                repr(float(matrix.y[i])),
                *(repr(float(v)) for v in matrix.X[i]),
            ])


def read_features_csv(path) -> FeatureMatrix:
    """Reload an exported matrix; the window is inferred from the lag names."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["asset_id", "target_year", "target"]:
            raise ValidationError(f"{path}: not a features.csv export")
        names = tuple(header[3:])
        assets: list[str] = []
        years: list[int] = []
        ys: list[float] = []
        xs: list[list[float]] = []
        for row in reader:
            if not row:
                continue
            assets.append(row[0])
            years.append(int(row[1]))
            ys.append(float(row[2]))
            xs.append([float(v) for v in row[3:]])
    window = max((int(n.rsplit("_lag", 1)[1]) for n in names if "_lag" in n), default=1)
    return FeatureMatrix(
        asset_ids=tuple(assets),
        target_years=np.array(years, dtype=np.int64),
        X=np.array(xs) if xs else np.empty((0, len(names))),
        y=np.array(ys),
        feature_names=names,
        window_years=window,
    )
