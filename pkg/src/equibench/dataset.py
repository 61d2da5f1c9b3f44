"""Raw panel data model: CSV ingestion, validation, synthetic generation.

Three tables drive everything downstream: monthly prices, annual
fundamentals, and monthly macro series. A month is a plain integer index
(months since an arbitrary epoch month 0) and a year is ``month // 12``;
no calendar arithmetic anywhere.

The synthetic generator produces a world with a known one-factor return
process plus an optional nonlinear component driven by lagged fundamentals
and one macro series, so that tree/network models have signal a
single-factor linear model cannot capture. With ``noise_scale=0`` and
``nonlinear_amplitude=0`` the world degenerates to an exact one-factor
equilibrium: the value-weighted index reproduces the latent market factor
and every asset's regression beta equals its configured beta.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import CsvFormatError, ValidationError
from .util import child_rng

MONTHS_PER_YEAR = 12

#: Annual fundamentals line items emitted by the synthetic generator, in
#: CSV column order. Loaded files may carry any item set; this is the
#: default schema.
FUNDAMENTAL_ITEMS = (
    "revenue",
    "cogs",
    "gross_profit",
    "ebit",
    "ebitda",
    "net_income",
    "total_assets",
    "current_assets",
    "cash",
    "inventory",
    "accounts_receivable",
    "goodwill",
    "intangible_assets",
    "total_debt",
    "long_term_debt",
    "short_term_debt",
    "current_liabilities",
    "accounts_payable",
    "total_equity",
    "retained_earnings",
    "operating_cash_flow",
    "investing_cash_flow",
    "financing_cash_flow",
    "capex",
    "dividends_paid",
    "depreciation_amortization",
    "interest_expense",
    "tax_expense",
    "rnd_expense",
    "sga_expense",
)

#: Monthly macro series emitted by the synthetic generator. Parameters are
#: (base level, AR(1) persistence, innovation scale); innovations are
#: multiplied by the config noise_scale so a zero-noise world has constant
#: macro series (in particular a constant risk-free proxy).
MACRO_PROCESSES = {
    "cpi": (120.0, 0.95, 0.40),
    "gdp": (18000.0, 0.94, 80.0),
    "treasury_10y_yield": (0.03, 0.94, 0.0015),
    "wholesale_price_index": (110.0, 0.94, 0.90),
    "industrial_price_index": (105.0, 0.95, 0.80),
    "unemployment": (0.055, 0.94, 0.002),
    "treasury_3m_yield": (0.02, 0.93, 0.0015),
    "consumer_confidence": (95.0, 0.90, 3.0),
    "oil_price": (65.0, 0.93, 3.2),
    "credit_spread": (0.02, 0.93, 0.0012),
    "pmi": (52.0, 0.88, 1.6),
    "equity_volatility": (0.18, 0.85, 0.015),
}
MACRO_SERIES = tuple(MACRO_PROCESSES)

# Generator constants for the return process.
RF_ANNUAL = 0.03
MARKET_PREMIUM_ANNUAL = 0.05
MARKET_VOL_MONTHLY = 0.02
IDIO_VOL_MONTHLY = 0.015
SEASONAL_AMPLITUDE = 0.004  # deterministic 12-month cycle; zero-sum over any year

# Nonlinear component: threshold-and-interaction terms of two fundamentals
# ratios (profit margin, leverage) and one macro series (the within-year
# change of the industrial price index), all lagged one year. These are the
# three raw drivers a feature matrix with window >= 1 exposes directly.
NONLINEAR_DRIVER_FEATURES = (
    "profit_margin_lag1",
    "leverage_lag1",
    "industrial_price_index_change_lag1",
)
_MARGIN_CENTER = 0.08
_LEVERAGE_THRESHOLD = 0.45
_NONLINEAR_SPEC = (
    "annual_extra_return[asset,y] = amplitude * ("
    "1.2*tanh(6*(profit_margin[y-1] - 0.08))"
    " + 0.5 * 1{leverage[y-1] > 0.45} * tanh(1.5*d_industrial_price_index[y-1])"
    " - 0.25 * 1{leverage[y-1] > 0.45})"
    "; d_ = Dec minus Jan level of year y-1; zero in the first year"
)

PRICE_HEADER = ("asset_id", "month", "price", "monthly_return", "volume", "shares_outstanding")
RETURN_CONSISTENCY_TOL = 1e-9


@dataclass(eq=False)
class PricePanel:
    """Monthly price rows, sorted by (asset_id, month), read-only after init.

    Months are contiguous per asset and monthly_return at month t matches
    price_t / price_{t-1} - 1 to 1e-9 wherever both prices exist.
    """

    asset_ids: tuple[str, ...]
    months: np.ndarray
    prices: np.ndarray
    monthly_returns: np.ndarray
    volumes: np.ndarray
    shares_outstanding: np.ndarray

    def __post_init__(self):
        self.months = np.asarray(self.months, dtype=np.int64)
        for name in ("prices", "monthly_returns", "volumes", "shares_outstanding"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        _validate_price_panel(self)
        for arr in (self.months, self.prices, self.monthly_returns, self.volumes,
                    self.shares_outstanding):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.months)

    @cached_property
    def asset_index(self) -> dict[str, slice]:
        """Row slice per asset (rows are sorted by asset, then month)."""
        out: dict[str, slice] = {}
        ids = self.asset_ids
        start = 0
        for i in range(1, len(ids) + 1):
            if i == len(ids) or ids[i] != ids[start]:
                out[ids[start]] = slice(start, i)
                start = i
        return out


@dataclass(eq=False)
class FundamentalsPanel:
    """Annual accounting line items; NaN encodes a missing (null) value."""

    asset_ids: tuple[str, ...]
    fiscal_years: np.ndarray
    items: dict[str, np.ndarray]

    def __post_init__(self):
        self.fiscal_years = np.asarray(self.fiscal_years, dtype=np.int64)
        self.items = {k: np.asarray(v, dtype=np.float64) for k, v in self.items.items()}
        _validate_fundamentals_panel(self)
        self.fiscal_years.setflags(write=False)
        for arr in self.items.values():
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.fiscal_years)

    @property
    def item_names(self) -> tuple[str, ...]:
        return tuple(self.items)

    @cached_property
    def row_lookup(self) -> dict[tuple[str, int], int]:
        years = self.fiscal_years.tolist()
        return {(a, y): i for i, (a, y) in enumerate(zip(self.asset_ids, years))}


@dataclass(eq=False)
class MacroPanel:
    """One row per month, months contiguous; arbitrary named series."""

    months: np.ndarray
    series: dict[str, np.ndarray]

    def __post_init__(self):
        self.months = np.asarray(self.months, dtype=np.int64)
        self.series = {k: np.asarray(v, dtype=np.float64) for k, v in self.series.items()}
        _validate_macro_panel(self)
        self.months.setflags(write=False)
        for arr in self.series.values():
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.months)

    @property
    def series_names(self) -> tuple[str, ...]:
        return tuple(self.series)

    def month_offset(self, month: int) -> int:
        """Row index of an absolute month; raises if out of range."""
        start = int(self.months[0])
        idx = month - start
        if idx < 0 or idx >= len(self.months):
            raise ValidationError(f"macro panel has no month {month}")
        return idx


@dataclass(frozen=True)
class SynthConfig:
    """Configuration for the synthetic world; same config, same bytes out."""

    n_assets: int
    n_years: int
    seed: int
    noise_scale: float = 1.0
    nonlinear_amplitude: float = 0.45
    true_betas: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_assets < 1:
            raise ValidationError("n_assets must be >= 1")
        if self.n_years < 5:
            raise ValidationError(
                "n_years must be >= 5: a 3-year estimation window plus a "
                "target year leaves no usable history below that"
            )
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0")
        if self.true_betas is not None and len(self.true_betas) != self.n_assets:
            raise ValidationError("true_betas length must equal n_assets")


@dataclass(frozen=True)
class GroundTruth:
    """What the generator knows: betas, the risk-free rate, the nonlinear form."""

    betas: dict[str, float]
    rf_annual: float
    nonlinear_spec: str


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _validate_price_panel(panel: PricePanel) -> None:
    n = len(panel.months)
    arrays = (panel.prices, panel.monthly_returns, panel.volumes, panel.shares_outstanding)
    if any(len(a) != n for a in arrays) or len(panel.asset_ids) != n:
        raise ValidationError("price panel columns have unequal lengths")
    if n == 0:
        return
    ids = np.asarray(panel.asset_ids)
    same_asset = ids[1:] == ids[:-1]
    diffs = np.diff(panel.months)
    dup = same_asset & (diffs == 0)
    if dup.any():
        i = int(np.nonzero(dup)[0][0]) + 1
        raise ValidationError(
            f"duplicate (asset_id, month) key: ({panel.asset_ids[i]}, {panel.months[i]})"
        )
    gap = same_asset & (diffs != 1)
    if gap.any():
        i = int(np.nonzero(gap)[0][0]) + 1
        raise ValidationError(
            f"months not contiguous for asset {panel.asset_ids[i]}: "
            f"{panel.months[i - 1]} -> {panel.months[i]}"
        )
    if not (panel.prices > 0).all():
        raise ValidationError("prices must be > 0")
    if not (panel.volumes >= 0).all():
        raise ValidationError("volumes must be >= 0")
    if not (panel.shares_outstanding > 0).all():
        raise ValidationError("shares_outstanding must be > 0")
    implied = panel.prices[1:] / panel.prices[:-1] - 1.0
    bad = same_asset & (np.abs(implied - panel.monthly_returns[1:]) > RETURN_CONSISTENCY_TOL)
    if bad.any():
        i = int(np.nonzero(bad)[0][0]) + 1
        raise ValidationError(
            f"monthly_return inconsistent with prices for asset "
            f"{panel.asset_ids[i]} month {panel.months[i]}: "
            f"column {panel.monthly_returns[i]!r} vs implied {implied[i - 1]!r}"
        )


def _validate_fundamentals_panel(panel: FundamentalsPanel) -> None:
    n = len(panel.fiscal_years)
    if len(panel.asset_ids) != n or any(len(v) != n for v in panel.items.values()):
        raise ValidationError("fundamentals panel columns have unequal lengths")
    seen: set[tuple[str, int]] = set()
    for a, y in zip(panel.asset_ids, panel.fiscal_years.tolist()):
        key = (a, y)
        if key in seen:
            raise ValidationError(f"duplicate (asset_id, fiscal_year) key: {key}")
        seen.add(key)


def _validate_macro_panel(panel: MacroPanel) -> None:
    n = len(panel.months)
    if any(len(v) != n for v in panel.series.values()):
        raise ValidationError("macro panel columns have unequal lengths")
    if n == 0:
        return
    diffs = np.diff(panel.months)
    if (diffs != 1).any():
        i = int(np.nonzero(diffs != 1)[0][0])
        offender = "duplicate" if diffs[i] == 0 else "gap"
        raise ValidationError(
            f"macro months must be contiguous with one row per month: {offender} "
            f"at months {panel.months[i]} -> {panel.months[i + 1]}"
        )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _parse_float(value: str, path, line_no: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise CsvFormatError(
            f"{path}: line {line_no}, column '{column}': cannot parse {value!r} as a number"
        ) from None


def _parse_int(value: str, path, line_no: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise CsvFormatError(
            f"{path}: line {line_no}, column '{column}': cannot parse {value!r} as an integer"
        ) from None


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append((line_no, row))
    return header, rows


def load_price_panel(path) -> PricePanel:
    header, rows = _read_rows(path)
    if tuple(header) != PRICE_HEADER:
        raise CsvFormatError(
            f"{path}: header must be {','.join(PRICE_HEADER)}, got {','.join(header)}"
        )
    records = []
    for line_no, row in rows:
        values = [row[0]]
        values.append(_parse_int(row[1], path, line_no, "month"))
        for col, raw in zip(PRICE_HEADER[2:], row[2:]):
            if raw == "":
                raise CsvFormatError(
                    f"{path}: line {line_no}, column '{col}': price rows may not have empty cells"
                )
            values.append(_parse_float(raw, path, line_no, col))
        records.append(values)
    records.sort(key=lambda r: (r[0], r[1]))
    cols = list(zip(*records)) if records else [[]] * 6
    return PricePanel(
        asset_ids=tuple(cols[0]),
        months=np.array(cols[1], dtype=np.int64),
        prices=np.array(cols[2], dtype=np.float64),
        monthly_returns=np.array(cols[3], dtype=np.float64),
        volumes=np.array(cols[4], dtype=np.float64),
        shares_outstanding=np.array(cols[5], dtype=np.float64),
    )


def load_fundamentals_panel(path) -> FundamentalsPanel:
    header, rows = _read_rows(path)
    if len(header) < 2 or header[0] != "asset_id" or header[1] != "fiscal_year":
        raise CsvFormatError(
            f"{path}: header must start with asset_id,fiscal_year"
        )
    item_names = tuple(header[2:])
    records = []
    for line_no, row in rows:
        rec = [row[0], _parse_int(row[1], path, line_no, "fiscal_year")]
        for col, raw in zip(item_names, row[2:]):
            rec.append(math.nan if raw == "" else _parse_float(raw, path, line_no, col))
        records.append(rec)
    records.sort(key=lambda r: (r[0], r[1]))
    cols = list(zip(*records)) if records else [[]] * (2 + len(item_names))
    return FundamentalsPanel(
        asset_ids=tuple(cols[0]),
        fiscal_years=np.array(cols[1], dtype=np.int64),
        items={name: np.array(cols[2 + i], dtype=np.float64)
               for i, name in enumerate(item_names)},
    )


def load_macro_panel(path) -> MacroPanel:
    header, rows = _read_rows(path)
    if not header or header[0] != "month":
        raise CsvFormatError(f"{path}: header must start with 'month'")
    series_names = tuple(header[1:])
    records = []
    for line_no, row in rows:
        rec = [_parse_int(row[0], path, line_no, "month")]
        for col, raw in zip(series_names, row[1:]):
            if raw == "":
                raise CsvFormatError(
                    f"{path}: line {line_no}, column '{col}': macro rows may not have empty cells"
                )
            rec.append(_parse_float(raw, path, line_no, col))
        records.append(rec)
    records.sort(key=lambda r: r[0])
    cols = list(zip(*records)) if records else [[]] * (1 + len(series_names))
    return MacroPanel(
        months=np.array(cols[0], dtype=np.int64),
        series={name: np.array(cols[1 + i], dtype=np.float64)
                for i, name in enumerate(series_names)},
    )


def load_panels(price_path, fundamentals_path, macro_path):
    """Load and validate the three raw panels from CSV files."""
    return (
        load_price_panel(price_path),
        load_fundamentals_panel(fundamentals_path),
        load_macro_panel(macro_path),
    )


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def write_price_panel(panel: PricePanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PRICE_HEADER)
        for i in range(len(panel)):
            writer.writerow([
                panel.asset_ids[i],
                int(panel.months[i]),
                repr(float(panel.prices[i])),
                repr(float(panel.monthly_returns[i])),
                repr(float(panel.volumes[i])),
                repr(float(panel.shares_outstanding[i])),
            ])


def write_fundamentals_panel(panel: FundamentalsPanel, path) -> None:
    names = panel.item_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["asset_id", "fiscal_year", *names])
        for i in range(len(panel)):
            row = [panel.asset_ids[i], int(panel.fiscal_years[i])]
            for name in names:
                v = float(panel.items[name][i])
                row.append("" if math.isnan(v) else repr(v))
            writer.writerow(row)


def write_macro_panel(panel: MacroPanel, path) -> None:
    names = panel.series_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["month", *names])
        for i in range(len(panel)):
            writer.writerow([int(panel.months[i])]
                            + [repr(float(panel.series[n][i])) for n in names])


def write_panels(prices: PricePanel, fundamentals: FundamentalsPanel,
                 macro: MacroPanel, out_dir) -> dict[str, Path]:
    """Write prices.csv, fundamentals.csv, macro.csv into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "prices": out / "prices.csv",
        "fundamentals": out / "fundamentals.csv",
        "macro": out / "macro.csv",
    }
    write_price_panel(prices, paths["prices"])
    write_fundamentals_panel(fundamentals, paths["fundamentals"])
    write_macro_panel(macro, paths["macro"])
    return paths


def write_ground_truth(truth: GroundTruth, path) -> None:
    payload = {
        "betas": {k: truth.betas[k] for k in sorted(truth.betas)},
        "rf_annual": truth.rf_annual,
        "nonlinear_spec": truth.nonlinear_spec,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ground_truth(path) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return GroundTruth(
        betas={k: float(v) for k, v in payload["betas"].items()},
        rf_annual=float(payload["rf_annual"]),
        nonlinear_spec=str(payload["nonlinear_spec"]),
    )


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    """Stationary zero-mean AR(1) path of length n."""
    out = np.empty(n)
    scale0 = sigma / math.sqrt(1.0 - phi * phi) if sigma > 0 else 0.0
    out[0] = rng.normal(0.0, 1.0) * scale0
    shocks = rng.normal(0.0, 1.0, size=n - 1) * sigma
    for t in range(1, n):
        out[t] = phi * out[t - 1] + shocks[t - 1]
    return out


def _seasonal_pattern(n_months: int) -> np.ndarray:
    # 12-month cosine cycle; sums to zero over any aligned year, which keeps
    # trailing 36-month means equal to the unconditional premium.
    k = np.arange(MONTHS_PER_YEAR)
    cycle = SEASONAL_AMPLITUDE * np.cos(2.0 * np.pi * (k + 0.5) / MONTHS_PER_YEAR)
    cycle = cycle - cycle.mean()  # kill the ~1e-19 float residue exactly
    reps = n_months // MONTHS_PER_YEAR + 1
    return np.tile(cycle, reps)[:n_months]


def generate_synthetic(config: SynthConfig):
    """Build a seeded synthetic world.

    Returns (PricePanel, FundamentalsPanel, MacroPanel, GroundTruth).

    Asset i's monthly return is

        rf/12 + beta_i * m_t + g(i, year)/12 + idio_noise

    where m_t is the market excess factor (constant premium + deterministic
    seasonal cycle + Gaussian shocks scaled by noise_scale) and g is the
    documented nonlinear function of the asset's lagged fundamentals and one
    macro series, scaled by nonlinear_amplitude. Shares outstanding are set
    so each asset's market cap is constant through time; drawn betas are
    centered so the cap-weighted mean beta is exactly 1, which makes the
    value-weighted index of the panel coincide with the latent factor.
    """
    n_assets, n_years = config.n_assets, config.n_years
    n_months = n_years * MONTHS_PER_YEAR
    ns = config.noise_scale

    rng_caps = child_rng(config.seed, "caps")
    rng_betas = child_rng(config.seed, "betas")
    rng_market = child_rng(config.seed, "market")
    rng_idio = child_rng(config.seed, "idio")
    rng_macro = child_rng(config.seed, "macro")
    rng_fund = child_rng(config.seed, "fundamentals")
    rng_micro = child_rng(config.seed, "micro")

    asset_ids = tuple(f"A{i:04d}" for i in range(n_assets))
    base_caps = rng_caps.lognormal(mean=math.log(2e9), sigma=0.8, size=n_assets)
    weights = base_caps / base_caps.sum()

    if config.true_betas is not None:
        betas = np.array(config.true_betas, dtype=np.float64)
    else:
        betas = rng_betas.uniform(0.4, 1.6, size=n_assets)
        betas = betas + (1.0 - float(weights @ betas))

    # Macro panel (innovations scale with noise_scale; constant when zero).
    macro_series = {}
    for name, (base, phi, sigma) in MACRO_PROCESSES.items():
        macro_series[name] = base + _ar1(rng_macro, n_months, phi, sigma * ns)
    macro = MacroPanel(months=np.arange(n_months), series=macro_series)

    # Fundamentals: mean-reverting processes around per-asset scales.
    rev_base = rng_fund.lognormal(mean=math.log(5e8), sigma=0.7, size=n_assets)
    turnover = rng_fund.uniform(0.5, 0.9, size=n_assets)
    rd_frac = rng_fund.uniform(0.0, 0.15, size=n_assets)
    years = np.arange(n_years)
    margin_paths = np.empty((n_assets, n_years))
    leverage_paths = np.empty((n_assets, n_years))
    items = {name: np.empty(n_assets * n_years) for name in FUNDAMENTAL_ITEMS}
    fund_assets: list[str] = []
    fund_years = np.empty(n_assets * n_years, dtype=np.int64)
    for i, aid in enumerate(asset_ids):
        revenue = rev_base[i] * np.exp(_ar1(rng_fund, n_years, 0.85, 0.08))
        margin = np.clip(_MARGIN_CENTER + _ar1(rng_fund, n_years, 0.80, 0.05), -0.25, 0.35)
        cogs_frac = np.clip(0.55 + _ar1(rng_fund, n_years, 0.70, 0.03), 0.30, 0.80)
        ebit_margin = margin + 0.05 + _ar1(rng_fund, n_years, 0.70, 0.02)
        leverage = np.clip(0.45 + _ar1(rng_fund, n_years, 0.90, 0.07), 0.05, 0.85)
        total_assets = revenue / turnover[i]
        depreciation = 0.05 * total_assets
        net_income = margin * revenue
        capex_frac = np.clip(0.05 + _ar1(rng_fund, n_years, 0.60, 0.015), 0.005, 0.20)
        ocf = net_income + depreciation + 0.02 * revenue * _ar1(rng_fund, n_years, 0.5, 1.0)

        margin_paths[i] = margin
        leverage_paths[i] = leverage
        sl = slice(i * n_years, (i + 1) * n_years)
        total_debt = leverage * total_assets
        long_term_frac = np.clip(0.7 + _ar1(rng_fund, n_years, 0.6, 0.04), 0.3, 0.95)
        items["revenue"][sl] = revenue
        items["cogs"][sl] = cogs_frac * revenue
        items["gross_profit"][sl] = revenue - cogs_frac * revenue
        items["ebit"][sl] = ebit_margin * revenue
        items["ebitda"][sl] = ebit_margin * revenue + depreciation
        items["net_income"][sl] = net_income
        items["total_assets"][sl] = total_assets
        items["current_assets"][sl] = 0.35 * total_assets * np.exp(_ar1(rng_fund, n_years, 0.6, 0.05))
        items["cash"][sl] = 0.08 * total_assets * np.exp(_ar1(rng_fund, n_years, 0.6, 0.10))
        items["inventory"][sl] = 0.12 * total_assets * np.exp(_ar1(rng_fund, n_years, 0.6, 0.08))
        items["accounts_receivable"][sl] = 0.11 * revenue * np.exp(_ar1(rng_fund, n_years, 0.6, 0.07))
        items["goodwill"][sl] = 0.10 * total_assets * np.exp(_ar1(rng_fund, n_years, 0.8, 0.05))
        items["intangible_assets"][sl] = 0.06 * total_assets * np.exp(_ar1(rng_fund, n_years, 0.8, 0.06))
        items["total_debt"][sl] = total_debt
        items["long_term_debt"][sl] = long_term_frac * total_debt
        items["short_term_debt"][sl] = (1.0 - long_term_frac) * total_debt
        items["current_liabilities"][sl] = 0.20 * total_assets * np.exp(_ar1(rng_fund, n_years, 0.6, 0.06))
        items["accounts_payable"][sl] = 0.08 * revenue * np.exp(_ar1(rng_fund, n_years, 0.6, 0.07))
        items["total_equity"][sl] = (1.0 - leverage) * total_assets
        items["retained_earnings"][sl] = np.cumsum(net_income * 0.7) + 0.1 * total_assets
        items["operating_cash_flow"][sl] = ocf
        items["investing_cash_flow"][sl] = -capex_frac * revenue * (1.0 + 0.1 * _ar1(rng_fund, n_years, 0.5, 1.0))
        items["financing_cash_flow"][sl] = 0.02 * revenue * _ar1(rng_fund, n_years, 0.5, 1.0)
        items["capex"][sl] = capex_frac * revenue
        items["dividends_paid"][sl] = 0.30 * np.maximum(net_income, 0.0)
        items["depreciation_amortization"][sl] = depreciation
        items["interest_expense"][sl] = np.clip(0.05 + _ar1(rng_fund, n_years, 0.7, 0.01), 0.01, 0.12) * total_debt
        items["tax_expense"][sl] = 0.21 * np.maximum(ebit_margin * revenue, 0.0)
        items["rnd_expense"][sl] = rd_frac[i] * revenue
        items["sga_expense"][sl] = np.clip(0.18 + _ar1(rng_fund, n_years, 0.6, 0.02), 0.05, 0.40) * revenue
        fund_assets.extend([aid] * n_years)
        fund_years[sl] = years
    fundamentals = FundamentalsPanel(
        asset_ids=tuple(fund_assets), fiscal_years=fund_years, items=items,
    )

    # Nonlinear extra annual return per (asset, year); zero in year 0.
    ipi = macro_series["industrial_price_index"]
    ipi_change = np.array([
        ipi[y * MONTHS_PER_YEAR + 11] - ipi[y * MONTHS_PER_YEAR] for y in range(n_years)
    ])
    nonlinear = np.zeros((n_assets, n_years))
    for y in range(1, n_years):
        gate = (leverage_paths[:, y - 1] > _LEVERAGE_THRESHOLD).astype(np.float64)
        nonlinear[:, y] = config.nonlinear_amplitude * (
            1.2 * np.tanh(6.0 * (margin_paths[:, y - 1] - _MARGIN_CENTER))
            + 0.5 * gate * math.tanh(1.5 * ipi_change[y - 1])
            - 0.25 * gate
        )

    # Market factor and asset returns.
    rf_monthly = RF_ANNUAL / MONTHS_PER_YEAR
    market_excess = (
        MARKET_PREMIUM_ANNUAL / MONTHS_PER_YEAR
        + _seasonal_pattern(n_months)
        + MARKET_VOL_MONTHLY * ns * rng_market.normal(0.0, 1.0, size=n_months)
    )
    idio = IDIO_VOL_MONTHLY * ns * rng_idio.normal(0.0, 1.0, size=(n_assets, n_months))
    year_of_month = np.arange(n_months) // MONTHS_PER_YEAR
    returns = (
        rf_monthly
        + betas[:, None] * market_excess[None, :]
        + nonlinear[:, year_of_month] / MONTHS_PER_YEAR
        + idio
    )
    # Keep prices strictly positive even under absurd noise scales.
    returns = np.maximum(returns, -0.9)

    base_price = rng_micro.lognormal(mean=math.log(40.0), sigma=0.4, size=n_assets)
    base_volume = rng_micro.lognormal(mean=math.log(2e6), sigma=0.8, size=n_assets)
    price_rows = n_assets * n_months
    p_assets: list[str] = []
    p_months = np.empty(price_rows, dtype=np.int64)
    p_price = np.empty(price_rows)
    p_ret = np.empty(price_rows)
    p_vol = np.empty(price_rows)
    p_shares = np.empty(price_rows)
    months = np.arange(n_months)
    for i, aid in enumerate(asset_ids):
        prices_i = base_price[i] * np.cumprod(1.0 + returns[i])
        vol_i = base_volume[i] * np.exp(_ar1(rng_micro, n_months, 0.8, 0.3))
        sl = slice(i * n_months, (i + 1) * n_months)
        p_assets.extend([aid] * n_months)
        p_months[sl] = months
        p_price[sl] = prices_i
        p_ret[sl] = returns[i]
        p_vol[sl] = vol_i
        p_shares[sl] = base_caps[i] / prices_i  # constant market cap by design
    prices = PricePanel(
        asset_ids=tuple(p_assets),
        months=p_months,
        prices=p_price,
        monthly_returns=p_ret,
        volumes=p_vol,
        shares_outstanding=p_shares,
    )

    truth = GroundTruth(
        betas={aid: float(b) for aid, b in zip(asset_ids, betas)},
        rf_annual=RF_ANNUAL,
        nonlinear_spec=f"amplitude={config.nonlinear_amplitude!r}; {_NONLINEAR_SPEC}",
    )
    return prices, fundamentals, macro, truth
