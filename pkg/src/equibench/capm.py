"""One-factor expected-return estimation plus the classic valuation formulas.

Conventions, fixed throughout: the market portfolio is the value-weighted
index of the loaded universe (weights are prior-month market caps); beta
comes from the trailing 36 monthly returns strictly before the target
year; annualization of monthly returns is arithmetic (12x the mean); the
risk-free rate is the trailing mean of the 10-year treasury yield series.
Covariance and variance both use the population (divide-by-N) denominator,
which cancels in the beta ratio.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import MONTHS_PER_YEAR, MacroPanel, PricePanel
from .errors import InsufficientHistoryError, ValidationError

RISK_FREE_SERIES = "treasury_10y_yield"
DEFAULT_WINDOW_YEARS = 3


@dataclass(frozen=True)
class CapmEstimate:
    """One asset-year prediction; expected_return is the model identity."""

    asset_id: str
    target_year: int
    beta: float
    rf_annual: float
    market_return_annual: float
    expected_return: float

    @property
    def market_risk_premium(self) -> float:
        return self.market_return_annual - self.rf_annual


@dataclass(frozen=True)
class BetaInputs:
    asset_monthly_returns: np.ndarray
    market_monthly_returns: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "asset_monthly_returns",
                           np.asarray(self.asset_monthly_returns, dtype=np.float64))
        object.__setattr__(self, "market_monthly_returns",
                           np.asarray(self.market_monthly_returns, dtype=np.float64))
        a, m = self.asset_monthly_returns, self.market_monthly_returns
        if a.shape != m.shape or a.ndim != 1 or len(a) < 2:
            raise ValidationError("beta inputs must be equal-length 1-d series of length >= 2")
        if np.var(m) == 0.0:
            raise ValidationError("market return series has zero variance")


@dataclass(frozen=True)
class WaccInputs:
    debt_value: float
    equity_value: float
    cost_of_debt: float
    cost_of_equity: float

    def __post_init__(self):
        if self.debt_value < 0 or self.equity_value < 0:
            raise ValidationError("debt and equity values must be >= 0")
        if self.debt_value + self.equity_value <= 0:
            raise ValidationError("total firm value D + E must be > 0")


@dataclass(frozen=True)
class DcfInputs:
    fcf: tuple[float, ...]
    terminal_value: float
    discount_rate: float

    def __post_init__(self):
        object.__setattr__(self, "fcf", tuple(float(v) for v in self.fcf))
        if self.discount_rate <= -1.0:
            raise ValidationError("discount rate must be > -1")


def vw_market_index(prices: PricePanel, month_range) -> np.ndarray:
    """Value-weighted market return for each month in month_range.

    The weight of an asset at month t is its market cap (price times shares
    outstanding) at month t-1, normalized over the assets that have both
    months; at the very start of the panel, same-month caps are used.
    """
    months = list(month_range)
    if not months:
        raise ValidationError("month_range is empty")
    by_month: dict[int, list[tuple[float, float]]] = {}
    caps: dict[tuple[str, int], float] = {}
    for aid, sl in prices.asset_index.items():
        ms = prices.months[sl]
        rs = prices.monthly_returns[sl]
        cap = prices.prices[sl] * prices.shares_outstanding[sl]
        m0 = int(ms[0])
        for t in months:
            j = t - m0
            if 0 <= j < len(ms):
                prior = cap[j - 1] if j > 0 else cap[j]
                by_month.setdefault(t, []).append((prior, rs[j]))
    out = np.empty(len(months))
    for k, t in enumerate(months):
        entries = by_month.get(t)
        if not entries:
            raise InsufficientHistoryError(f"no asset has return data at month {t}")
        total = sum(w for w, _ in entries)
        if total <= 0:
            raise ValidationError(f"zero total market capitalization at month {t}")
        out[k] = sum(w * r for w, r in entries) / total
    return out


def estimate_beta(inputs: BetaInputs) -> float:
    """Sample covariance over sample variance, population denominators."""
    a = inputs.asset_monthly_returns
    m = inputs.market_monthly_returns
    am = a - a.mean()
    mm = m - m.mean()
    var = float(mm @ mm)
    if var == 0.0:
        raise ValidationError("market return series has zero variance")
    return float(am @ mm) / var


def annualize_arithmetic(monthly_returns) -> float:
    """12x the arithmetic mean of the monthly series."""
    r = np.asarray(monthly_returns, dtype=np.float64)
    if r.size == 0:
        raise ValidationError("cannot annualize an empty series")
    return MONTHS_PER_YEAR * float(r.mean())


def _trailing_window(prices: PricePanel, asset_id: str, target_year: int,
                     window_years: int) -> tuple[int, int]:
    """Month range [start, end) of the trailing window; raises with the
    first usable target year when history is short."""
    sl = prices.asset_index.get(asset_id)
    if sl is None:
        raise InsufficientHistoryError(f"asset {asset_id} not present in the price panel")
    first = int(prices.months[sl][0])
    last = int(prices.months[sl][-1])
    start = (target_year - window_years) * MONTHS_PER_YEAR
    end = target_year * MONTHS_PER_YEAR
    if start < first or end - 1 > last:
        first_usable = -(-first // MONTHS_PER_YEAR) + window_years
        raise InsufficientHistoryError(
            f"asset {asset_id} lacks the {window_years * MONTHS_PER_YEAR} months before "
            f"year {target_year}; first usable target year is {first_usable}"
        )
    return start, end


def capm_predict(prices: PricePanel, macro: MacroPanel, asset_id: str,
                 target_year: int, window_years: int = DEFAULT_WINDOW_YEARS,
                 market_returns: np.ndarray | None = None) -> CapmEstimate:
    """Expected annual return of one asset for one target year.

    Beta, the annualized market return, and the risk-free proxy are all
    estimated over the window_years*12 months strictly before the target
    year starts. `market_returns` may carry a precomputed value-weighted
    series for those months (batch callers avoid recomputing the index).
    """
    start, end = _trailing_window(prices, asset_id, target_year, window_years)
    if market_returns is None:
        market_returns = vw_market_index(prices, range(start, end))
    market_returns = np.asarray(market_returns, dtype=np.float64)
    if len(market_returns) != end - start:
        raise ValidationError("market_returns length does not match the window")

    sl = prices.asset_index[asset_id]
    m0 = int(prices.months[sl][0])
    asset_returns = prices.monthly_returns[sl][start - m0:end - m0]

    if RISK_FREE_SERIES not in macro.series:
        raise ValidationError(f"macro panel lacks the {RISK_FREE_SERIES!r} series")
    lo = macro.month_offset(start)
    hi = macro.month_offset(end - 1) + 1
    rf_annual = float(macro.series[RISK_FREE_SERIES][lo:hi].mean())

    beta = estimate_beta(BetaInputs(asset_returns, market_returns))
    market_return_annual = annualize_arithmetic(market_returns)
    expected = rf_annual + beta * (market_return_annual - rf_annual)
    return CapmEstimate(
        asset_id=asset_id,
        target_year=target_year,
        beta=beta,
        rf_annual=rf_annual,
        market_return_annual=market_return_annual,
        expected_return=expected,
    )


def capm_predictions(prices: PricePanel, macro: MacroPanel,
                     keys: list[tuple[str, int]],
                     window_years: int = DEFAULT_WINDOW_YEARS) -> list[CapmEstimate]:
    """capm_predict over many (asset_id, target_year) keys, computing each
    distinct window's market index once."""
    market_cache: dict[tuple[int, int], np.ndarray] = {}
    out = []
    for asset_id, year in keys:
        start = (year - window_years) * MONTHS_PER_YEAR
        end = year * MONTHS_PER_YEAR
        if (start, end) not in market_cache:
            market_cache[(start, end)] = vw_market_index(prices, range(start, end))
        out.append(capm_predict(prices, macro, asset_id, year, window_years,
                                market_returns=market_cache[(start, end)]))
    return out


def write_capm_predictions(estimates: list[CapmEstimate], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["asset_id", "target_year", "beta", "rf_annual",
                         "market_return_annual", "expected_return"])
        for e in estimates:
            writer.writerow([e.asset_id, e.target_year, repr(e.beta), repr(e.rf_annual),
                             repr(e.market_return_annual), repr(e.expected_return)])


def wacc(inputs: WaccInputs) -> float:
    """Debt/equity-weighted blend of financing costs (pre-tax form)."""
    v = inputs.debt_value + inputs.equity_value
    return (inputs.debt_value / v) * inputs.cost_of_debt \
        + (inputs.equity_value / v) * inputs.cost_of_equity


def dcf_value(inputs: DcfInputs) -> float:
    """Present value of the cash-flow series plus the discounted terminal value.

    Cash flows are indexed from t = 0 (undiscounted) to t = n; the terminal
    value is discounted one period past the last cash flow.
    """
    r = inputs.discount_rate
    total = 0.0
    for t, cash in enumerate(inputs.fcf):
        total += cash / (1.0 + r) ** t
    n = len(inputs.fcf) - 1
    total += inputs.terminal_value / (1.0 + r) ** (n + 1)
    return total
