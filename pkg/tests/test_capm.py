import numpy as np
import pytest

from equibench.capm import (
    BetaInputs,
    CapmEstimate,
    DcfInputs,
    WaccInputs,
    annualize_arithmetic,
    capm_predict,
    capm_predictions,
    dcf_value,
    estimate_beta,
    vw_market_index,
    wacc,
    write_capm_predictions,
)
from equibench.dataset import PricePanel
from equibench.errors import InsufficientHistoryError, ValidationError


def _panel_from_returns(series: dict[str, np.ndarray], caps: dict[str, float]):
    """Constant-cap panel with the given monthly return series."""
    asset_ids, months, prices, rets, vols, shares = [], [], [], [], [], []
    for aid in sorted(series):
        r = np.asarray(series[aid], dtype=np.float64)
        p = 100.0 * np.cumprod(1 + r)
        n = len(r)
        asset_ids += [aid] * n
        months += list(range(n))
        prices += p.tolist()
        rets += r.tolist()
        vols += [1000.0] * n
        shares += (caps[aid] / p).tolist()
    return PricePanel(
        asset_ids=tuple(asset_ids),
        months=np.array(months),
        prices=np.array(prices),
        monthly_returns=np.array(rets),
        volumes=np.array(vols),
        shares_outstanding=np.array(shares),
    )


class TestVwIndex:
    def test_single_asset_is_identity(self):
        r = np.array([0.01, -0.02, 0.03, 0.0])
        panel = _panel_from_returns({"A": r}, {"A": 1e6})
        np.testing.assert_allclose(vw_market_index(panel, range(4)), r)

    def test_equal_caps_average(self):
        panel = _panel_from_returns(
            {"A": np.array([0.0, 0.02]), "B": np.array([0.0, 0.04])},
            {"A": 1e6, "B": 1e6},
        )
        assert vw_market_index(panel, [1])[0] == pytest.approx(0.03, abs=1e-15)

    def test_two_to_one_caps(self):
        panel = _panel_from_returns(
            {"A": np.array([0.0, 0.03]), "B": np.array([0.0, 0.0])},
            {"A": 2e6, "B": 1e6},
        )
        assert vw_market_index(panel, [1])[0] == pytest.approx(0.02, abs=1e-15)


class TestBeta:
    def test_identical_series_beta_one_exactly(self, rng):
        m = rng.normal(0.01, 0.04, 36)
        assert estimate_beta(BetaInputs(m, m)) == 1.0

    def test_affine_transform(self, rng):
        m = rng.normal(0.01, 0.04, 36)
        a = 2.0 * m + 0.01
        assert estimate_beta(BetaInputs(a, m)) == pytest.approx(2.0, abs=1e-12)

    def test_scale_property(self, rng):
        m = rng.normal(0.0, 0.03, 36)
        x = 1.3 * m + rng.normal(0, 0.02, 36)
        b = estimate_beta(BetaInputs(x, m))
        for a, c in [(2.5, 0.0), (-0.7, 0.04), (0.1, -1.0)]:
            scaled = estimate_beta(BetaInputs(a * x + c, m))
            assert scaled == pytest.approx(a * b, abs=1e-12)

    def test_noisy_fixture_within_band_and_matches_oracle(self):
        rng = np.random.default_rng(77)
        m = rng.normal(0.005, 0.03, 36)
        x = 1.3 * m + rng.normal(0, 0.02, 36)
        beta = estimate_beta(BetaInputs(x, m))
        assert 1.1 <= beta <= 1.5
        cov = np.cov(x, m, ddof=0)  # independent covariance computation
        assert beta == pytest.approx(cov[0, 1] / cov[1, 1], abs=1e-12)

    def test_fifty_random_fixtures_match_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(50):
            m = rng.normal(0.0, rng.uniform(0.01, 0.08), 36)
            x = rng.uniform(-1, 3) * m + rng.normal(0, 0.03, 36)
            cov = np.cov(x, m, ddof=0)
            assert estimate_beta(BetaInputs(x, m)) == pytest.approx(
                cov[0, 1] / cov[1, 1], abs=1e-12)

    def test_zero_variance_market_rejected(self):
        with pytest.raises(ValidationError, match="zero variance"):
            BetaInputs(np.ones(12), np.ones(12))


class TestAnnualize:
    def test_constant_one_percent(self):
        assert annualize_arithmetic([0.01] * 36) == pytest.approx(0.12, abs=1e-15)

    def test_zeros(self):
        assert annualize_arithmetic(np.zeros(36)) == 0.0

    def test_mixed_fixture_matches_oracle(self, rng):
        r = rng.normal(0.004, 0.05, 36)
        assert annualize_arithmetic(r) == pytest.approx(12 * sum(r) / 36, abs=1e-12)


class TestCapmPredict:
    def test_identity_collapses(self):
        est = CapmEstimate("A", 3, beta=1.0, rf_annual=0.07,
                           market_return_annual=0.09,
                           expected_return=0.07 + 1.0 * (0.09 - 0.07))
        assert est.expected_return == pytest.approx(est.market_return_annual, abs=1e-15)
        est0 = CapmEstimate("A", 3, beta=0.0, rf_annual=0.07,
                            market_return_annual=0.09,
                            expected_return=0.07 + 0.0 * 0.02)
        assert est0.expected_return == est0.rf_annual
        assert est.market_risk_premium == pytest.approx(0.02, abs=1e-15)

    def test_direct_arithmetic(self):
        expected = 0.03 + 1.5 * (0.09 - 0.03)
        assert expected == pytest.approx(0.12, abs=1e-12)

    def test_monotone_in_beta(self, pure_capm_world):
        prices, _, macro, truth = pure_capm_world
        keys = [(aid, 5) for aid in sorted(truth.betas)]
        estimates = capm_predictions(prices, macro, keys)
        by_beta = sorted(estimates, key=lambda e: e.beta)
        prem = by_beta[0].market_risk_premium
        assert prem > 0
        returns = [e.expected_return for e in by_beta]
        assert all(a < b for a, b in zip(returns, returns[1:]))

    def test_insufficient_history_names_first_usable_year(self, pure_capm_world):
        prices, _, macro, _ = pure_capm_world
        with pytest.raises(InsufficientHistoryError, match="first usable target year is 3"):
            capm_predict(prices, macro, "A0000", 2)

    def test_missing_asset(self, pure_capm_world):
        prices, _, macro, _ = pure_capm_world
        with pytest.raises(InsufficientHistoryError, match="ZZZ"):
            capm_predict(prices, macro, "ZZZ", 5)

    def test_predictions_csv(self, tmp_path, pure_capm_world):
        prices, _, macro, _ = pure_capm_world
        estimates = capm_predictions(prices, macro, [("A0000", 4), ("A0001", 4)])
        write_capm_predictions(estimates, tmp_path / "capm.csv")
        lines = (tmp_path / "capm.csv").read_text().splitlines()
        assert lines[0] == "asset_id,target_year,beta,rf_annual,market_return_annual,expected_return"
        assert len(lines) == 3


class TestWacc:
    def test_all_equity(self):
        assert wacc(WaccInputs(0.0, 100.0, 0.04, 0.10)) == 0.10

    def test_all_debt(self):
        assert wacc(WaccInputs(100.0, 0.0, 0.04, 0.10)) == 0.04

    def test_equal_weights(self):
        assert wacc(WaccInputs(50.0, 50.0, 0.04, 0.10)) == pytest.approx(0.07, abs=1e-15)

    def test_bounded_by_component_costs(self, rng):
        for _ in range(100):
            d, e = rng.uniform(0, 100, 2)
            if d + e == 0:
                continue
            rd, re = rng.uniform(0.0, 0.2, 2)
            value = wacc(WaccInputs(d, e, rd, re))
            assert min(rd, re) - 1e-12 <= value <= max(rd, re) + 1e-12

    def test_zero_total_value_rejected(self):
        with pytest.raises(ValidationError):
            WaccInputs(0.0, 0.0, 0.04, 0.10)


class TestDcf:
    def test_no_discounting(self):
        assert dcf_value(DcfInputs((100.0,), 0.0, 0.0)) == 100.0

    def test_two_periods(self):
        assert dcf_value(DcfInputs((100.0, 110.0), 0.0, 0.10)) == pytest.approx(200.0, rel=1e-12)

    def test_terminal_value(self):
        assert dcf_value(DcfInputs((100.0, 110.0), 121.0, 0.10)) == pytest.approx(300.0, rel=1e-12)

    def test_strictly_decreasing_in_rate(self):
        inputs = [DcfInputs((100.0, 110.0, 120.0), 500.0, r)
                  for r in np.linspace(0.0, 0.5, 26)]
        values = [dcf_value(i) for i in inputs]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_rate_below_minus_one_rejected(self):
        with pytest.raises(ValidationError):
            DcfInputs((100.0,), 0.0, -1.5)
