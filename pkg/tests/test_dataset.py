import numpy as np
import pytest

from equibench.dataset import (
    FUNDAMENTAL_ITEMS,
    MACRO_SERIES,
    FundamentalsPanel,
    MacroPanel,
    PricePanel,
    SynthConfig,
    generate_synthetic,
    load_ground_truth,
    load_panels,
    write_ground_truth,
    write_panels,
)
from equibench.errors import CsvFormatError, ValidationError


def _write_prices(path, rows):
    lines = ["asset_id,month,price,monthly_return,volume,shares_outstanding"]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


class TestLoading:
    def test_minimal_two_month_file(self, tmp_path):
        path = tmp_path / "prices.csv"
        _write_prices(path, [
            ("X", 0, 100.0, 0.0, 1000, 50),
            ("X", 1, 110.0, 0.1, 1100, 50),
        ])
        from equibench.dataset import load_price_panel
        panel = load_price_panel(path)
        assert len(panel) == 2
        assert panel.asset_ids == ("X", "X")

    def test_duplicate_key_names_offender(self, tmp_path):
        path = tmp_path / "prices.csv"
        _write_prices(path, [
            ("X", 3, 100.0, 0.0, 1000, 50),
            ("X", 3, 101.0, 0.01, 1000, 50),
        ])
        from equibench.dataset import load_price_panel
        with pytest.raises(ValidationError, match=r"\(X, 3\)"):
            load_price_panel(path)

    def test_malformed_cell_names_file_line_column(self, tmp_path):
        path = tmp_path / "prices.csv"
        _write_prices(path, [("X", 0, "oops", 0.0, 1000, 50)])
        from equibench.dataset import load_price_panel
        with pytest.raises(CsvFormatError) as exc:
            load_price_panel(path)
        message = str(exc.value)
        assert "prices.csv" in message and "line 2" in message and "price" in message

    def test_return_inconsistency_rejected(self, tmp_path):
        path = tmp_path / "prices.csv"
        _write_prices(path, [
            ("X", 0, 100.0, 0.0, 1000, 50),
            ("X", 1, 110.0, 0.5, 1000, 50),  # implied return is 0.1
        ])
        from equibench.dataset import load_price_panel
        with pytest.raises(ValidationError, match="inconsistent"):
            load_price_panel(path)

    def test_gap_in_months_rejected(self, tmp_path):
        path = tmp_path / "prices.csv"
        _write_prices(path, [
            ("X", 0, 100.0, 0.0, 1000, 50),
            ("X", 2, 110.0, 0.1, 1000, 50),
        ])
        from equibench.dataset import load_price_panel
        with pytest.raises(ValidationError, match="contiguous"):
            load_price_panel(path)

    def test_noncontiguous_macro_rejected(self):
        with pytest.raises(ValidationError, match="contiguous"):
            MacroPanel(months=np.array([0, 1, 3]), series={"cpi": np.ones(3)})

    def test_fixture_corpus_returns_recompute(self, tmp_path):
        # 3 assets x 48 months round-tripped through CSV; recompute the
        # returns from the price column independently.
        panels = generate_synthetic(SynthConfig(n_assets=3, n_years=5, seed=2))
        prices = panels[0]
        paths = write_panels(prices, panels[1], panels[2], tmp_path)
        reloaded, _, _ = load_panels(paths["prices"], paths["fundamentals"], paths["macro"])
        for aid, sl in reloaded.asset_index.items():
            p = reloaded.prices[sl]
            r = reloaded.monthly_returns[sl]
            implied = p[1:] / p[:-1] - 1.0
            np.testing.assert_allclose(r[1:], implied, atol=1e-9, rtol=0)


class TestSyntheticGeneration:
    def test_same_seed_byte_identical_csv(self, tmp_path):
        config = SynthConfig(n_assets=5, n_years=6, seed=99)
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            p, f, m, t = generate_synthetic(config)
            write_panels(p, f, m, out)
            write_ground_truth(t, out / "groundtruth.json")
        for name in ("prices.csv", "fundamentals.csv", "macro.csv", "groundtruth.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_sizes_200_assets_30_years(self):
        p, f, m, _ = generate_synthetic(SynthConfig(n_assets=200, n_years=30, seed=7))
        assert len(p) == 200 * 360
        assert len(f) == 200 * 30
        assert len(m) == 360
        assert f.item_names == FUNDAMENTAL_ITEMS
        assert m.series_names == MACRO_SERIES

    def test_zero_noise_realized_beta_matches_config(self, pure_capm_world):
        prices, _, _, truth = pure_capm_world
        # independent oracle: cap-weighted index and plain covariance ratio
        # computed with numpy, not the capm module
        n_months = int(prices.months.max()) + 1
        weights = {}
        series = {}
        for aid, sl in prices.asset_index.items():
            weights[aid] = float(prices.prices[sl][0] * prices.shares_outstanding[sl][0])
            series[aid] = prices.monthly_returns[sl]
        total = sum(weights.values())
        market = np.zeros(n_months)
        for aid, rets in series.items():
            market += (weights[aid] / total) * rets
        for aid, rets in series.items():
            cov = np.cov(rets, market, ddof=0)
            beta = cov[0, 1] / cov[1, 1]
            assert abs(beta - truth.betas[aid]) < 1e-6

    def test_round_trip_field_by_field(self, tmp_path, small_world):
        prices, fundamentals, macro, _ = small_world
        paths = write_panels(prices, fundamentals, macro, tmp_path)
        p2, f2, m2 = load_panels(paths["prices"], paths["fundamentals"], paths["macro"])
        assert p2.asset_ids == prices.asset_ids
        np.testing.assert_array_equal(p2.months, prices.months)
        np.testing.assert_array_equal(p2.prices, prices.prices)
        np.testing.assert_array_equal(p2.monthly_returns, prices.monthly_returns)
        np.testing.assert_array_equal(p2.volumes, prices.volumes)
        np.testing.assert_array_equal(p2.shares_outstanding, prices.shares_outstanding)
        assert f2.asset_ids == fundamentals.asset_ids
        np.testing.assert_array_equal(f2.fiscal_years, fundamentals.fiscal_years)
        for name in fundamentals.item_names:
            np.testing.assert_array_equal(f2.items[name], fundamentals.items[name])
        np.testing.assert_array_equal(m2.months, macro.months)
        for name in macro.series_names:
            np.testing.assert_array_equal(m2.series[name], macro.series[name])

    def test_ground_truth_round_trip(self, tmp_path, small_world):
        truth = small_world[3]
        write_ground_truth(truth, tmp_path / "gt.json")
        loaded = load_ground_truth(tmp_path / "gt.json")
        assert loaded.betas == truth.betas
        assert loaded.rf_annual == truth.rf_annual
        assert loaded.nonlinear_spec == truth.nonlinear_spec

    def test_too_few_years_rejected(self):
        with pytest.raises(ValidationError, match="3-year"):
            SynthConfig(n_assets=3, n_years=4, seed=0)

    def test_supplied_betas_used_verbatim(self):
        betas = (0.7, 1.0, 1.3)
        _, _, _, truth = generate_synthetic(
            SynthConfig(n_assets=3, n_years=6, seed=1, true_betas=betas))
        assert tuple(truth.betas[a] for a in sorted(truth.betas)) == betas

    def test_nullable_fundamentals_round_trip(self, tmp_path):
        panel = FundamentalsPanel(
            asset_ids=("X", "X"),
            fiscal_years=np.array([0, 1]),
            items={"revenue": np.array([100.0, np.nan])},
        )
        from equibench.dataset import load_fundamentals_panel, write_fundamentals_panel
        write_fundamentals_panel(panel, tmp_path / "f.csv")
        text = (tmp_path / "f.csv").read_text()
        assert text.splitlines()[2].endswith(",")  # null -> empty cell
        loaded = load_fundamentals_panel(tmp_path / "f.csv")
        assert np.isnan(loaded.items["revenue"][1])
