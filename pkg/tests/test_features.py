import math

import numpy as np
import pytest

from equibench.dataset import (
    MONTHS_PER_YEAR,
    FundamentalsPanel,
    MacroPanel,
    PricePanel,
    SynthConfig,
    generate_synthetic,
)
from equibench.errors import ValidationError
from equibench.features import (
    RATIO_DEFINITIONS,
    audit_leakage,
    build_feature_matrix,
    read_features_csv,
    sequential_split,
    standardize_features,
    write_features_csv,
)


def _tiny_panels(n_years=4, seed=0):
    """One asset with hand-controllable monthly returns."""
    rng = np.random.default_rng(seed)
    n_months = n_years * 12
    returns = rng.uniform(-0.02, 0.03, n_months)
    prices = 50.0 * np.cumprod(1 + returns)
    volumes = rng.uniform(1e5, 2e5, n_months)
    shares = np.full(n_months, 1e6)
    prices_panel = PricePanel(
        asset_ids=("Z",) * n_months,
        months=np.arange(n_months),
        prices=prices,
        monthly_returns=returns,
        volumes=volumes,
        shares_outstanding=shares,
    )
    fundamentals = FundamentalsPanel(
        asset_ids=("Z",) * n_years,
        fiscal_years=np.arange(n_years),
        items={
            "revenue": rng.uniform(1e6, 2e6, n_years),
            "net_income": rng.uniform(1e5, 3e5, n_years),
        },
    )
    macro = MacroPanel(
        months=np.arange(n_months),
        series={
            "treasury_10y_yield": 0.03 + 0.001 * rng.normal(size=n_months),
            "cpi": 120 + rng.normal(size=n_months).cumsum() * 0.1,
        },
    )
    return prices_panel, fundamentals, macro


class TestBuildFeatureMatrix:
    def test_four_years_window_three_gives_one_row(self):
        prices, fundamentals, macro = _tiny_panels(n_years=4)
        matrix = build_feature_matrix(prices, fundamentals, macro, 3)
        assert len(matrix) == 1
        assert matrix.target_years.tolist() == [3]

    def test_hand_recomputed_feature_vector(self):
        # spreadsheet-style oracle: recompute every feature with plain
        # python loops and compare the whole row
        prices, fundamentals, macro = _tiny_panels(n_years=4, seed=3)
        matrix = build_feature_matrix(prices, fundamentals, macro, 3)
        row = dict(zip(matrix.feature_names, matrix.X[0]))
        returns = prices.monthly_returns
        for k in range(1, 4):
            year = 3 - k
            months = range(year * 12, year * 12 + 12)
            compounded = 1.0
            for t in months:
                compounded *= 1.0 + returns[t]
            assert row[f"annual_return_lag{k}"] == pytest.approx(compounded - 1, rel=1e-12)
            vol = sum(prices.volumes[t] for t in months) / 12.0
            assert row[f"mean_volume_lag{k}"] == pytest.approx(vol, rel=1e-12)
            assert row[f"year_end_price_lag{k}"] == prices.prices[year * 12 + 11]
            assert row[f"revenue_lag{k}"] == fundamentals.items["revenue"][year]
            margin = fundamentals.items["net_income"][year] / fundamentals.items["revenue"][year]
            assert row[f"profit_margin_lag{k}"] == pytest.approx(margin, rel=1e-12)
            for name in ("treasury_10y_yield", "cpi"):
                level = sum(macro.series[name][t] for t in months) / 12.0
                change = macro.series[name][year * 12 + 11] - macro.series[name][year * 12]
                assert row[f"{name}_level_lag{k}"] == pytest.approx(level, rel=1e-12)
                assert row[f"{name}_change_lag{k}"] == pytest.approx(change, rel=1e-12)
        # target: compounded return of year 3
        target = 1.0
        for t in range(36, 48):
            target *= 1.0 + returns[t]
        assert matrix.y[0] == pytest.approx(target - 1, rel=1e-12)

    def test_missing_fundamental_drops_row(self):
        prices, fundamentals, macro = _tiny_panels(n_years=6)
        items = {k: v.copy() for k, v in fundamentals.items.items()}
        items["revenue"][1] = np.nan  # inside the lag window of years 3 and 4
        fundamentals = FundamentalsPanel(
            asset_ids=fundamentals.asset_ids,
            fiscal_years=fundamentals.fiscal_years,
            items=items,
        )
        matrix = build_feature_matrix(prices, fundamentals, macro, 3)
        assert matrix.target_years.tolist() == [5]
        assert matrix.dropped_missing == 2

    def test_empty_panels_error(self):
        prices, fundamentals, macro = _tiny_panels()
        empty = MacroPanel(months=np.array([], dtype=np.int64), series={"cpi": np.array([])})
        with pytest.raises(ValidationError):
            build_feature_matrix(prices, fundamentals, empty, 3)

    def test_paper_scale_782_stocks(self):
        # scale check only: row bound and the ~200-feature budget
        prices, fundamentals, macro, _ = generate_synthetic(
            SynthConfig(n_assets=782, n_years=36, seed=13))
        matrix = build_feature_matrix(prices, fundamentals, macro, 3)
        assert len(matrix) <= 782 * 33
        assert 150 <= matrix.n_features <= 250

    def test_csv_round_trip(self, tmp_path, small_world):
        prices, fundamentals, macro, _ = small_world
        matrix = build_feature_matrix(prices, fundamentals, macro, 3)
        write_features_csv(matrix, tmp_path / "features.csv")
        loaded = read_features_csv(tmp_path / "features.csv")
        assert loaded.feature_names == matrix.feature_names
        assert loaded.asset_ids == matrix.asset_ids
        np.testing.assert_array_equal(loaded.X, matrix.X)
        np.testing.assert_array_equal(loaded.y, matrix.y)
        assert loaded.window_years == 3


class TestSequentialSplit:
    def _matrix_with_year_counts(self, counts: dict[int, int]):
        rows = [(f"A{i:03d}", y) for y, n in counts.items() for i in range(n)]
        rows.sort()
        return build_matrix_from_rows(rows)

    def test_ten_equal_years_fraction_03(self):
        matrix = self._matrix_with_year_counts({y: 4 for y in range(10)})
        split = sequential_split(matrix, 0.3)
        assert sorted(set(split.test.target_years.tolist())) == [7, 8, 9]
        assert len(split.test) == 12

    def test_fraction_zero_all_train(self):
        matrix = self._matrix_with_year_counts({y: 4 for y in range(10)})
        split = sequential_split(matrix, 0.0)
        assert len(split.test) == 0
        assert len(split.train) == len(matrix)

    def test_unbalanced_panel_mirrors_years_not_rows(self):
        # a growing universe: 30% of rows is only the last ~7 of 36 years
        counts = {y: 10 + 6 * y for y in range(36)}
        matrix = self._matrix_with_year_counts(counts)
        split = sequential_split(matrix, 0.3)
        test_years = sorted(set(split.test.target_years.tolist()))
        assert 5 <= len(test_years) <= 8
        assert test_years[-1] == 35
        share = len(split.test) / len(matrix)
        assert share >= 0.3
        # removing the earliest test year drops the share below the target
        earliest = test_years[0]
        assert (share - (split.test.target_years == earliest).mean()
                * len(split.test) / len(matrix)) < 0.3

    def test_split_monotonicity_property(self, rng):
        counts = {int(y): int(rng.integers(1, 30)) for y in range(12)}
        matrix = self._matrix_with_year_counts(counts)
        for fraction in np.linspace(0, 1, 7):
            split = sequential_split(matrix, float(fraction))
            if len(split.train) and len(split.test):
                assert split.train.target_years.max() < split.test.target_years.min()

    def test_empty_matrix_error(self):
        matrix = self._matrix_with_year_counts({0: 1})
        with pytest.raises(ValidationError):
            sequential_split(matrix.take(np.array([], dtype=np.int64)), 0.3)


def build_matrix_from_rows(rows):
    from equibench.features import FeatureMatrix
    return FeatureMatrix(
        asset_ids=tuple(a for a, _ in rows),
        target_years=np.array([y for _, y in rows]),
        X=np.arange(len(rows) * 2, dtype=np.float64).reshape(len(rows), 2),
        y=np.zeros(len(rows)),
        feature_names=("f_lag1", "g_lag1"),
        window_years=1,
    )


class TestStandardize:
    def _split(self, train_cols, test_cols):
        from equibench.features import FeatureMatrix, SplitDataset
        def mk(cols, year):
            X = np.array(cols, dtype=np.float64).T
            return FeatureMatrix(
                asset_ids=tuple(f"A{i}" for i in range(len(X))),
                target_years=np.full(len(X), year),
                X=X,
                y=np.zeros(len(X)),
                feature_names=tuple(f"c{j}_lag1" for j in range(X.shape[1])),
                window_years=1,
            )
        return SplitDataset(train=mk(train_cols, 0), test=mk(test_cols, 1),
                            test_fraction=0.5)

    def test_constant_column_becomes_zero(self):
        split = self._split([[5.0, 5.0]], [[5.0, 7.0]])
        out = standardize_features(split)
        assert (out.train.X == 0).all()
        assert (out.test.X == 0).all()

    def test_two_point_column(self):
        split = self._split([[0.0, 2.0]], [[1.0, 3.0]])
        out = standardize_features(split)
        np.testing.assert_allclose(out.train.X[:, 0], [-1.0, 1.0])
        np.testing.assert_allclose(out.test.X[:, 0], [0.0, 2.0])

    def test_test_stats_shift_under_drift(self, rng):
        train = [list(rng.normal(0, 1, 50))]
        test = [list(rng.normal(0.8, 1.3, 50))]
        split = self._split(train, test)
        out = standardize_features(split)
        # independent recomputation of the train transform applied to test
        mean = np.mean(train[0])
        std = np.std(train[0])
        expected = (np.array(test[0]) - mean) / std
        np.testing.assert_allclose(out.test.X[:, 0], expected, rtol=1e-12)
        assert abs(out.test.X[:, 0].mean()) > 0.1  # drift survives the transform

    def test_double_standardize_refused(self):
        split = self._split([[0.0, 2.0]], [[1.0, 3.0]])
        out = standardize_features(split)
        with pytest.raises(ValidationError, match="already standardized"):
            standardize_features(out)


class TestLeakageAudit:
    def test_clean_matrix_zero_violations(self, small_world):
        prices, fundamentals, macro, _ = small_world
        matrix = build_feature_matrix(prices, fundamentals, macro, 3)
        report = audit_leakage(matrix, prices, fundamentals, macro)
        assert report["rows"] == len(matrix)
        assert report["leakage_violations"] == 0

    def test_future_macro_injection_caught(self, small_world):
        prices, fundamentals, macro, _ = small_world
        matrix = build_feature_matrix(prices, fundamentals, macro, 3)
        # corrupt one row: replace a macro level feature with the value from
        # the target year itself (future relative to the feature timestamp)
        col = matrix.feature_names.index("cpi_level_lag1")
        i = 7
        year = int(matrix.target_years[i])
        future_months = slice(
            macro.month_offset(year * MONTHS_PER_YEAR),
            macro.month_offset(year * MONTHS_PER_YEAR + 11) + 1,
        )
        corrupted_X = matrix.X.copy()
        corrupted_X[i, col] = float(macro.series["cpi"][future_months].mean())
        from equibench.features import FeatureMatrix
        corrupted = FeatureMatrix(
            asset_ids=matrix.asset_ids,
            target_years=matrix.target_years,
            X=corrupted_X,
            y=matrix.y,
            feature_names=matrix.feature_names,
            window_years=matrix.window_years,
        )
        report = audit_leakage(corrupted, prices, fundamentals, macro)
        assert report["leakage_violations"] == 1
        violation = report["violations"][0]
        assert violation["feature"] == "cpi_level_lag1"
        assert violation["asset_id"] == matrix.asset_ids[i]

    def test_ratio_definitions_all_resolvable(self, small_world):
        _, fundamentals, _, _ = small_world
        for num, den in RATIO_DEFINITIONS.values():
            assert num in fundamentals.items
            assert den in fundamentals.items
