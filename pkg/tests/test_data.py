import datetime as dt

import numpy as np
import pytest

from fieldyield.data import (
    NormParams,
    Season,
    biweekly_aggregate,
    denormalize,
    fit_norm_params,
    ndvi,
    normalize_dataset,
    normalize_values,
    train_test_split,
    truncate_to_month,
)
from fieldyield.errors import DataValidationError
from fieldyield.synth import synth_field


class TestNdvi:
    def test_symmetry_point(self):
        assert ndvi(0.5, 0.5) == 0.0

    def test_hand_value(self):
        assert ndvi(0.4, 0.1) == pytest.approx(0.6, abs=1e-12)

    def test_zero_sum_rejected(self):
        with pytest.raises(DataValidationError):
            ndvi(0.0, 0.0)

    def test_negative_reflectance_rejected(self):
        with pytest.raises(DataValidationError):
            ndvi(-0.1, 0.5)

    def test_antisymmetric(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.random(2) + 0.01
            assert ndvi(a, b) == pytest.approx(-ndvi(b, a), abs=1e-15)

    def test_vectorized_range(self):
        rng = np.random.default_rng(1)
        nir = rng.random(100) + 1e-6
        red = rng.random(100) + 1e-6
        out = ndvi(nir, red)
        assert np.all(out >= -1) and np.all(out <= 1)


class TestSeason:
    def test_default_window_count(self):
        assert Season().n_windows == 11

    def test_window_ends(self):
        wins = Season().windows()
        assert wins[0] == (dt.date(2001, 5, 1), dt.date(2001, 5, 14))
        assert wins[-1][1] == dt.date(2001, 9, 30)
        assert (wins[-1][1] - wins[-1][0]).days == 12  # trailing partial window

    def test_windows_through_month(self):
        season = Season()
        assert season.windows_through_month(5) == 2
        assert season.windows_through_month(6) == 4
        assert season.windows_through_month(9) == 11

    def test_month_out_of_season(self):
        with pytest.raises(DataValidationError):
            Season().windows_through_month(1)


class TestBiweeklyAggregate:
    def start(self):
        return dt.date(2001, 5, 1)

    def test_constant_two_weeks(self):
        daily = [(self.start() + dt.timedelta(days=i), 30.0, 1.0) for i in range(14)]
        out = biweekly_aggregate(daily, self.start())
        assert out.shape == (1, 2)
        assert out[0, 0] == 30.0

    def test_two_full_windows(self):
        daily = [(self.start() + dt.timedelta(days=i), 10.0 if i < 14 else 20.0, 0.0) for i in range(28)]
        out = biweekly_aggregate(daily, self.start())
        assert out[:, 0].tolist() == [10.0, 20.0]

    def test_partial_trailing_window(self):
        daily = [(self.start() + dt.timedelta(days=i), 5.0, 2.0) for i in range(20)]
        out = biweekly_aggregate(daily, self.start())
        assert out[:, 0].tolist() == [5.0, 5.0]
        assert out[:, 1].tolist() == [2.0, 2.0]

    def test_empty_rejected(self):
        with pytest.raises(DataValidationError):
            biweekly_aggregate([], self.start())

    def test_before_season_rejected(self):
        with pytest.raises(DataValidationError):
            biweekly_aggregate([(dt.date(2001, 4, 30), 1.0, 1.0)], self.start())

    def test_gap_window_rejected(self):
        daily = [(self.start(), 1.0, 1.0), (self.start() + dt.timedelta(days=30), 1.0, 1.0)]
        with pytest.raises(DataValidationError):
            biweekly_aggregate(daily, self.start())


class TestNormalization:
    def test_hand_column(self):
        p = fit_norm_params(np.array([10.0, 20.0, 30.0]))
        out = normalize_values(np.array([10.0, 20.0, 30.0]), p)
        assert out.tolist() == [0.0, 0.5, 1.0]

    def test_constant_column_clamped(self):
        p = fit_norm_params(np.array([7.0, 7.0, 7.0]))
        out = normalize_values(np.array([7.0, 7.0, 7.0]), p)
        assert out.tolist() == [0.0, 0.0, 0.0]
        back = denormalize(out, p)
        assert back.tolist() == [7.0, 7.0, 7.0]

    def test_roundtrip(self):
        rng = np.random.default_rng(2)
        x = rng.normal(50, 20, size=(40, 6))
        p = fit_norm_params(x)
        back = denormalize(normalize_values(x, p), p)
        assert np.max(np.abs(back - x)) < 1e-10

    def test_denormalize_hand_values(self):
        p = NormParams(np.array([0.0]), np.array([200.0]))
        assert denormalize(0.5, p) == 100.0
        p2 = NormParams(np.array([3.0]), np.array([9.0]))
        assert denormalize(0.0, p2) == 3.0
        assert denormalize(1.0, p2) == 9.0

    def test_column_count_mismatch_rejected(self):
        p = fit_norm_params(np.ones((3, 4)))
        with pytest.raises(DataValidationError):
            denormalize(np.ones((3, 5)), p)

    def test_dataset_normalization_in_unit_interval(self):
        ds, _ = synth_field(6, 6, 2, seed=4)
        norm, params = normalize_dataset(ds)
        for t in norm.tasks:
            tab = norm.tables[t]
            for block in (tab.soil, tab.spectral, tab.ndvi, tab.temp, tab.rain, tab.yields):
                assert np.nanmin(block) >= 0.0 and np.nanmax(block) <= 1.0

    def test_double_normalization_rejected(self):
        ds, _ = synth_field(4, 4, 1, seed=0)
        norm, _ = normalize_dataset(ds)
        with pytest.raises(DataValidationError):
            normalize_dataset(norm)

    def test_train_statistics_ignore_test(self):
        ds, _ = synth_field(8, 8, 2, seed=7)
        train, test = train_test_split(ds, 0.25, 0)
        _, params = normalize_dataset(train)
        # perturbing the test features must not change the parameters
        test.tables[test.tasks[0]].ndvi[:] += 100.0
        _, params2 = normalize_dataset(train)
        for key in params:
            assert np.array_equal(params[key].lo, params2[key].lo)
            assert np.array_equal(params[key].hi, params2[key].hi)


class TestTruncateToMonth:
    def test_september_is_identity(self):
        ds, _ = synth_field(4, 4, 2, seed=1)
        cut = truncate_to_month(ds, 9)
        for t in ds.tasks:
            assert np.array_equal(cut.tables[t].ndvi, ds.tables[t].ndvi)

    def test_may_keeps_two_windows(self):
        ds, _ = synth_field(4, 4, 1, seed=1)
        cut = truncate_to_month(ds, 5)
        assert cut.n_windows == 2

    def test_january_rejected(self):
        ds, _ = synth_field(4, 4, 1, seed=1)
        with pytest.raises(DataValidationError):
            truncate_to_month(ds, 1)

    def test_truncation_composes(self):
        ds, _ = synth_field(4, 4, 2, seed=2)
        once = truncate_to_month(ds, 6)
        twice = truncate_to_month(truncate_to_month(ds, 8), 6)
        for t in ds.tasks:
            assert np.array_equal(once.tables[t].ndvi, twice.tables[t].ndvi)
            assert np.array_equal(once.tables[t].temp, twice.tables[t].temp)

    def test_norm_params_sliced(self):
        ds, _ = synth_field(4, 4, 1, seed=3)
        norm, _ = normalize_dataset(ds)
        cut = truncate_to_month(norm, 6)
        assert cut.norm["ndvi"].lo.size == cut.n_windows
        assert cut.norm["soil"].lo.size == ds.n_soil


class TestTrainTestSplit:
    def test_fraction_zero_all_train(self):
        ds, _ = synth_field(5, 5, 2, seed=0)
        train, test = train_test_split(ds, 0.0, 1)
        for t in ds.tasks:
            assert train.tables[t].n_samples == 25
            assert test.tables[t].n_samples == 0

    def test_counts(self):
        ds, _ = synth_field(19, 25, 1, seed=0)  # 475 regions
        train, test = train_test_split(ds, 0.2, 3)
        t = ds.tasks[0]
        assert test.tables[t].n_samples == 95
        assert train.tables[t].n_samples == 380

    def test_deterministic(self):
        ds, _ = synth_field(6, 6, 2, seed=0)
        a = train_test_split(ds, 0.3, 42)
        b = train_test_split(ds, 0.3, 42)
        for t in ds.tasks:
            assert np.array_equal(a[0].tables[t].regions, b[0].tables[t].regions)
            assert np.array_equal(a[1].tables[t].regions, b[1].tables[t].regions)

    def test_disjoint_exhaustive(self):
        ds, _ = synth_field(7, 5, 3, seed=9)
        train, test = train_test_split(ds, 0.4, 5)
        for t in ds.tasks:
            tr = set(train.tables[t].regions.tolist())
            te = set(test.tables[t].regions.tolist())
            assert tr.isdisjoint(te)
            assert tr | te == set(ds.tables[t].regions.tolist())

    def test_bad_fraction_rejected(self):
        ds, _ = synth_field(3, 3, 1, seed=0)
        with pytest.raises(DataValidationError):
            train_test_split(ds, 1.0, 0)
        with pytest.raises(DataValidationError):
            train_test_split(ds, -0.1, 0)
