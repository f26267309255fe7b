import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gustpp.distributions import EnsembleForecast, TruncatedLogistic
from gustpp.exceptions import DataError, DomainError
from gustpp.verification import (
    P_SENTINEL,
    benjamini_hochberg,
    calibration_diagnostics,
    dm_test,
    permutation_importance,
    permuted_cases,
    pit,
    rank_histogram_ranks,
    skill_score,
    write_rows,
)
from oracles import dm_statistic


class TestPit:
    def test_calibrated_forecast_gives_uniform_pit(self, rng):
        mu, sigma = rng.uniform(2, 10, 10_000), rng.uniform(0.5, 2, 10_000)
        f = TruncatedLogistic(mu, sigma)
        y = f.sample(rng)
        counts = np.histogram(pit(f, y), bins=20, range=(0, 1))[0]
        assert stats.chisquare(counts).pvalue > 0.001

    def test_point_mass_gives_uniform_randomized_pit(self, rng):
        f = EnsembleForecast(np.full((10_000, 1), 3.0))
        u = pit(f, np.full(10_000, 3.0), rng)
        assert stats.kstest(u, "uniform").pvalue > 0.001

    def test_rank_below_all_members(self):
        x = np.arange(1.0, 21.0)[None, :]
        assert rank_histogram_ranks(x, np.array([0.0]))[0] == 1
        assert rank_histogram_ranks(x, np.array([99.0]))[0] == 21

    def test_tied_ranks_spread_over_the_tie(self, rng):
        x = np.tile([1.0, 2.0, 2.0, 3.0], (6000, 1))
        r = rank_histogram_ranks(x, np.full(6000, 2.0), rng)
        assert set(np.unique(r)) == {2, 3, 4}

    def test_ensemble_diagnostics_use_rank_bins(self, rng):
        x = rng.normal(10, 1, (3000, 20))
        d = calibration_diagnostics(EnsembleForecast(x), rng.normal(10, 1, 3000), rng)
        assert len(d.counts) == 21 and d.n == 3000
        assert d.p_value > 0.001
        assert d.coverage == pytest.approx(19 / 21, abs=0.02)

    def test_underdispersed_ensemble_is_detected(self, rng):
        x = rng.normal(10, 0.3, (3000, 20))
        d = calibration_diagnostics(EnsembleForecast(x), rng.normal(10, 1, 3000), rng)
        assert d.p_value < 1e-6
        assert d.counts[0] > d.counts[10] and d.counts[-1] > d.counts[10]


class TestDieboldMariano:
    def test_identical_scores(self):
        r = dm_test(np.ones(10), np.ones(10))
        assert r.p_value == 1.0 and r.statistic == 0.0 and r.direction == "none"

    def test_constant_difference(self):
        r = dm_test(np.full(5, 1.0), np.full(5, 2.0))
        assert r.statistic == -math.inf and r.direction == "first"
        assert r.p_first_better == P_SENTINEL and r.p_second_better == 1.0

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 10), min_size=3, max_size=40), st.integers(0, 10_000))
    def test_statistic_matches_loop_oracle(self, f, seed):
        f = np.array(f)
        g = f + np.random.default_rng(seed).normal(0.1, 1.0, len(f))
        r = dm_test(f, g)
        assert r.statistic == pytest.approx(dm_statistic(f, g), rel=1e-10)
        assert r.p_first_better + r.p_second_better == pytest.approx(1.0)

    def test_exchange_flips_sign(self, rng):
        f, g = rng.uniform(size=50), rng.uniform(size=50)
        a, b = dm_test(f, g), dm_test(g, f)
        assert a.statistic == pytest.approx(-b.statistic)
        assert a.p_first_better == pytest.approx(b.p_second_better)
        assert a.p_value == pytest.approx(b.p_value)

    def test_errors(self):
        with pytest.raises(DataError):
            dm_test(np.ones(3), np.ones(4))
        with pytest.raises(DataError):
            dm_test(np.ones(1), np.ones(1))

    def test_null_rejection_rate(self):
        rng = np.random.default_rng(4)
        d = rng.normal(size=(2000, 200))
        p = [dm_test(x, np.zeros(200)).p_first_better for x in d]
        assert np.mean(np.array(p) < 0.05) == pytest.approx(0.05, abs=0.015)


class TestBenjaminiHochberg:
    def test_example(self):
        mask, p_star = benjamini_hochberg([0.01, 0.02, 0.04, 0.5], 0.05)
        assert mask.tolist() == [True, True, False, False]
        assert p_star == 0.02

    def test_uses_largest_admissible_index(self):
        # p_(1) fails its own threshold but p_(2) passes, so both are rejected
        mask, _ = benjamini_hochberg([0.03, 0.04], 0.05)
        assert mask.all()

    def test_extremes(self):
        assert not benjamini_hochberg(np.ones(5))[0].any()
        assert benjamini_hochberg(np.zeros(5))[0].all()
        assert benjamini_hochberg([])[1] is None

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.001, 0.5))
    def test_monotone_in_alpha(self, p, alpha):
        a = benjamini_hochberg(p, alpha)[0]
        b = benjamini_hochberg(p, min(1.0, 2 * alpha))[0]
        assert np.all(b[a])

    def test_rejects_invalid(self):
        with pytest.raises(DomainError):
            benjamini_hochberg([0.5, 1.2])


class TestImportance:
    def test_unused_feature_has_zero_importance(self, small_split):
        cases = small_split.test
        j = cases.predictor_names.index("vmax_mean")

        def predict(c):
            return TruncatedLogistic(np.maximum(c.X[:, j], 0.1), np.ones(len(c)))

        r = permutation_importance(predict, cases, "u10", rng=0, n_repeats=3)
        assert r.delta == 0.0 and r.delta0 == 0.0
        used = permutation_importance(predict, cases, "vmax_mean", rng=0, n_repeats=3)
        assert used.delta > 0 and used.delta0 == pytest.approx(used.delta / used.baseline)

    def test_joint_permutation_uses_one_shuffle(self, small_split):
        cases = small_split.test
        perm = np.random.default_rng(0).permutation(len(cases))
        p = permuted_cases(cases, ("vmax_mean", "ensemble"), perm)
        j = cases.predictor_names.index("vmax_mean")
        np.testing.assert_array_equal(p.X[:, j], cases.X[perm, j])
        np.testing.assert_array_equal(p.ens, cases.ens[perm])
        np.testing.assert_array_equal(p.obs, cases.obs)

    def test_unknown_feature(self, small_split):
        with pytest.raises(DataError):
            permutation_importance(lambda c: None, small_split.test, "nope")


def test_skill_score():
    assert skill_score(1.0, 2.0) == 0.5
    with pytest.warns(UserWarning):
        assert math.isnan(skill_score(1.0, 0.0))


def test_write_rows_roundtrips_floats(tmp_path):
    path = tmp_path / "r.csv"
    write_rows(path, ["a", "b"], [["x", 0.1 + 0.2], ["y", np.float64(1 / 3)]])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    assert float(lines[1].split(",")[1]) == 0.1 + 0.2
