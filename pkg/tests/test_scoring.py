import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gustpp.distributions import (
    DiscreteForecast,
    EnsembleForecast,
    HistogramForecast,
    PiecewiseLinearQuantile,
    QuantileForecast,
    TruncatedLogistic,
)
from gustpp.exceptions import DomainError
from gustpp.scoring import (
    EVAL_LEVELS,
    NOMINAL_COVERAGE,
    brier,
    crps,
    crps_ensemble,
    crps_histogram,
    crps_numeric_oracle,
    crps_tlogis,
    crps_tlogis_grad,
    logscore,
    minimize_score,
    nll_tlogis,
    nll_tlogis_grad,
    pi_metrics,
    quantile_loss,
)

pos = st.floats(0.1, 30.0)
scale = st.floats(0.05, 8.0)


def crps_pairwise(x, y):
    # textbook form E|X - y| - E|X - X'| / 2 with an explicit double sum
    x = np.asarray(x, dtype=float)
    return np.mean(np.abs(x - y)) - 0.5 * np.mean(np.abs(x[:, None] - x[None, :]))


class TestTruncatedLogistic:
    @settings(max_examples=60, deadline=None)
    @given(st.floats(-10, 30), scale, pos)
    def test_matches_quadrature(self, mu, sigma, y):
        f = TruncatedLogistic(np.array(mu), np.array(sigma))
        assert crps_tlogis(mu, sigma, y) == pytest.approx(crps_numeric_oracle(f, y), abs=1e-7)

    def test_far_left_location_is_finite(self):
        # location deep below zero: the distribution is exponential near 0
        v = crps_tlogis(np.array([-5000.0]), np.array([2.0]), np.array([1.0]))
        assert np.all(np.isfinite(v))
        assert v[0] == pytest.approx(crps_numeric_oracle(TruncatedLogistic(np.array(-5000.0), np.array(2.0)), 1.0), abs=1e-7)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 20), st.floats(0.2, 5.0), pos)
    def test_crps_gradient_matches_finite_differences(self, mu, sigma, y):
        _, dm, ds = crps_tlogis_grad(np.array([mu]), np.array([sigma]), np.array([y]))
        h = 1e-6
        fm = (crps_tlogis(mu + h, sigma, y) - crps_tlogis(mu - h, sigma, y)) / (2 * h)
        fs = (crps_tlogis(mu, sigma + h, y) - crps_tlogis(mu, sigma - h, y)) / (2 * h)
        assert dm[0] == pytest.approx(fm, abs=1e-6)
        assert ds[0] == pytest.approx(fs, abs=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 20), st.floats(0.2, 5.0), pos)
    def test_nll_gradient_matches_finite_differences(self, mu, sigma, y):
        _, dm, dls = nll_tlogis_grad(np.array([mu]), np.array([sigma]), np.array([y]))
        h = 1e-6
        fm = (nll_tlogis(mu + h, sigma, y) - nll_tlogis(mu - h, sigma, y)) / (2 * h)
        ls = np.log(sigma)
        fs = (nll_tlogis(mu, np.exp(ls + h), y) - nll_tlogis(mu, np.exp(ls - h), y)) / (2 * h)
        assert dm[0] == pytest.approx(fm, abs=1e-6)
        assert dls[0] == pytest.approx(fs, abs=1e-6)

    def test_nll_is_negative_log_density(self):
        f = TruncatedLogistic(np.array([3.0]), np.array([1.5]))
        assert logscore(f, np.array([4.0]))[0] == pytest.approx(-np.log(f.pdf(np.array([4.0]))[0]))


class TestEnsemble:
    @settings(max_examples=80, deadline=None)
    @given(st.lists(pos, min_size=1, max_size=25), pos)
    def test_sorted_form_equals_pairwise_form(self, x, y):
        assert crps_ensemble(np.array(x), y) == pytest.approx(crps_pairwise(x, y), abs=1e-10)

    def test_single_member_is_absolute_error(self):
        assert crps_ensemble(np.array([3.0]), 5.5) == pytest.approx(2.5)

    def test_discrete_with_equal_weights_equals_ensemble(self):
        rng = np.random.default_rng(1)
        x = rng.gamma(3, 2, (50, 20))
        y = rng.gamma(3, 2, 50)
        p = np.full_like(x, 1 / 20)
        np.testing.assert_allclose(crps(DiscreteForecast(x, p), y), crps_ensemble(x, y), atol=1e-12)

    def test_discrete_matches_quadrature(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            v = rng.uniform(0, 10, 6)
            p = rng.dirichlet(np.ones(6))
            y = rng.uniform(-1, 12)
            assert crps(DiscreteForecast(v, p), y) == pytest.approx(crps_numeric_oracle(DiscreteForecast(v, p), y), abs=1e-8)


class TestHistogram:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 10_000), st.floats(-5, 40))
    def test_matches_quadrature(self, n_bins, seed, y):
        rng = np.random.default_rng(seed)
        edges = np.concatenate([[rng.uniform(0, 3)], rng.uniform(0.1, 4, n_bins)]).cumsum()
        p = rng.dirichlet(np.ones(n_bins))
        f = HistogramForecast(edges, p)
        assert crps_histogram(edges, p, y) == pytest.approx(crps_numeric_oracle(f, y), abs=1e-8)

    def test_single_bin_is_uniform_crps(self):
        # uniform on [a, b], y inside: ((y-a)^3 + (b-y)^3) / (3 (b-a)^2)
        a, b, y = 1.0, 4.0, 2.0
        expected = ((y - a) ** 3 + (b - y) ** 3) / (3 * (b - a) ** 2)
        assert crps_histogram(np.array([a, b]), np.array([1.0]), y) == pytest.approx(expected)

    def test_outside_adds_distance(self):
        e, p = np.array([0.0, 1.0, 3.0]), np.array([0.4, 0.6])
        inside = crps_histogram(e, p, 3.0)
        assert crps_histogram(e, p, 5.0) == pytest.approx(inside + 2.0)

    def test_logscore_uses_bin_density(self):
        f = HistogramForecast(np.array([0.0, 2.0, 3.0]), np.array([[0.5, 0.5]]))
        assert logscore(f, np.array([2.5]))[0] == pytest.approx(-np.log(0.5))


class TestQuantileBased:
    def test_quantile_loss_convention(self):
        # indicator is 1{q >= y}: at q == y the loss is 0 either way
        assert quantile_loss(2.0, 3.0, 0.9) == pytest.approx(0.9)
        assert quantile_loss(4.0, 3.0, 0.9) == pytest.approx(0.1)
        assert quantile_loss(3.0, 3.0, 0.3) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-2, 25))
    def test_piecewise_linear_exact(self, seed, y):
        rng = np.random.default_rng(seed)
        k = rng.integers(2, 8)
        t = np.sort(rng.uniform(0, 1, k))
        t[0], t[-1] = 0.0, 1.0
        v = np.sort(rng.uniform(0, 20, k))
        f = PiecewiseLinearQuantile(t, v)
        assert crps(f, y) == pytest.approx(crps_numeric_oracle(f, y), abs=1e-8)

    def test_quantile_grid_approximates_crps(self):
        f = TruncatedLogistic(np.array([6.0]), np.array([1.5]))
        q = QuantileForecast(EVAL_LEVELS, f.quantiles(EVAL_LEVELS))
        assert crps(q, np.array([7.0]))[0] == pytest.approx(crps(f, np.array([7.0]))[0], rel=0.02)

    def test_unknown_forecast_type(self):
        with pytest.raises(DomainError):
            crps(object(), 1.0)


class TestPointScores:
    def test_pi_metrics_of_ensemble_span_the_members(self):
        x = np.arange(1.0, 21.0)[None, :]
        length, covered = pi_metrics(EnsembleForecast(x), np.array([25.0]))
        assert length[0] == pytest.approx(19.0)
        assert covered[0] == 0.0
        assert NOMINAL_COVERAGE == pytest.approx(19 / 21)

    def test_brier_threshold(self):
        f = EnsembleForecast(np.array([[1.0, 2.0, 3.0, 4.0]]))
        assert brier(f, np.array([5.0]), 2.5)[0] == pytest.approx((0.5 - 1.0) ** 2)
        with pytest.raises(DomainError):
            brier(f, np.array([5.0]), 0.0)


class TestMinimizeScore:
    def test_recovers_quadratic_minimum(self):
        out = minimize_score(lambda th: float(np.sum((th - [1.0, -2.0]) ** 2)), [0.0, 0.0])
        np.testing.assert_allclose(out.x, [1.0, -2.0], atol=1e-5)
        assert out.fun <= out.init_fun

    def test_rejects_non_finite_start(self):
        with pytest.raises(DomainError):
            minimize_score(lambda th: np.inf, [0.0])


def test_oracle_itself_on_uniform():
    # quadrature oracle versus a hand integral of the uniform on [0, 2], y = 0.5
    f = HistogramForecast(np.array([0.0, 2.0]), np.array([1.0]))
    hand = integrate.quad(lambda z: (z / 2) ** 2, 0, 0.5)[0] + integrate.quad(lambda z: (z / 2 - 1) ** 2, 0.5, 2)[0]
    assert crps_numeric_oracle(f, 0.5) == pytest.approx(hand, abs=1e-12)


def test_logscore_flags_zero_density():
    f = HistogramForecast(np.array([0.0, 2.0]), np.array([1.0]))
    assert logscore(f, np.array([1.0]))[0] == pytest.approx(np.log(2.0))
    with pytest.warns(RuntimeWarning, match="zero predictive density"):
        assert np.isinf(logscore(f, np.array([3.0]))[0])
