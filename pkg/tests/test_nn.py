import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gustpp.distributions import BernsteinQuantile, HistogramForecast, TruncatedLogistic
from gustpp.exceptions import ConfigError, DataError, ModelKeyError
from gustpp.nn import (
    Adam,
    BqnHead,
    DrnHead,
    HenHead,
    NetworkSpec,
    NnModel,
    aggregate,
    build_hen_binning,
    fit_nn_model,
    init_network,
    make_head,
    train_network,
)
from gustpp.scoring import TRAIN_LEVELS, crps_tlogis, quantile_loss
from oracles import network_gradient_error

HEADS = [DrnHead(), BqnHead(), HenHead(np.linspace(0.0, 20.0, 21))]


@pytest.mark.parametrize("head", HEADS, ids=lambda h: h.name)
def test_backprop_matches_finite_differences(head):
    rng = np.random.default_rng(7)
    assert max(network_gradient_error(head, rng) for _ in range(3)) < 1e-5


def test_drn_loss_is_crps_of_softplus_parameters():
    o = np.array([[1.0, -0.5], [3.0, 0.2]])
    y = np.array([2.0, 1.0])
    loss, _ = DrnHead().loss_grad(o, y)
    mu, sigma = np.log1p(np.exp(o[:, 0])), np.log1p(np.exp(o[:, 1]))
    np.testing.assert_allclose(loss, crps_tlogis(mu, sigma, y))


def test_bqn_loss_is_mean_quantile_loss():
    rng = np.random.default_rng(0)
    head = BqnHead()
    o = rng.normal(size=(3, 13))
    y = np.array([1.0, 4.0, 9.0])
    loss, _ = head.loss_grad(o, y)
    q = head.forecast(o).quantiles(TRAIN_LEVELS)
    np.testing.assert_allclose(loss, quantile_loss(q, y[:, None], TRAIN_LEVELS).mean(axis=1), atol=1e-12)


@settings(max_examples=40)
@given(st.lists(st.floats(-8, 8), min_size=13, max_size=13))
def test_bqn_quantile_function_is_monotone(o):
    f = BqnHead().forecast(np.array([o]))
    q = f.quantiles(np.linspace(0, 1, 201))
    assert np.all(np.diff(q, axis=-1) >= -1e-10)
    assert np.all(q >= 0)


def test_hen_cross_entropy():
    head = HenHead(np.array([0.0, 1.0, 3.0, 6.0]))
    o = np.array([[0.0, 1.0, 2.0]])
    loss, g = head.loss_grad(o, head.target(np.array([2.0])))
    p = np.exp(o) / np.exp(o).sum()
    assert loss[0] == pytest.approx(-np.log(p[0, 1]))
    np.testing.assert_allclose(g, p - np.array([[0, 1, 0]]))
    assert isinstance(head.forecast(o), HistogramForecast)


def test_hen_clamps_outside_values(caplog):
    head = HenHead(np.array([1.0, 2.0, 3.0]))
    assert head.target(np.array([0.5, 9.0])).tolist() == [0, 1]
    assert "outside" in caplog.text


def test_head_serialization():
    for h in HEADS:
        assert make_head(h.to_dict()).to_dict() == h.to_dict()
    with pytest.raises(ConfigError):
        make_head({"name": "cnn"})


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_binning_respects_caps_and_counts(seed):
    rng = np.random.default_rng(seed)
    y = np.round(rng.gamma(2.0, 3.0, 800), 1) + 0.1
    b = build_hen_binning(y)
    assert b.n_bins == 20
    # merges never break a cap; a bin above its cap holds a single isolated value
    u = np.unique(y)
    first, last, inner = b.caps
    caps = np.r_[first, np.full(b.n_bins - 2, inner), last]
    for lo, hi, w, c in zip(b.edges[:-1], b.edges[1:], b.widths, caps):
        if w > c + 1e-12:
            assert np.sum((u >= lo) & (u < hi)) == 1
    assert b.caps == (2.0, 7.0, 5.0)
    assert b.counts.sum() == len(y)
    assert b.edges[0] >= 0 and b.edges[-1] > y.max()
    # every observation lies inside the bins
    assert np.all((y >= b.edges[0]) & (y < b.edges[-1]))


def test_binning_on_dense_data_respects_caps():
    y = np.round(np.random.default_rng(0).uniform(0.5, 30, 3000), 1)
    assert build_hen_binning(y).respects_caps()


def test_binning_needs_enough_distinct_values():
    with pytest.raises(DataError):
        build_hen_binning(np.arange(1.0, 10.0))


def test_adam_first_step_moves_by_learning_rate():
    # bias correction makes the first step lr * sign(grad)
    theta = np.zeros(3)
    Adam(3, lr=0.1).step(theta, np.array([2.0, -0.5, 1e-3]))
    np.testing.assert_allclose(theta, [-0.1, 0.1, -0.1], rtol=1e-3)


def test_unknown_station_has_no_embedding():
    net = init_network(NetworkSpec(2, 2), [1, 2], np.random.default_rng(0))
    with pytest.raises(DataError):
        net.rows([3])


def test_early_stopping_restores_best_epoch():
    rng = np.random.default_rng(1)
    n = 400
    X = rng.normal(size=(n, 3))
    y = np.abs(4 + 2 * X[:, 0] + rng.logistic(0, 0.5, n)) + 0.1
    st_ = rng.integers(1, 3, n)
    spec = NetworkSpec(3, 2, hidden=(8,), epochs=60, patience=5, batch_size=32, learning_rate=5e-3)
    res = train_network(DrnHead(), (X[:300], st_[:300], y[:300]), (X[300:], st_[300:], y[300:]), spec, [1, 2], seed=0)
    val = [h[2] for h in res.history]
    assert res.best_epoch == int(np.argmin(val)) + 1
    assert len(res.history) <= res.best_epoch + spec.patience
    assert val[res.best_epoch - 1] < val[0]


def test_aggregation_rules():
    t = [TruncatedLogistic(np.array([1.0]), np.array([1.0])), TruncatedLogistic(np.array([3.0]), np.array([2.0]))]
    assert float(aggregate("drn", t).mu[0]) == 2.0
    b = [BernsteinQuantile(np.cumsum(np.ones((1, 13)), axis=1))] * 2
    assert isinstance(aggregate("bqn", b), BernsteinQuantile)


@pytest.mark.parametrize("head", ["drn", "bqn", "hen"])
def test_fit_predict_roundtrip(small_split, head):
    m = fit_nn_model(small_split.train, small_split.validation, head, n_members=2, seed=3,
                     spec_overrides={"epochs": 4})
    test = small_split.test[:50]
    f = m.predict(test)
    assert len(f) == 50
    back = NnModel.from_dict(m.to_dict())
    np.testing.assert_allclose(back.predict(test).quantiles(np.array([0.1, 0.5, 0.9])), f.quantiles(np.array([0.1, 0.5, 0.9])))
    assert set(m.logs) == {(ld, k) for ld in (6, 15) for k in range(2)}
    with pytest.raises(ModelKeyError):
        m.lookup(3)


def test_training_is_seeded(small_split):
    kw = dict(n_members=1, seed=5, spec_overrides={"epochs": 2})
    a = fit_nn_model(small_split.train, small_split.validation, "drn", **kw)
    b = fit_nn_model(small_split.train, small_split.validation, "drn", **kw)
    np.testing.assert_array_equal(a.predict(small_split.test).mu, b.predict(small_split.test).mu)
