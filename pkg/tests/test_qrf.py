import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gustpp.distributions import QuantileForecast
from gustpp.exceptions import DataError, ModelKeyError
from gustpp.qrf import (
    fit_forest,
    fit_qrf_model,
    predict_qrf,
    qrf_oob_importance,
    read_forest_jsonl,
    weighted_quantiles,
    write_forest_jsonl,
)
from gustpp.scoring import EVAL_LEVELS


def signal_data(rng, n=300):
    X = rng.normal(size=(n, 4))
    y = 5.0 + 3.0 * (X[:, 0] > 0) + 0.3 * rng.normal(size=n)
    return X, y


@settings(max_examples=60)
@given(st.integers(0, 100_000))
def test_weighted_quantiles_match_scan(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 15))
    y = np.round(rng.uniform(0, 10, n), 1)
    w = rng.dirichlet(np.ones(n))
    levels = np.sort(rng.uniform(0.01, 0.99, 5))
    got = weighted_quantiles(y, w, levels)
    pairs = sorted(zip(y, w))
    for tau, q in zip(levels, got):
        acc = 0.0
        for v, wt in pairs:
            acc += wt
            if acc >= tau - 1e-12:
                assert q == v
                break


def test_weights_match_leaf_cooccurrence(rng):
    X, y = signal_data(rng, 80)
    f = fit_forest(X, y, n_trees=7, seed=3)
    Xt = rng.normal(size=(5, 4))
    tr, te = f.apply(X), f.apply(Xt)
    expected = np.zeros((5, 80))
    for t in range(f.n_trees):
        for c in range(5):
            same = tr[t] == te[t, c]
            expected[c, same] += 1.0 / same.sum()
    np.testing.assert_allclose(f.weights(Xt), expected / f.n_trees, atol=1e-12)
    np.testing.assert_allclose(f.weights(Xt).sum(axis=1), 1.0)


def test_leaves_respect_minimum_size(rng):
    X, y = signal_data(rng, 200)
    f = fit_forest(X, y, n_trees=10, min_node_size=5, seed=1)
    for t in range(f.n_trees):
        in_bag = np.repeat(f.train_leaves[t], f.boot_counts[t])
        _, sizes = np.unique(in_bag, return_counts=True)
        assert sizes.min() >= 5


def test_learns_step_function(rng):
    X, y = signal_data(rng)
    f = fit_forest(X, y, n_trees=100, seed=0)
    hi = f.predict_mean(np.array([[1.0, 0, 0, 0]]))[0]
    lo = f.predict_mean(np.array([[-1.0, 0, 0, 0]]))[0]
    assert hi - lo == pytest.approx(3.0, abs=0.4)
    q = f.predict_quantiles(np.array([[1.0, 0, 0, 0]]))
    assert np.all(np.diff(q) >= 0)


def test_seeded_growth_is_reproducible(rng):
    X, y = signal_data(rng, 120)
    assert fit_forest(X, y, n_trees=20, seed=9).digest() == fit_forest(X, y, n_trees=20, seed=9).digest()
    assert fit_forest(X, y, n_trees=20, seed=9).digest() != fit_forest(X, y, n_trees=20, seed=10).digest()


def test_oob_importance_ranks_signal_first(rng):
    X, y = signal_data(rng)
    f = fit_forest(X, y, n_trees=100, seed=2, names=("s", "a", "b", "c"))
    imp = qrf_oob_importance(f, X, y)
    assert max(imp, key=imp.get) == "s"
    assert imp["s"] > 10 * max(imp["a"], imp["b"], imp["c"])


def test_too_few_cases(rng):
    with pytest.raises(DataError):
        fit_forest(rng.normal(size=(6, 2)), rng.normal(size=6))


def test_predict_qrf_single_case_and_rows(rng):
    X, y = signal_data(rng, 100)
    f = fit_forest(X, y, n_trees=20, seed=0)
    out = predict_qrf(f, X[:3])
    assert isinstance(out, QuantileForecast) and out.values.shape == (3, len(EVAL_LEVELS))


def test_model_roundtrip(tmp_path, small_split):
    m = fit_qrf_model(small_split.train_full, seed=4, n_trees=15)
    write_forest_jsonl(m, tmp_path / "f.jsonl")
    back = read_forest_jsonl(tmp_path / "f.jsonl")
    t = small_split.test[:30]
    np.testing.assert_array_equal(back.predict(t).values, m.predict(t).values)
    assert all(back.forests[k].digest() == f.digest() for k, f in m.forests.items())
    with pytest.raises(ModelKeyError):
        m.lookup(77, 6)
