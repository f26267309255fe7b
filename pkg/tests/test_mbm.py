import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gustpp.exceptions import DataError
from gustpp.mbm import IDENTITY, MbmCoefficients, MbmModel, _loss_and_grad, _sub_stats, fit_mbm, fit_mbm_model, mbm_loss, mbm_transform


def biased_ensembles(rng, n=600):
    level = rng.gamma(4.0, 2.0, n)
    y = level + rng.logistic(0, 1.0, n)
    y = np.abs(y) + 0.1
    bias = np.repeat([1.5, -0.5, 2.5, 0.0], 5)
    ens = level[:, None] + bias[None, :] + rng.normal(0, 0.4, (n, 20))
    return np.abs(ens) + 0.05, y


def test_identity_leaves_members_unchanged(rng):
    x = rng.gamma(3, 2, (5, 20))
    np.testing.assert_allclose(mbm_transform(IDENTITY, x), x)


def test_fit_improves_on_identity(rng):
    ens, y = biased_ensembles(rng)
    c = fit_mbm(ens, y)
    assert mbm_loss(c, ens, y) < mbm_loss(IDENTITY, ens, y) - 0.1


def test_gradient_matches_finite_differences(rng):
    ens, y = biased_ensembles(rng, n=50)
    xs, mean, delta = _sub_stats(ens)
    th = IDENTITY.as_array() + rng.normal(0, 0.05, 10)
    _, g = _loss_and_grad(th, xs, mean, delta, y)
    h = 1e-7
    fd = np.array([
        (_loss_and_grad(th + h * e, xs, mean, delta, y)[0] - _loss_and_grad(th - h * e, xs, mean, delta, y)[0]) / (2 * h)
        for e in np.eye(10)
    ])
    np.testing.assert_allclose(g, fd, atol=1e-5)


@settings(max_examples=60)
@given(st.integers(0, 10_000))
def test_positive_stretch_preserves_member_order(seed):
    rng = np.random.default_rng(seed)
    x = rng.gamma(3, 2, 20)
    c = MbmCoefficients(rng.normal(), tuple(rng.uniform(0.5, 1.5, 4)), rng.uniform(0.1, 2), tuple(rng.uniform(0, 1, 4)))
    out = mbm_transform(c, x).reshape(4, 5)
    for k in range(4):
        np.testing.assert_array_equal(np.argsort(out[k], kind="stable"), np.argsort(x.reshape(4, 5)[k], kind="stable"))


def test_too_few_cases(rng):
    with pytest.raises(DataError):
        fit_mbm(rng.gamma(2, 2, (5, 20)), rng.gamma(2, 2, 5))


def test_model_roundtrip(small_split):
    m = fit_mbm_model(small_split.train_full)
    back = MbmModel.from_dict(m.to_dict())
    t = small_split.test[:100]
    np.testing.assert_array_equal(back.transform(t), m.transform(t))
