import numpy as np
import pytest

from gustpp.distributions import TruncatedLogistic, tlogis_quantile
from gustpp.emos import (
    EmosCoefficients,
    EmosModel,
    _loss_and_grad,
    emos_parameters,
    fit_emos,
    fit_emos_model,
    seasonal_window,
)
from gustpp.exceptions import DataError, ModelKeyError
from gustpp.scoring import crps


def emos_sample(rng, theta, n=4000):
    ens = rng.gamma(4.0, 2.0, (n, 1)) + rng.normal(0, 1.0, (n, 20)) * rng.uniform(0.3, 2.0, (n, 1))
    ens = np.abs(ens) + 0.1
    mu, sigma = emos_parameters(theta, ens.mean(axis=1), ens.std(axis=1, ddof=1))
    y = tlogis_quantile(rng.uniform(size=n), mu, sigma)
    return ens, y


def test_recovers_generating_coefficients(rng):
    theta = (0.8, np.log(1.1), 0.2, 0.7)
    ens, y = emos_sample(rng, theta)
    c = fit_emos(ens, y)
    np.testing.assert_allclose(c.as_array(), theta, atol=0.15)


def test_analytic_gradient(rng):
    ens, y = emos_sample(rng, (0.5, 0.0, 0.0, 0.5), n=200)
    xbar = ens.mean(axis=1)
    log_s = np.log(ens.std(axis=1, ddof=1))
    th = np.array([0.3, 0.1, -0.2, 0.6])
    _, g = _loss_and_grad(th, xbar, log_s, y)
    h = 1e-6
    fd = [(_loss_and_grad(th + h * e, xbar, log_s, y)[0] - _loss_and_grad(th - h * e, xbar, log_s, y)[0]) / (2 * h) for e in np.eye(4)]
    np.testing.assert_allclose(g, fd, atol=1e-6)


def test_fit_beats_raw_statistics(rng):
    ens, y = emos_sample(rng, (1.5, np.log(0.9), 0.4, 0.5), n=1000)
    c = fit_emos(ens, y)
    mu, sigma = emos_parameters(c.as_array(), ens.mean(axis=1), ens.std(axis=1, ddof=1))
    naive = TruncatedLogistic(ens.mean(axis=1), ens.std(axis=1, ddof=1))
    assert crps(TruncatedLogistic(mu, sigma), y).mean() < crps(naive, y).mean()


def test_too_few_cases(rng):
    with pytest.raises(DataError):
        fit_emos(rng.gamma(2, 2, (10, 20)), rng.gamma(2, 2, 10))


def test_seasonal_window():
    assert set(seasonal_window(1)) == {12, 1, 2}


def test_model_prediction_and_serialization(small_split):
    m = fit_emos_model(small_split.train_full)
    f = m.predict(small_split.test)
    assert f.shape == (len(small_split.test),)
    back = EmosModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.predict(small_split.test).mu, f.mu)
    with pytest.raises(ModelKeyError):
        m.lookup(99, 6, 1)


def test_one_model_per_station_lead_month(small_split):
    m = fit_emos_model(small_split.train_full)
    assert len(m.coefficients) == 4 * 2 * 12
    assert all(isinstance(c, EmosCoefficients) for c in m.coefficients.values())
