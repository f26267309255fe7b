"""Local, seasonal EMOS with a truncated logistic predictive distribution.

For each station, lead time and month a separate model

    mu    = a + exp(b_tilde) * ensemble mean
    sigma = exp(c + d * log(ensemble sd))

is fitted by minimizing the mean CRPS over the cases of the month and its two
neighbours. The exponential parameterization keeps the slope positive.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import ensemble_sd, floor_spread, seasonal_months
from .distributions import TruncatedLogistic
from .exceptions import DataError, ModelKeyError
from .scoring import crps_tlogis_grad, minimize_score

__all__ = [
    "EmosCoefficients",
    "EmosModel",
    "seasonal_window",
    "emos_parameters",
    "fit_emos",
    "fit_emos_model",
    "predict_emos",
]

log = logging.getLogger(__name__)

SPREAD_FLOOR = 1e-4
MIN_CASES = 30


def seasonal_window(month):
    """Months used to train the model for ``month``: the previous, same and next month."""
    return seasonal_months(month)


@dataclass(frozen=True)
class EmosCoefficients:
    a: float
    b_tilde: float
    c: float
    d: float

    @property
    def b(self):
        return float(np.exp(self.b_tilde))

    def as_array(self):
        return np.array([self.a, self.b_tilde, self.c, self.d])


def emos_parameters(theta, ens_mean, ens_sd):
    """Location and scale of the EMOS forecast for parameters ``(a, b_tilde, c, d)``."""
    a, bt, c, d = theta
    log_s = np.log(floor_spread(ens_sd, SPREAD_FLOOR))
    mu = a + np.exp(bt) * ens_mean
    sigma = np.exp(c + d * log_s)
    return mu, sigma


def _loss_and_grad(theta, xbar, log_s, y):
    a, bt, c, d = theta
    eb = np.exp(bt)
    mu = a + eb * xbar
    sigma = np.exp(np.clip(c + d * log_s, -30.0, 30.0))
    crps, d_mu, d_sigma = crps_tlogis_grad(mu, sigma, y)
    n = len(y)
    g = np.array([
        d_mu.sum(),
        (d_mu * eb * xbar).sum(),
        (d_sigma * sigma).sum(),
        (d_sigma * sigma * log_s).sum(),
    ]) / n
    return crps.mean(), g


def fit_emos(ensembles, y, min_cases=MIN_CASES, init=(0.0, 0.0, 0.0, 0.0)):
    """Fit EMOS coefficients by minimum CRPS estimation.

    Parameters
    ----------
    ensembles : ndarray, shape (n, m)
    y : ndarray, shape (n,)
    min_cases : int
        Smallest accepted training set.

    Returns
    -------
    EmosCoefficients

    Raises
    ------
    DataError
        Fewer than ``min_cases`` cases.
    OptimizationError
        Neither L-BFGS-B nor the Nelder-Mead fallback converged.
    """
    ensembles = np.asarray(ensembles, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < min_cases:
        raise DataError(f"need at least {min_cases} training cases, got {len(y)}")
    xbar = ensembles.mean(axis=1)
    log_s = np.log(floor_spread(ensemble_sd(ensembles), SPREAD_FLOOR))
    res = minimize_score(lambda th: _loss_and_grad(th, xbar, log_s, y), np.asarray(init, float), jac=True)
    return EmosCoefficients(*map(float, res.x))


@dataclass(frozen=True)
class EmosModel:
    """Coefficients keyed by ``(station, lead_time, month)``."""

    coefficients: dict

    def lookup(self, station, lead, month):
        try:
            return self.coefficients[(int(station), int(lead), int(month))]
        except KeyError:
            raise ModelKeyError(f"no EMOS model for station {station}, lead {lead}, month {month}") from None

    def predict(self, cases):
        """Truncated logistic forecasts for every case of a ``CaseSet``."""
        theta = np.empty((len(cases), 4))
        keys = np.stack([cases.station, cases.lead, cases.month], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        table = np.array([self.lookup(*k).as_array() for k in uniq])
        theta = table[inv.ravel()]
        mu = theta[:, 0] + np.exp(theta[:, 1]) * cases.ens_mean
        sigma = np.exp(theta[:, 2] + theta[:, 3] * np.log(floor_spread(cases.ens_sd, SPREAD_FLOOR)))
        return TruncatedLogistic(mu, sigma)

    def to_dict(self):
        return {
            "method": "emos",
            "keys": [
                {"station": k[0], "lead": k[1], "month": k[2], "a": v.a, "b_tilde": v.b_tilde, "c": v.c, "d": v.d}
                for k, v in sorted(self.coefficients.items())
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls({
            (e["station"], e["lead"], e["month"]): EmosCoefficients(e["a"], e["b_tilde"], e["c"], e["d"])
            for e in d["keys"]
        })


def _local_windows(cases, min_cases):
    """Yield ``(station, lead, month, ens, y)`` training sets of the seasonal windows.

    Windows with fewer than ``min_cases`` cases fall back to all months of the
    station and lead time.
    """
    ok = cases.has_obs
    st_all, ld_all, mo_all = cases.station[ok], cases.lead[ok], cases.month[ok]
    ens_all, y_all = cases.ens[ok], cases.obs[ok]
    for s in np.unique(st_all):
        for ld in np.unique(ld_all[st_all == s]):
            sel = (st_all == s) & (ld_all == ld)
            ens_sl, y_sl, mo_sl = ens_all[sel], y_all[sel], mo_all[sel]
            for month in range(1, 13):
                w = np.isin(mo_sl, sorted(seasonal_window(month)))
                if w.sum() < min_cases:
                    log.warning(
                        "station %s lead %s month %s: %d cases in window, using all months",
                        s, ld, month, int(w.sum()),
                    )
                    w = np.ones_like(w)
                yield int(s), int(ld), month, ens_sl[w], y_sl[w]


def fit_emos_model(cases, min_cases=MIN_CASES, jobs=1):
    """Fit one EMOS model per station, lead time and month.

    Parameters
    ----------
    cases : CaseSet
        Training cases (rows without observation are ignored).
    jobs : int
        Number of parallel worker processes.
    """
    tasks = list(_local_windows(cases, min_cases))
    fits = _run(tasks, lambda t: fit_emos(t[3], t[4], min_cases=min(min_cases, len(t[4]))), jobs)
    return EmosModel({(t[0], t[1], t[2]): f for t, f in zip(tasks, fits)})


def _run(tasks, fn, jobs):
    if jobs == 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs)(delayed(fn)(t) for t in tasks)


def predict_emos(model, case):
    """Forecast for one :class:`ForecastCase`."""
    month = case.date.month
    coef = model.lookup(case.station_id, case.lead_time_h, month)
    mu, sigma = emos_parameters(coef.as_array(), case.ensemble.mean(), ensemble_sd(case.ensemble))
    return TruncatedLogistic(mu, sigma)
