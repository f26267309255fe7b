"""Member-by-member postprocessing with sub-ensemble specific coefficients.

Member ``i`` of sub-ensemble ``k`` is mapped to

    x_i' = (a + b_k * mean_k) + (c + d_k / delta_k) * (x_i - mean_k)

where ``mean_k`` and ``delta_k`` are the mean and the mean absolute
difference of the five members of sub-ensemble ``k``. Coefficients are
estimated by minimizing the mean CRPS of the adjusted ensembles, with the
same local and seasonal training sets as EMOS.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import N_MEMBERS, N_SUBENSEMBLES
from .distributions import EnsembleForecast
from .emos import MIN_CASES, _local_windows, _run
from .exceptions import DataError, ModelKeyError
from .scoring import crps_ensemble, minimize_score

__all__ = ["MbmCoefficients", "MbmModel", "mbm_transform", "fit_mbm", "fit_mbm_model", "predict_mbm", "IDENTITY"]

DELTA_FLOOR = 1e-4
SUB_SIZE = N_MEMBERS // N_SUBENSEMBLES


@dataclass(frozen=True)
class MbmCoefficients:
    a: float
    b: tuple
    c: float
    d: tuple

    def __post_init__(self):
        if len(self.b) != N_SUBENSEMBLES or len(self.d) != N_SUBENSEMBLES:
            raise ValueError("need four b and four d coefficients")
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))

    def as_array(self):
        return np.array([self.a, *self.b, self.c, *self.d])

    @classmethod
    def from_array(cls, theta):
        t = [float(v) for v in theta]
        return cls(t[0], tuple(t[1:5]), t[5], tuple(t[6:10]))

    def stretch(self, delta):
        """Stretch factors ``c + d_k / delta_k`` for sub-ensemble spreads ``delta``."""
        return self.c + np.asarray(self.d) / np.maximum(delta, DELTA_FLOOR)


IDENTITY = MbmCoefficients(0.0, (1.0,) * 4, 1.0, (0.0,) * 4)


def _sub_stats(x):
    """Per sub-ensemble mean and mean absolute difference, shape (..., 4)."""
    xs = x.reshape(x.shape[:-1] + (N_SUBENSEMBLES, SUB_SIZE))
    mean = xs.mean(axis=-1)
    srt = np.sort(xs, axis=-1)
    w = 2.0 * np.arange(1, SUB_SIZE + 1) - SUB_SIZE - 1
    delta = 2.0 * np.sum(w * srt, axis=-1) / SUB_SIZE**2
    return xs, mean, np.maximum(delta, DELTA_FLOOR)


def mbm_transform(coeffs, x):
    """Adjust 20-member ensembles (last axis) with MBM coefficients.

    Members ``5(k-1)+1 .. 5k`` form sub-ensemble ``k``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != N_MEMBERS:
        raise DataError(f"MBM needs {N_MEMBERS} members")
    theta = coeffs.as_array() if isinstance(coeffs, MbmCoefficients) else np.asarray(coeffs, float)
    xs, mean, delta = _sub_stats(x)
    a, b, c, d = theta[0], theta[1:5], theta[5], theta[6:10]
    out = (a + b * mean)[..., None] + (c + d / delta)[..., None] * (xs - mean[..., None])
    return out.reshape(x.shape)


def _loss_and_grad(theta, xs, mean, delta, y):
    a, b, c, d = theta[0], theta[1:5], theta[5], theta[6:10]
    dev = xs - mean[..., None]
    xt = (a + b * mean)[..., None] + (c + d / delta)[..., None] * dev
    flat = xt.reshape(len(y), N_MEMBERS)
    m = N_MEMBERS
    loss = crps_ensemble(flat, y).mean()
    # subgradient of the ensemble CRPS w.r.t. each adjusted member
    ranks = np.empty_like(flat)
    order = np.argsort(flat, axis=1)
    np.put_along_axis(ranks, order, np.arange(1, m + 1, dtype=float)[None, :].repeat(len(y), 0), axis=1)
    g_x = np.sign(flat - y[:, None]) / m - (2.0 * ranks - m - 1) / m**2
    g_x = g_x.reshape(xs.shape) / len(y)
    g_sub = g_x.sum(axis=-1)
    g_dev = (g_x * dev).sum(axis=-1)
    grad = np.concatenate([
        [g_sub.sum()],
        (g_sub * mean).sum(axis=0),
        [g_dev.sum()],
        (g_dev / delta).sum(axis=0),
    ])
    return loss, grad


def fit_mbm(ensembles, y, min_cases=MIN_CASES, init=IDENTITY):
    """Fit MBM coefficients by minimizing the mean ensemble CRPS.

    Raises
    ------
    DataError
        Fewer than ``min_cases`` cases.
    OptimizationError
        Neither optimizer converged.
    """
    x = np.asarray(ensembles, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < min_cases:
        raise DataError(f"need at least {min_cases} training cases, got {len(y)}")
    xs, mean, delta = _sub_stats(x)
    theta0 = init.as_array() if isinstance(init, MbmCoefficients) else np.asarray(init, float)
    res = minimize_score(
        lambda th: _loss_and_grad(th, xs, mean, delta, y), theta0, jac=True, fallback_maxiter=4000,
    )
    return MbmCoefficients.from_array(res.x)


def mbm_loss(coeffs, ensembles, y):
    """Mean CRPS of the adjusted ensembles (the training objective)."""
    return float(crps_ensemble(mbm_transform(coeffs, ensembles), y).mean())


@dataclass(frozen=True)
class MbmModel:
    """Coefficients keyed by ``(station, lead_time, month)``."""

    coefficients: dict

    def lookup(self, station, lead, month):
        try:
            return self.coefficients[(int(station), int(lead), int(month))]
        except KeyError:
            raise ModelKeyError(f"no MBM model for station {station}, lead {lead}, month {month}") from None

    def coefficient_table(self, cases):
        keys = np.stack([cases.station, cases.lead, cases.month], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        table = np.array([self.lookup(*k).as_array() for k in uniq])
        return table[inv.ravel()]

    def transform(self, cases):
        theta = self.coefficient_table(cases)
        xs, mean, delta = _sub_stats(cases.ens)
        a, b, c, d = theta[:, :1], theta[:, 1:5], theta[:, 5:6], theta[:, 6:10]
        out = (a + b * mean)[..., None] + (c + d / delta)[..., None] * (xs - mean[..., None])
        return out.reshape(len(cases), N_MEMBERS)

    def predict(self, cases):
        return EnsembleForecast(self.transform(cases))

    def to_dict(self):
        return {
            "method": "mbm",
            "keys": [
                {"station": k[0], "lead": k[1], "month": k[2], "a": v.a, "b": list(v.b), "c": v.c, "d": list(v.d)}
                for k, v in sorted(self.coefficients.items())
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls({
            (e["station"], e["lead"], e["month"]): MbmCoefficients(e["a"], tuple(e["b"]), e["c"], tuple(e["d"]))
            for e in d["keys"]
        })


def fit_mbm_model(cases, min_cases=MIN_CASES, jobs=1):
    """Fit one MBM model per station, lead time and month (seasonal windows as in EMOS)."""
    tasks = list(_local_windows(cases, min_cases))
    fits = _run(tasks, lambda t: fit_mbm(t[3], t[4], min_cases=min(min_cases, len(t[4]))), jobs)
    return MbmModel({(t[0], t[1], t[2]): f for t, f in zip(tasks, fits)})


def predict_mbm(model, case):
    """Adjusted ensemble for one :class:`ForecastCase`."""
    coef = model.lookup(case.station_id, case.lead_time_h, case.date.month)
    return EnsembleForecast(mbm_transform(coef, case.ensemble))
