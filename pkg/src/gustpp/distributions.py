"""Probabilistic forecast representations.

Every forecast type is a small frozen container around numpy arrays. The
leading axes are batch axes, so one object can hold a single forecast or the
forecasts for a whole test set. ``cdf`` and ``quantile`` broadcast their
argument against the batch shape; ``quantiles(levels)`` evaluates a common
grid of levels for every forecast and returns shape ``batch + levels.shape``.

Types
-----
TruncatedLogistic
    Logistic distribution left-truncated at zero (location ``mu``, scale
    ``sigma``).
EnsembleForecast
    Finite, equally weighted ensemble.
DiscreteForecast
    Weighted point masses (isotonic regression and forest analogs).
HistogramForecast
    Piecewise uniform distribution on fixed bins.
BernsteinQuantile
    Quantile function given as a Bernstein polynomial.
PiecewiseLinearQuantile
    Quantile function linear between knots.
QuantileForecast
    Finite set of quantiles at fixed levels.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import comb, expit

from .exceptions import DomainError

__all__ = [
    "TruncatedLogistic",
    "EnsembleForecast",
    "DiscreteForecast",
    "HistogramForecast",
    "BernsteinQuantile",
    "PiecewiseLinearQuantile",
    "QuantileForecast",
    "softplus",
    "log_expit",
    "tlogis_cdf",
    "tlogis_pdf",
    "tlogis_quantile",
    "bernstein_basis",
    "bernstein_eval",
    "coefficients_from_increments",
    "vincentize",
    "params_average",
    "forecast_to_dict",
    "forecast_from_dict",
]


def softplus(x):
    """Numerically stable ``log(1 + exp(x))``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def log_expit(x):
    """Stable ``log(1 / (1 + exp(-x)))``."""
    return -softplus(-np.asarray(x, dtype=float))


def _as_float(a):
    return np.asarray(a, dtype=float)


def _check_levels(tau):
    tau = _as_float(tau)
    if np.any((tau < 0) | (tau > 1)):
        raise DomainError("quantile level must lie in [0, 1]")
    return tau


# ---------------------------------------------------------------------------
# truncated logistic


def tlogis_cdf(z, mu, sigma):
    """CDF of the logistic distribution left-truncated at zero."""
    z, mu, sigma = np.broadcast_arrays(_as_float(z), _as_float(mu), _as_float(sigma))
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    # 1 - F0(z) = Lambda(-(z - mu)/sigma) / Lambda(mu/sigma)
    log_surv = log_expit(-(z - mu) / sigma) - log_expit(mu / sigma)
    out = -np.expm1(np.minimum(log_surv, 0.0))
    return np.where(z > 0, out, 0.0)


def tlogis_pdf(z, mu, sigma):
    """Density of the logistic distribution left-truncated at zero."""
    z, mu, sigma = np.broadcast_arrays(_as_float(z), _as_float(mu), _as_float(sigma))
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    s = (z - mu) / sigma
    logf = log_expit(s) + log_expit(-s) - np.log(sigma) - log_expit(mu / sigma)
    return np.where(z > 0, np.exp(logf), 0.0)


def tlogis_quantile(tau, mu, sigma):
    """Quantile function of the logistic distribution left-truncated at zero."""
    tau, mu, sigma = np.broadcast_arrays(_check_levels(tau), _as_float(mu), _as_float(sigma))
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    # Lambda(-(z - mu)/sigma) = (1 - tau) * Lambda(mu/sigma)
    with np.errstate(divide="ignore"):
        log_p = np.log1p(-tau) + log_expit(mu / sigma)
        logit_p = log_p - np.log(-np.expm1(log_p))
    out = mu - sigma * logit_p
    return np.where(tau <= 0, 0.0, out)


@dataclass(frozen=True)
class TruncatedLogistic:
    """Logistic distribution with location ``mu`` and scale ``sigma`` truncated at 0."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu, sigma = np.broadcast_arrays(_as_float(self.mu), _as_float(self.sigma))
        if not np.all(np.isfinite(mu)):
            raise DomainError("mu must be finite")
        if not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
            raise DomainError("sigma must be positive and finite")
        object.__setattr__(self, "mu", mu.copy())
        object.__setattr__(self, "sigma", sigma.copy())

    @property
    def shape(self):
        return self.mu.shape

    def __len__(self):
        return len(self.mu)

    def __getitem__(self, key):
        return TruncatedLogistic(self.mu[key], self.sigma[key])

    def cdf(self, z):
        return tlogis_cdf(z, self.mu, self.sigma)

    def cdf_left(self, z):
        return self.cdf(z)

    def pdf(self, z):
        return tlogis_pdf(z, self.mu, self.sigma)

    def quantile(self, tau):
        return tlogis_quantile(tau, self.mu, self.sigma)

    def quantiles(self, levels):
        return tlogis_quantile(_as_float(levels), self.mu[..., None], self.sigma[..., None])

    def mean(self):
        r = self.mu / self.sigma
        return self.sigma * softplus(r) / expit(r)

    def median(self):
        return self.quantile(0.5)

    def sample(self, rng, size=None):
        u = rng.uniform(size=size if size is not None else self.shape)
        return self.quantile(u)

    def support(self):
        return np.zeros(self.shape), np.full(self.shape, np.inf)


# ---------------------------------------------------------------------------
# finite ensembles and weighted point masses


@dataclass(frozen=True)
class EnsembleForecast:
    """Equally weighted ensemble; the last axis holds the members."""

    members: np.ndarray

    def __post_init__(self):
        m = _as_float(self.members)
        if m.ndim == 0:
            m = m[None]
        if m.shape[-1] < 1:
            raise DomainError("an ensemble needs at least one member")
        if not np.all(np.isfinite(m)):
            raise DomainError("ensemble members must be finite")
        object.__setattr__(self, "members", m.copy())

    @property
    def shape(self):
        return self.members.shape[:-1]

    @property
    def size(self):
        return self.members.shape[-1]

    def __len__(self):
        return self.members.shape[0]

    def __getitem__(self, key):
        return EnsembleForecast(self.members[key])

    def _sorted(self):
        return np.sort(self.members, axis=-1)

    def cdf(self, z):
        z = _as_float(z)
        return np.mean(self.members <= z[..., None], axis=-1)

    def cdf_left(self, z):
        z = _as_float(z)
        return np.mean(self.members < z[..., None], axis=-1)

    def quantile(self, tau):
        """Quantiles with plotting positions ``i / (m + 1)``.

        Level ``i / (m + 1)`` maps onto the ``i``-th order statistic, so the
        ensemble range is the central ``(m - 1) / (m + 1)`` interval.
        Levels outside ``[1/(m+1), m/(m+1)]`` are clamped to the extremes.
        """
        tau = _check_levels(tau)
        xs = self._sorted()
        m = xs.shape[-1]
        pos = np.clip(tau * (m + 1) - 1.0, 0.0, m - 1.0)
        pos = np.broadcast_to(pos, xs.shape[:-1])
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, m - 1)
        lo_v = np.take_along_axis(xs, lo[..., None], axis=-1)[..., 0]
        hi_v = np.take_along_axis(xs, hi[..., None], axis=-1)[..., 0]
        return lo_v + (pos - lo) * (hi_v - lo_v)

    def quantiles(self, levels):
        levels = _check_levels(levels)
        xs = self._sorted()
        m = xs.shape[-1]
        pos = np.clip(levels * (m + 1) - 1.0, 0.0, m - 1.0)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, m - 1)
        return xs[..., lo] + (pos - lo) * (xs[..., hi] - xs[..., lo])

    def mean(self):
        return self.members.mean(axis=-1)

    def median(self):
        return np.median(self.members, axis=-1)

    def mean_difference(self):
        """``(1/m^2) sum_{i,l} |x_i - x_l|``."""
        xs = self._sorted()
        m = xs.shape[-1]
        w = 2.0 * np.arange(1, m + 1) - m - 1
        return 2.0 * np.sum(w * xs, axis=-1) / m**2

    def support(self):
        return self.members.min(axis=-1), self.members.max(axis=-1)


@dataclass(frozen=True)
class DiscreteForecast:
    """Point masses ``probs`` at sorted support points ``values`` (last axis)."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = _as_float(self.values)
        p = _as_float(self.probs)
        v, p = np.broadcast_arrays(v, p)
        if np.any(p < -1e-12):
            raise DomainError("probabilities must be non-negative")
        if not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9):
            raise DomainError("probabilities must sum to one")
        order = np.argsort(v, axis=-1, kind="stable")
        v = np.take_along_axis(v, order, axis=-1)
        p = np.clip(np.take_along_axis(p, order, axis=-1), 0.0, None)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @property
    def shape(self):
        return self.values.shape[:-1]

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, key):
        return DiscreteForecast(self.values[key], self.probs[key])

    def cdf(self, z):
        z = _as_float(z)
        return np.sum(self.probs * (self.values <= z[..., None]), axis=-1)

    def cdf_left(self, z):
        z = _as_float(z)
        return np.sum(self.probs * (self.values < z[..., None]), axis=-1)

    def quantile(self, tau):
        """Lower generalized inverse ``min{v : F(v) >= tau}``."""
        tau = _check_levels(tau)
        tau = np.broadcast_to(tau, np.broadcast_shapes(tau.shape, self.shape))
        return self._lower_inverse(tau[..., None])[..., 0]

    def quantiles(self, levels):
        levels = _check_levels(levels)
        return self._lower_inverse(np.broadcast_to(levels, self.shape + levels.shape))

    def _lower_inverse(self, tau):
        cum = np.cumsum(self.probs, axis=-1)
        cum[..., -1] = 1.0
        idx = np.sum(cum[..., None, :] < tau[..., :, None] - 1e-12, axis=-1)
        idx = np.minimum(idx, self.values.shape[-1] - 1)
        v = np.broadcast_to(self.values, idx.shape[:-1] + self.values.shape[-1:])
        return np.take_along_axis(v, idx, axis=-1)

    def mean(self):
        return np.sum(self.probs * self.values, axis=-1)

    def median(self):
        return self.quantile(0.5)

    def support(self):
        return self.values[..., 0], self.values[..., -1]


# ---------------------------------------------------------------------------
# histogram (piecewise uniform)


@dataclass(frozen=True)
class HistogramForecast:
    """Piecewise uniform distribution with bin ``edges`` and bin ``probs``.

    ``edges`` has ``N + 1`` entries on its last axis and may be shared by the
    whole batch; ``probs`` has ``N`` entries. There is no mass outside
    ``[edges[0], edges[-1]]``.
    """

    edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        e = _as_float(self.edges)
        p = _as_float(self.probs)
        if e.shape[-1] != p.shape[-1] + 1:
            raise DomainError("need exactly one more edge than probabilities")
        if np.any(np.diff(e, axis=-1) <= 0):
            raise DomainError("bin edges must be strictly increasing")
        if np.any(p < 0):
            raise DomainError("bin probabilities must be non-negative")
        if not np.all(np.abs(p.sum(axis=-1) - 1.0) <= 1e-12):
            raise DomainError("bin probabilities must sum to one")
        object.__setattr__(self, "edges", e.copy())
        object.__setattr__(self, "probs", p.copy())

    @property
    def shape(self):
        return np.broadcast_shapes(self.edges.shape[:-1], self.probs.shape[:-1])

    @property
    def n_bins(self):
        return self.probs.shape[-1]

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, key):
        edges = self.edges if self.edges.ndim == 1 else self.edges[key]
        return HistogramForecast(edges, self.probs[key])

    def _bin_index(self, y):
        """``k - 1`` with ``k = max{l : b_{l-1} <= y}`` clipped to the bins."""
        inner = self.edges[..., 1:-1]
        k = np.sum(inner <= y[..., None], axis=-1)
        return k

    def cdf(self, y):
        y = _as_float(y)
        b = np.broadcast_shapes(y.shape, self.shape)
        y_b = np.broadcast_to(y, b)
        e = np.broadcast_to(self.edges, b + self.edges.shape[-1:])
        p = np.broadcast_to(self.probs, b + self.probs.shape[-1:])
        k = self._bin_index(y_b)
        cum = np.concatenate([np.zeros(b + (1,)), np.cumsum(p, axis=-1)], axis=-1)
        lo = np.take_along_axis(e, k[..., None], axis=-1)[..., 0]
        hi = np.take_along_axis(e, k[..., None] + 1, axis=-1)[..., 0]
        pk = np.take_along_axis(p, k[..., None], axis=-1)[..., 0]
        base = np.take_along_axis(cum, k[..., None], axis=-1)[..., 0]
        out = base + pk * (y_b - lo) / (hi - lo)
        out = np.where(y_b < e[..., 0], 0.0, out)
        return np.where(y_b >= e[..., -1], 1.0, np.clip(out, 0.0, 1.0))

    def cdf_left(self, y):
        return self.cdf(y)

    def pdf(self, y):
        y = _as_float(y)
        b = np.broadcast_shapes(y.shape, self.shape)
        y_b = np.broadcast_to(y, b)
        e = np.broadcast_to(self.edges, b + self.edges.shape[-1:])
        p = np.broadcast_to(self.probs, b + self.probs.shape[-1:])
        k = self._bin_index(y_b)
        width = np.diff(e, axis=-1)
        dens = np.take_along_axis(p / width, k[..., None], axis=-1)[..., 0]
        inside = (y_b >= e[..., 0]) & (y_b < e[..., -1])
        return np.where(inside, dens, 0.0)

    def to_quantile_function(self):
        """Equivalent piecewise linear quantile function (knots at cumulative probabilities)."""
        p = np.broadcast_to(self.probs, self.shape + self.probs.shape[-1:])
        e = np.broadcast_to(self.edges, self.shape + self.edges.shape[-1:])
        levels = np.concatenate([np.zeros(self.shape + (1,)), np.minimum(np.cumsum(p, axis=-1), 1.0)], axis=-1)
        levels[..., -1] = 1.0
        return PiecewiseLinearQuantile(levels, e)

    def quantile(self, tau):
        return self.to_quantile_function().quantile(tau)

    def quantiles(self, levels):
        return self.to_quantile_function().quantiles(levels)

    def mean(self):
        mid = 0.5 * (self.edges[..., 1:] + self.edges[..., :-1])
        return np.sum(self.probs * mid, axis=-1)

    def median(self):
        return self.quantile(0.5)

    def support(self):
        e = np.broadcast_to(self.edges, self.shape + self.edges.shape[-1:])
        return e[..., 0], e[..., -1]


# ---------------------------------------------------------------------------
# Bernstein quantile functions


@lru_cache(maxsize=64)
def _binom_row(d):
    return comb(d, np.arange(d + 1))


def bernstein_basis(tau, degree):
    """Matrix of Bernstein basis polynomials ``B_{l,d}(tau)``, shape ``tau.shape + (d+1,)``."""
    tau = _as_float(tau)
    if np.any((tau < 0) | (tau > 1)):
        raise DomainError("tau must lie in [0, 1]")
    ell = np.arange(degree + 1)
    t = tau[..., None]
    with np.errstate(invalid="ignore"):
        out = _binom_row(degree) * t**ell * (1.0 - t) ** (degree - ell)
    return out


def bernstein_eval(coefficients, tau):
    """Evaluate ``sum_l alpha_l B_{l,d}(tau)`` elementwise.

    ``coefficients`` has the basis on its last axis; ``tau`` broadcasts
    against the remaining (batch) axes.
    """
    a = _as_float(coefficients)
    basis = bernstein_basis(tau, a.shape[-1] - 1)
    return np.sum(basis * a, axis=-1)


def coefficients_from_increments(increments):
    """Cumulative sum of non-negative increments -> monotone Bernstein coefficients."""
    inc = _as_float(increments)
    if np.any(inc < 0):
        raise DomainError("increments must be non-negative")
    return BernsteinQuantile(np.cumsum(inc, axis=-1))


def _bisect_cdf(qfun, y, lo_val, hi_val, n_iter=60):
    """Invert a non-decreasing quantile function on [0, 1] by bisection."""
    y = _as_float(y)
    shape = np.broadcast_shapes(y.shape, lo_val.shape)
    lo = np.zeros(shape)
    hi = np.ones(shape)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = qfun(mid) <= y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    out = np.where(y < lo_val, 0.0, out)
    return np.where(y >= hi_val, 1.0, out)


@dataclass(frozen=True)
class BernsteinQuantile:
    """Quantile function ``Q(tau) = sum_l alpha_l B_{l,d}(tau)`` with non-decreasing ``alpha``."""

    coefficients: np.ndarray

    def __post_init__(self):
        a = _as_float(self.coefficients)
        if a.ndim == 0 or a.shape[-1] < 2:
            raise DomainError("need at least two coefficients")
        if np.any(np.diff(a, axis=-1) < -1e-12 * (1.0 + np.abs(a[..., 1:]))):
            raise DomainError("Bernstein coefficients must be non-decreasing")
        object.__setattr__(self, "coefficients", a.copy())

    @property
    def degree(self):
        return self.coefficients.shape[-1] - 1

    @property
    def shape(self):
        return self.coefficients.shape[:-1]

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, key):
        return BernsteinQuantile(self.coefficients[key])

    def quantile(self, tau):
        return bernstein_eval(self.coefficients, tau)

    def quantiles(self, levels):
        basis = bernstein_basis(_check_levels(levels), self.degree)
        return self.coefficients @ basis.T

    def cdf(self, y):
        a = self.coefficients
        return _bisect_cdf(lambda t: bernstein_eval(a, t), y, a[..., 0], a[..., -1])

    def cdf_left(self, y):
        return self.cdf(y)

    def mean(self):
        return self.coefficients.mean(axis=-1)

    def median(self):
        return self.quantile(0.5)

    def support(self):
        return self.coefficients[..., 0], self.coefficients[..., -1]


# ---------------------------------------------------------------------------
# piecewise linear quantile functions and quantile sets


@dataclass(frozen=True)
class PiecewiseLinearQuantile:
    """Quantile function linear between knots ``(levels[k], values[k])``.

    Levels run from 0 to 1. Repeated levels encode jumps of the quantile
    function, repeated values encode point masses.
    """

    levels: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _as_float(self.levels)
        v = _as_float(self.values)
        t, v = np.broadcast_arrays(t, v)
        if t.shape[-1] < 2:
            raise DomainError("need at least two knots")
        if np.any(np.abs(t[..., 0]) > 1e-12) or np.any(np.abs(t[..., -1] - 1.0) > 1e-12):
            raise DomainError("knot levels must start at 0 and end at 1")
        if np.any(np.diff(t, axis=-1) < 0):
            raise DomainError("knot levels must be non-decreasing")
        if np.any(np.diff(v, axis=-1) < -1e-12 * (1.0 + np.abs(v[..., 1:]))):
            raise DomainError("quantile values must be non-decreasing")
        object.__setattr__(self, "levels", t.copy())
        object.__setattr__(self, "values", np.maximum.accumulate(v, axis=-1))

    @property
    def shape(self):
        return self.levels.shape[:-1]

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, key):
        return PiecewiseLinearQuantile(self.levels[key], self.values[key])

    def quantile(self, tau):
        tau = _check_levels(tau)
        tau = np.broadcast_to(tau, np.broadcast_shapes(tau.shape, self.shape))
        return _quantile_on_grid(self, tau[..., None])[..., 0]

    def quantiles(self, levels):
        levels = _check_levels(levels)
        return _quantile_on_grid(self, np.broadcast_to(levels, self.shape + levels.shape))

    def _cdf(self, y, strict):
        y = _as_float(y)
        t, v = self.levels, self.values
        yq = y[..., None]
        cnt = np.sum(v < yq, axis=-1) if strict else np.sum(v <= yq, axis=-1)
        n = v.shape[-1]
        k = np.clip(cnt, 1, n - 1)[..., None]
        t0 = np.take_along_axis(t, k - 1, axis=-1)[..., 0]
        t1 = np.take_along_axis(t, k, axis=-1)[..., 0]
        v0 = np.take_along_axis(v, k - 1, axis=-1)[..., 0]
        v1 = np.take_along_axis(v, k, axis=-1)[..., 0]
        gap = v1 - v0
        frac = np.where(gap > 0, (y - v0) / np.where(gap > 0, gap, 1.0), 1.0)
        out = t0 + np.clip(frac, 0.0, 1.0) * (t1 - t0)
        out = np.where(cnt == 0, 0.0, out)
        return np.where(cnt >= n, 1.0, out)

    def cdf(self, y):
        return self._cdf(y, strict=False)

    def cdf_left(self, y):
        return self._cdf(y, strict=True)

    def mean(self):
        dt = np.diff(self.levels, axis=-1)
        mid = 0.5 * (self.values[..., 1:] + self.values[..., :-1])
        return np.sum(dt * mid, axis=-1)

    def median(self):
        return self.quantile(0.5)

    def support(self):
        return self.values[..., 0], self.values[..., -1]


@dataclass(frozen=True)
class QuantileForecast:
    """Quantiles ``values`` at fixed ``levels`` in (0, 1) (shared across the batch)."""

    levels: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _as_float(self.levels)
        v = _as_float(self.values)
        if t.ndim != 1 or v.shape[-1] != t.shape[0]:
            raise DomainError("levels must be 1-D and match the last axis of values")
        if np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] >= 1:
            raise DomainError("levels must be strictly increasing inside (0, 1)")
        object.__setattr__(self, "levels", t.copy())
        object.__setattr__(self, "values", np.maximum.accumulate(v, axis=-1))

    @property
    def shape(self):
        return self.values.shape[:-1]

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, key):
        return QuantileForecast(self.levels, self.values[key])

    def _as_plq(self):
        # outer levels carry the tail mass as point masses at the extreme quantiles
        shape = self.shape
        t = np.concatenate([[0.0], self.levels, [1.0]])
        v = np.concatenate([self.values[..., :1], self.values, self.values[..., -1:]], axis=-1)
        return PiecewiseLinearQuantile(np.broadcast_to(t, shape + t.shape), v)

    def quantile(self, tau):
        return self._as_plq().quantile(tau)

    def quantiles(self, levels):
        return self._as_plq().quantiles(levels)

    def cdf(self, y):
        return self._as_plq().cdf(y)

    def cdf_left(self, y):
        return self._as_plq().cdf_left(y)

    def mean(self):
        return self._as_plq().mean()

    def median(self):
        return self.quantile(0.5)

    def support(self):
        return self.values[..., 0], self.values[..., -1]


# ---------------------------------------------------------------------------
# forecast combination


def vincentize(forecasts):
    """Average quantile functions of several forecasts of the same family.

    Bernstein forecasts are combined coefficient-wise, which equals the
    pointwise mean of the quantile functions. Histograms and piecewise linear
    quantile functions are averaged on the union of all knot levels.
    """
    forecasts = list(forecasts)
    if not forecasts:
        raise DomainError("need at least one forecast to combine")
    if all(isinstance(f, BernsteinQuantile) for f in forecasts):
        return BernsteinQuantile(np.mean([f.coefficients for f in forecasts], axis=0))
    qfs = []
    for f in forecasts:
        if isinstance(f, HistogramForecast):
            qfs.append(f.to_quantile_function())
        elif isinstance(f, PiecewiseLinearQuantile):
            qfs.append(f)
        else:
            raise DomainError(f"cannot vincentize {type(f).__name__}")
    if len(qfs) == 1:
        return qfs[0]
    shape = np.broadcast_shapes(*(q.shape for q in qfs))
    levels = np.concatenate([np.broadcast_to(q.levels, shape + q.levels.shape[-1:]) for q in qfs], axis=-1)
    levels = np.sort(levels, axis=-1)
    if levels.ndim == 1:
        levels = np.unique(levels)
    total = np.zeros(levels.shape)
    for q in qfs:
        total += _quantile_on_grid(q, levels)
    return PiecewiseLinearQuantile(levels, total / len(qfs))


def _quantile_on_grid(q, levels):
    """Evaluate ``q`` at per-forecast level grids ``levels`` (batch + (K,))."""
    t = np.broadcast_to(q.levels, levels.shape[:-1] + q.levels.shape[-1:])
    v = np.broadcast_to(q.values, levels.shape[:-1] + q.values.shape[-1:])
    n = t.shape[-1]
    k = np.clip(np.sum(t[..., None, :] < levels[..., :, None], axis=-1), 1, n - 1)
    t0 = np.take_along_axis(t, k - 1, axis=-1)
    t1 = np.take_along_axis(t, k, axis=-1)
    v0 = np.take_along_axis(v, k - 1, axis=-1)
    v1 = np.take_along_axis(v, k, axis=-1)
    span = t1 - t0
    w = np.where(span > 0, (levels - t0) / np.where(span > 0, span, 1.0), 1.0)
    return v0 + np.clip(w, 0.0, 1.0) * (v1 - v0)


def params_average(forecasts):
    """Average location and scale parameters of truncated logistic forecasts."""
    forecasts = list(forecasts)
    if not forecasts:
        raise DomainError("need at least one forecast to combine")
    mu = np.mean([f.mu for f in forecasts], axis=0)
    sigma = np.mean([f.sigma for f in forecasts], axis=0)
    return TruncatedLogistic(mu, sigma)


# ---------------------------------------------------------------------------
# JSON serialization

_TYPES = {
    "truncated_logistic": (TruncatedLogistic, ("mu", "sigma")),
    "ensemble": (EnsembleForecast, ("members",)),
    "discrete": (DiscreteForecast, ("values", "probs")),
    "histogram": (HistogramForecast, ("edges", "probs")),
    "bernstein": (BernsteinQuantile, ("coefficients",)),
    "piecewise_linear_quantile": (PiecewiseLinearQuantile, ("levels", "values")),
    "quantiles": (QuantileForecast, ("levels", "values")),
}


def forecast_to_dict(forecast):
    """JSON-ready dict with a ``"type"`` tag and the array fields as lists."""
    for tag, (cls, fields) in _TYPES.items():
        if type(forecast) is cls:
            out = {"type": tag}
            for name in fields:
                out[name] = np.asarray(getattr(forecast, name)).tolist()
            return out
    raise DomainError(f"unknown forecast type {type(forecast).__name__}")


def forecast_from_dict(data):
    try:
        cls, fields = _TYPES[data["type"]]
    except KeyError as exc:
        raise DomainError(f"unknown forecast type tag {data.get('type')!r}") from exc
    return cls(*(np.asarray(data[name], dtype=float) for name in fields))
