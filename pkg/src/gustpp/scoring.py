"""Proper scoring rules, consistent scoring functions and optimum score estimation.

All score functions are vectorized over the batch axes of the forecast and
return one value per forecast case.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.special import expit

from .distributions import (
    BernsteinQuantile,
    DiscreteForecast,
    EnsembleForecast,
    HistogramForecast,
    PiecewiseLinearQuantile,
    QuantileForecast,
    TruncatedLogistic,
    bernstein_basis,
    softplus,
)
from .exceptions import DomainError, OptimizationError

__all__ = [
    "TRAIN_LEVELS",
    "EVAL_LEVELS",
    "NOMINAL_COVERAGE",
    "crps",
    "crps_tlogis",
    "crps_tlogis_grad",
    "nll_tlogis",
    "nll_tlogis_grad",
    "crps_ensemble",
    "crps_discrete",
    "crps_histogram",
    "crps_pwlinear",
    "crps_quantiles",
    "crps_numeric_oracle",
    "logscore",
    "quantile_loss",
    "squared_error",
    "forecast_error",
    "brier",
    "pi_metrics",
    "OptimizeOutcome",
    "minimize_score",
]

log = logging.getLogger(__name__)

#: Quantile levels of the training loss for quantile-based networks (1%, ..., 99%).
TRAIN_LEVELS = np.arange(1, 100) / 100.0
#: Evaluation grid: 125 equidistant levels i/126. Contains the median and the
#: bounds 1/21 and 20/21 of the 20-member-equivalent prediction interval.
EVAL_LEVELS = np.arange(1, 126) / 126.0
#: Nominal coverage of the central interval spanned by a 20-member ensemble.
NOMINAL_COVERAGE = 19.0 / 21.0

# below this value of mu/sigma the truncated logistic is an exponential
# distribution to machine precision
_MIN_RATIO = -600.0


def _f(a):
    return np.asarray(a, dtype=float)


# ---------------------------------------------------------------------------
# truncated logistic


def _sp_minus_expit_over_sq(r):
    """``(softplus(r) - expit(r)) / expit(r)**2`` without cancellation for r << 0."""
    r = _f(r)
    u = np.exp(np.minimum(r, 0.0))
    q = expit(r)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        direct = (softplus(r) - q) / (q * q)
    # softplus - expit = sum_{k>=2} (-1)^k (k-1)/k u^k
    k = np.arange(2, 16)
    coef = (-1.0) ** k * (k - 1) / k
    series = np.sum(coef * u[..., None] ** (k - 2), axis=-1) * (1.0 + u) ** 2
    return np.where(r < -4.0, series, direct)


def _tlogis_crps_parts(mu, sigma, y):
    mu, sigma, y = np.broadcast_arrays(_f(mu), _f(sigma), _f(y))
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise DomainError("sigma must be positive and finite")
    r = np.maximum(mu / sigma, _MIN_RATIO)
    mu_eff = r * sigma
    z = (y - mu_eff) / sigma
    l = -r
    q = expit(r)
    sp_r = softplus(r)
    K = _sp_minus_expit_over_sq(r)
    pos = y > 0
    sp_mz = softplus(-z)
    # sp_r - sp_mz is small when y is near 0; both terms are accurate on their own
    C_pos = (z - l) - 2.0 * (sp_r - sp_mz) / q + K
    C_neg = (l - z) + K
    C = np.where(pos, C_pos, C_neg)
    return mu, sigma, y, z, l, q, sp_r, sp_mz, K, pos, C


def crps_tlogis(mu, sigma, y):
    """CRPS of the logistic distribution left-truncated at zero.

    Parameters
    ----------
    mu, sigma : array_like
        Location and scale (``sigma > 0``).
    y : array_like
        Observation.

    Returns
    -------
    ndarray
        Closed-form CRPS, broadcast over the inputs.
    """
    parts = _tlogis_crps_parts(mu, sigma, y)
    sigma, C = parts[1], parts[-1]
    return sigma * C


def crps_tlogis_grad(mu, sigma, y):
    """CRPS of the truncated logistic with its partial derivatives.

    Returns
    -------
    crps, d_mu, d_sigma : ndarray
    """
    mu, sigma, y, z, l, q, sp_r, sp_mz, K, pos, C = _tlogis_crps_parts(mu, sigma, y)
    C_z = np.where(pos, 1.0 - 2.0 * expit(-z) / q, -1.0)
    C_l = 2.0 * (1.0 - q) * np.where(pos, K - (sp_r - sp_mz) / q, K)
    clipped = mu / sigma < _MIN_RATIO
    d_mu = np.where(clipped, 0.0, -(C_z + C_l))
    d_sigma = C - z * C_z - l * C_l
    return sigma * C, d_mu, d_sigma


def nll_tlogis(mu, sigma, y):
    """Negative log-likelihood of the truncated logistic (``inf`` for ``y <= 0``)."""
    mu, sigma, y = np.broadcast_arrays(_f(mu), _f(sigma), _f(y))
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    z = (y - mu) / sigma
    out = np.log(sigma) + softplus(z) + softplus(-z) - softplus(-mu / sigma)
    return np.where(y > 0, out, np.inf)


def nll_tlogis_grad(mu, sigma, y):
    """Negative log-likelihood with derivatives w.r.t. ``mu`` and ``log(sigma)``."""
    mu, sigma, y = np.broadcast_arrays(_f(mu), _f(sigma), _f(y))
    nll = nll_tlogis(mu, sigma, y)
    z = (y - mu) / sigma
    l = -mu / sigma
    d_mu = (1.0 - 2.0 * expit(z) + expit(l)) / sigma
    d_logsigma = 1.0 - z * (2.0 * expit(z) - 1.0) + l * expit(l)
    return nll, d_mu, d_logsigma


# ---------------------------------------------------------------------------
# ensembles and point masses


def crps_ensemble(members, y):
    """CRPS of the empirical distribution of ``members`` (last axis).

    ``(1/m) sum_i |x_i - y| - delta/2`` with the mean absolute difference
    ``delta = (1/m^2) sum_{i,l} |x_i - x_l|`` computed from order statistics.
    """
    x = np.sort(_f(members), axis=-1)
    y = _f(y)
    m = x.shape[-1]
    w = 2.0 * np.arange(1, m + 1) - m - 1
    delta = 2.0 * np.sum(w * x, axis=-1) / m**2
    return np.mean(np.abs(x - y[..., None]), axis=-1) - 0.5 * delta


def crps_discrete(values, probs, y):
    """CRPS of point masses ``probs`` at ``values`` (last axis)."""
    v = _f(values)
    p = _f(probs)
    v, p = np.broadcast_arrays(v, p)
    order = np.argsort(v, axis=-1, kind="stable")
    v = np.take_along_axis(v, order, axis=-1)
    p = np.take_along_axis(p, order, axis=-1)
    y = _f(y)
    cum = np.cumsum(p, axis=-1)
    below = cum - p
    above = cum[..., -1:] - cum
    half_spread = np.sum(p * v * (below - above), axis=-1)
    return np.sum(p * np.abs(v - y[..., None]), axis=-1) - half_spread


# ---------------------------------------------------------------------------
# piecewise uniform and piecewise linear quantile functions


def crps_histogram(edges, probs, y):
    """Closed-form CRPS of a piecewise uniform distribution.

    The observation is first clamped to ``[b_0, b_N]``; the distance to the
    clamped value is added. Each bin then contributes the CRPS of a uniform
    distribution on that bin with point masses ``L`` (probability below the
    bin) at its left edge and ``U`` (probability above) at its right edge,
    scaled by the bin width.
    """
    e = _f(edges)
    p = _f(probs)
    y = _f(y)
    shape = np.broadcast_shapes(e.shape[:-1], p.shape[:-1], y.shape)
    e = np.broadcast_to(e, shape + e.shape[-1:])
    p = np.broadcast_to(p, shape + p.shape[-1:])
    y = np.broadcast_to(y, shape)
    y_c = np.clip(y, e[..., 0], e[..., -1])
    lo = e[..., :-1]
    hi = e[..., 1:]
    w = hi - lo
    cum = np.cumsum(p, axis=-1)
    L = cum - p
    U = np.clip(1.0 - cum, 0.0, None)
    u = (np.clip(y_c[..., None], lo, hi) - lo) / w
    v = 1.0 - u
    per_bin = (
        L**2 * u
        + L * p * u**2
        + p**2 * u**3 / 3.0
        + U**2 * v
        + U * p * v**2
        + p**2 * v**3 / 3.0
    )
    return np.abs(y - y_c) + np.sum(w * per_bin, axis=-1)


def crps_pwlinear(levels, values, y):
    """Exact CRPS of a piecewise linear quantile function.

    Uses ``CRPS = 2 * int_0^1 QL_tau(Q(tau), y) dtau``. On each knot segment the
    integrand is quadratic on either side of the level where ``Q`` crosses
    ``y``, so Simpson's rule on the two sub-pieces is exact.
    """
    t = _f(levels)
    v = _f(values)
    t, v = np.broadcast_arrays(t, v)
    y = _f(y)[..., None]
    t0, t1 = t[..., :-1], t[..., 1:]
    v0, v1 = v[..., :-1], v[..., 1:]
    dv = v1 - v0
    frac = np.where(dv > 0, (y - v0) / np.where(dv > 0, dv, 1.0), 0.0)
    tc = t0 + np.clip(frac, 0.0, 1.0) * (t1 - t0)

    def q_at(tau):
        span = t1 - t0
        s = np.where(span > 0, (tau - t0) / np.where(span > 0, span, 1.0), 0.0)
        return v0 + s * dv

    def simpson(a, b):
        m = 0.5 * (a + b)
        qm = q_at(m)
        ind = (qm >= y).astype(float)

        def g(tau):
            return (q_at(tau) - y) * (ind - tau)

        return (b - a) / 6.0 * (g(a) + 4.0 * g(m) + g(b))

    total = simpson(t0, tc) + simpson(tc, t1)
    return 2.0 * np.sum(total, axis=-1)


def quantile_loss(q, y, tau):
    """Quantile (pinball) loss ``(q - y) * (1{q >= y} - tau)``."""
    q, y, tau = _f(q), _f(y), _f(tau)
    return (q - y) * ((q >= y).astype(float) - tau)


def crps_quantiles(levels, values, y):
    """CRPS approximated by twice the mean quantile loss over a level grid."""
    levels = _f(levels)
    y = _f(y)
    return 2.0 * np.mean(quantile_loss(_f(values), y[..., None], levels), axis=-1)


def crps(forecast, y):
    """CRPS of any forecast type, one value per forecast case.

    Parametric, ensemble, discrete, histogram and piecewise linear forecasts
    are scored in closed form. Bernstein quantile functions and quantile
    sets are scored with twice the mean quantile loss over the 125-level
    evaluation grid.
    """
    if isinstance(forecast, TruncatedLogistic):
        return crps_tlogis(forecast.mu, forecast.sigma, y)
    if isinstance(forecast, EnsembleForecast):
        return crps_ensemble(forecast.members, y)
    if isinstance(forecast, DiscreteForecast):
        return crps_discrete(forecast.values, forecast.probs, y)
    if isinstance(forecast, HistogramForecast):
        return crps_histogram(forecast.edges, forecast.probs, y)
    if isinstance(forecast, PiecewiseLinearQuantile):
        return crps_pwlinear(forecast.levels, forecast.values, y)
    if isinstance(forecast, BernsteinQuantile):
        return crps_quantiles(EVAL_LEVELS, forecast.quantiles(EVAL_LEVELS), y)
    if isinstance(forecast, QuantileForecast):
        if forecast.levels.shape == EVAL_LEVELS.shape and np.allclose(forecast.levels, EVAL_LEVELS):
            return crps_quantiles(forecast.levels, forecast.values, y)
        return crps_quantiles(EVAL_LEVELS, forecast.quantiles(EVAL_LEVELS), y)
    raise DomainError(f"cannot score forecast of type {type(forecast).__name__}")


def crps_numeric_oracle(forecast, y, epsabs=1e-11):
    """CRPS of a single forecast by adaptive quadrature of ``(F(z) - 1{y <= z})^2``.

    Independent of every closed form: only the forecast's CDF is used. The
    integration range is split at the observation and at all support
    breakpoints of the forecast so each piece has a smooth integrand.
    """
    y = float(y)
    if isinstance(forecast, TruncatedLogistic):
        knots = [0.0]
        upper = np.inf
    elif isinstance(forecast, EnsembleForecast):
        knots = list(np.ravel(forecast.members))
        upper = max(knots)
    elif isinstance(forecast, DiscreteForecast):
        knots = list(np.ravel(forecast.values))
        upper = max(knots)
    elif isinstance(forecast, HistogramForecast):
        knots = list(np.ravel(forecast.edges))
        upper = max(knots)
    elif isinstance(forecast, (PiecewiseLinearQuantile, QuantileForecast)):
        knots = list(np.ravel(forecast.values))
        upper = max(knots)
    else:
        lo, hi = forecast.support()
        knots = [float(lo)]
        upper = float(hi)
    pts = np.unique(np.array(knots + [y], dtype=float))

    def integrand(z):
        return (float(forecast.cdf(np.asarray(z))) - (1.0 if y <= z else 0.0)) ** 2

    total = 0.0
    bounds = list(pts)
    if np.isfinite(upper) and upper > bounds[-1]:
        bounds.append(upper)
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b > a:
            val, _ = integrate.quad(integrand, a, b, epsabs=epsabs, epsrel=1e-12, limit=200)
            total += val
    if not np.isfinite(upper):
        val, _ = integrate.quad(integrand, bounds[-1], np.inf, epsabs=epsabs, epsrel=1e-12, limit=400)
        total += val
    return total


# ---------------------------------------------------------------------------
# further scores


def logscore(forecast, y):
    """Negative log density at ``y``; ``inf`` where the density vanishes.

    Defined for forecasts with a density (truncated logistic, histogram,
    piecewise linear quantile function). For a histogram this is
    ``log(b_k - b_{k-1}) - log p_k`` for the bin containing ``y``.
    Infinite scores are reported with a ``RuntimeWarning``.
    """
    y = _f(y)
    if isinstance(forecast, TruncatedLogistic):
        return nll_tlogis(forecast.mu, forecast.sigma, y)
    if isinstance(forecast, HistogramForecast):
        dens = forecast.pdf(y)
    elif isinstance(forecast, PiecewiseLinearQuantile):
        dens = _pwlinear_pdf(forecast, y)
    elif isinstance(forecast, BernsteinQuantile):
        dens = _bernstein_pdf(forecast, y)
    else:
        raise DomainError(f"{type(forecast).__name__} has no density")
    with np.errstate(divide="ignore"):
        out = -np.log(dens)
    n_inf = int(np.sum(np.isinf(out)))
    if n_inf:
        warnings.warn(f"{n_inf} observation(s) with zero predictive density: infinite log score", RuntimeWarning, stacklevel=2)
    return out


def _pwlinear_pdf(forecast, y):
    t, v = forecast.levels, forecast.values
    yq = y[..., None]
    inside = (v[..., :-1] <= yq) & (yq < v[..., 1:])
    slope = np.diff(t, axis=-1) / np.where(np.diff(v, axis=-1) > 0, np.diff(v, axis=-1), 1.0)
    return np.sum(np.where(inside, slope, 0.0), axis=-1)


def _bernstein_pdf(forecast, y):
    a = forecast.coefficients
    d = forecast.degree
    tau = forecast.cdf(y)
    deriv = d * np.sum(np.diff(a, axis=-1) * bernstein_basis(tau, d - 1), axis=-1)
    lo, hi = forecast.support()
    inside = (y > lo) & (y < hi) & (deriv > 0)
    return np.where(inside, 1.0 / np.where(deriv > 0, deriv, 1.0), 0.0)


def squared_error(forecast, y):
    """Squared error of the predictive mean."""
    return (forecast.mean() - _f(y)) ** 2


def forecast_error(forecast, y):
    """Predictive median minus observation."""
    return forecast.median() - _f(y)


def brier(forecast, y, threshold):
    """Brier score for the event ``Y > threshold``."""
    if threshold <= 0:
        raise DomainError("threshold must be positive")
    p_exceed = 1.0 - forecast.cdf(np.full(np.shape(y), float(threshold)))
    return (p_exceed - (_f(y) > threshold).astype(float)) ** 2


def pi_metrics(forecast, y, coverage=NOMINAL_COVERAGE):
    """Central prediction interval length and coverage indicator.

    Returns
    -------
    length, covered : ndarray
        Interval length and 1.0 where ``lower <= y <= upper``.
    """
    y = _f(y)
    levels = np.array([(1.0 - coverage) / 2.0, (1.0 + coverage) / 2.0])
    bounds = forecast.quantiles(levels)
    lower, upper = bounds[..., 0], bounds[..., 1]
    covered = ((lower <= y) & (y <= upper)).astype(float)
    return upper - lower, covered


# ---------------------------------------------------------------------------
# optimum score estimation


@dataclass
class OptimizeOutcome:
    """Result of :func:`minimize_score`."""

    x: np.ndarray
    fun: float
    converged: bool
    method: str
    nit: int
    init_fun: float


def minimize_score(loss, init, jac=None, maxiter=500, tol=1e-8, fallback_maxiter=2000):
    """Minimize a mean score over a parameter vector.

    L-BFGS-B is run first (with the analytic gradient if ``jac`` is given,
    otherwise finite differences). If it fails to converge or meets a
    non-finite loss, Nelder-Mead is started from the best point found. The
    best point among the initial value and both runs is returned, so the loss
    never exceeds the initial loss.

    Parameters
    ----------
    loss : callable
        ``loss(theta) -> float``.
    init : array_like
        Starting parameters; the loss must be finite there.
    jac : callable, optional
        ``jac(theta) -> ndarray``. If ``loss`` returns ``(value, grad)`` pass
        ``jac=True``.

    Raises
    ------
    OptimizationError
        Neither optimizer produced a finite loss (carries the best point).
    """
    x0 = np.asarray(init, dtype=float).copy()
    if jac is True:
        fun = lambda th: float(loss(th)[0])
    else:
        fun = lambda th: float(loss(th))
    f0 = fun(x0)
    if not np.isfinite(f0):
        raise DomainError("loss is not finite at the initial parameters")

    best = {"x": x0.copy(), "f": f0}

    def track(th, f):
        if np.isfinite(f) and f < best["f"]:
            best["x"] = np.array(th, dtype=float)
            best["f"] = f

    saw_nan = [False]

    def fun_tracked(th):
        f = fun(th)
        if not np.isfinite(f):
            saw_nan[0] = True
            return 1e300
        track(th, f)
        return f

    if jac is True:

        def fg(th):
            f, g = loss(th)
            f = float(f)
            g = np.asarray(g, dtype=float)
            if not np.isfinite(f) or not np.all(np.isfinite(g)):
                saw_nan[0] = True
                return 1e300, np.zeros_like(th)
            track(th, f)
            return f, g

        call, use_jac = fg, True
    elif jac is not None:

        def fg(th):
            f = fun_tracked(th)
            g = np.asarray(jac(th), dtype=float)
            if not np.all(np.isfinite(g)):
                saw_nan[0] = True
                g = np.zeros_like(th)
            return f, g

        call, use_jac = fg, True
    else:
        call, use_jac = fun_tracked, False

    converged = False
    method = "L-BFGS-B"
    nit = 0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(
                call, x0, jac=use_jac, method="L-BFGS-B",
                options={"maxiter": maxiter, "ftol": tol, "gtol": 1e-7},
            )
        nit = int(res.nit)
        converged = bool(res.success) and not saw_nan[0]
        if np.isfinite(res.fun) and res.fun < 1e299:
            track(res.x, float(res.fun))
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.debug("L-BFGS-B failed: %s", exc)

    if not converged:
        method = "Nelder-Mead"
        saw_nan[0] = False
        start = best["x"].copy()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = optimize.minimize(
                    fun_tracked, start, method="Nelder-Mead",
                    options={"maxiter": fallback_maxiter, "xatol": 1e-8, "fatol": tol, "adaptive": len(start) > 4},
                )
            nit += int(res.nit)
            converged = bool(res.success)
        except (ValueError, FloatingPointError) as exc:
            log.debug("Nelder-Mead failed: %s", exc)
        if not converged:
            raise OptimizationError(
                f"no convergence after L-BFGS-B and Nelder-Mead (best loss {best['f']:.6g})",
                best_x=best["x"], best_fun=best["f"],
            )

    return OptimizeOutcome(best["x"], best["f"], converged, method, nit, f0)
