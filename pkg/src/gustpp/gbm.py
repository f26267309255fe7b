"""EMOS with gradient-boosted linear links over all predictors.

For each station and lead time the truncated logistic parameters are

    mu    = a + sum_j b_j x_j
    sigma = exp(c + sum_j d_j x_j)

with standardized predictors ``x_j``. Starting from the intercept-only
maximum likelihood fit, every iteration moves the single slope whose
predictor correlates most strongly with the negative gradient of the
log-likelihood (over both links). The iterate with the smallest AIC is kept,
which gives a sparse model.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import fit_standardizer, Standardizer
from .distributions import TruncatedLogistic
from .emos import _run
from .exceptions import DataError, ModelKeyError
from .scoring import minimize_score, nll_tlogis, nll_tlogis_grad

__all__ = [
    "GbmCoefficients",
    "GbmFit",
    "GbmModel",
    "boost_emos",
    "fit_emos_gb",
    "fit_gbm_model",
    "predict_emos_gb",
    "gbm_coefficient_importance",
]

log = logging.getLogger(__name__)

MAX_ITER = 1000
STEP = 0.05
MIN_CASES = 30
_MAX_HALVINGS = 30
# inverse Fisher information of log(sigma) for the logistic distribution
_INFO_LOGSIGMA = 9.0 / (np.pi**2 + 3.0)


@dataclass(frozen=True)
class GbmCoefficients:
    """Intercepts and slopes of both links plus the selection history.

    ``history`` holds ``(iteration, link, predictor index, step)`` tuples with
    ``link`` 0 for location and 1 for scale.
    """

    a: float
    b: np.ndarray
    c: float
    d: np.ndarray
    history: tuple = ()
    n_iter: int = 0
    best_iter: int = 0

    @property
    def n_nonzero(self):
        return int(np.count_nonzero(self.b) + np.count_nonzero(self.d))

    def links(self, Z):
        """Location and scale for standardized predictors ``Z`` (n, p)."""
        Z = np.asarray(Z, dtype=float)
        mu = self.a + Z @ self.b
        sigma = np.exp(np.clip(self.c + Z @ self.d, -30.0, 30.0))
        return mu, sigma


def _intercept_mle(y):
    """Unconditional maximum likelihood ``(mu, log sigma)`` of the truncated logistic, with ``mu >= 0``."""
    def loss(th):
        nll, g_mu, g_ls = nll_tlogis_grad(th[0], np.exp(th[1]), y)
        return nll.mean(), np.array([g_mu.mean(), g_ls.mean()])

    init = np.array([np.mean(y), np.log(max(np.std(y) * np.sqrt(3.0) / np.pi, 1e-3))])
    th = minimize_score(loss, init, jac=True).x
    if th[0] < 0:
        # Far below zero the truncated logistic degenerates to an exponential
        # tail in which the location has no gradient; start on the boundary.
        def loss_s(ts):
            nll, _, g_ls = nll_tlogis_grad(0.0, np.exp(ts[0]), y)
            return nll.mean(), np.array([g_ls.mean()])

        th = np.array([0.0, minimize_score(loss_s, init[1:], jac=True).x[0]])
    return th


def boost_emos(Z, y, max_iter=MAX_ITER, step=STEP):
    """Boosting loop on standardized predictors.

    Parameters
    ----------
    Z : ndarray, shape (n, p)
        Standardized predictors (column means 0, sd 1).
    y : ndarray, shape (n,)
        Positive observations.
    max_iter : int
        Number of boosting iterations; 0 gives the intercept-only model.
    step : float
        Shrinkage of each update.

    Returns
    -------
    GbmCoefficients
        The iterate with minimal AIC along the path.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = Z.shape
    if n < 2:
        raise DataError("need at least two cases")
    if np.any(y <= 0):
        raise DataError("observations must be positive")
    a, c = _intercept_mle(y)
    b = np.zeros(p)
    d = np.zeros(p)
    eta_mu = np.full(n, a)
    eta_s = np.full(n, c)
    nll, dmu, dls = nll_tlogis_grad(eta_mu, np.exp(eta_s), y)
    cur = nll.sum()

    def aic(total_nll):
        return 2.0 * total_nll + 2.0 * (np.count_nonzero(b) + np.count_nonzero(d) + 2)

    best = (aic(cur), a, b.copy(), c, d.copy(), 0)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        # negative gradients w.r.t. the two linear predictors, scaled by the
        # (average) inverse Fisher information of the logistic so both links
        # move in their own units; a constant factor keeps the least-squares
        # fit of the gradient a descent direction
        g = (-dmu * (3.0 * np.mean(np.exp(2.0 * eta_s))), -dls * _INFO_LOGSIGMA)
        cand = []
        for link in (0, 1):
            gc = g[link] - g[link].mean()
            sd = np.sqrt(gc @ gc / (n - 1))
            if sd == 0:
                cand.append((0.0, 0, 0.0, g[link].mean()))
                continue
            corr = Z.T @ gc / ((n - 1) * sd)
            j = int(np.argmax(np.abs(corr)))
            cand.append((abs(corr[j]), j, corr[j] * sd, g[link].mean()))
        link = 0 if cand[0][0] >= cand[1][0] else 1
        _, j, slope, _ = cand[link]
        if slope == 0.0:
            break
        nu = step
        for _ in range(_MAX_HALVINGS):
            new_mu = eta_mu + nu * (cand[0][3] + (slope * Z[:, j] if link == 0 else 0.0))
            new_s = eta_s + nu * (cand[1][3] + (slope * Z[:, j] if link == 1 else 0.0))
            with np.errstate(over="ignore", invalid="ignore"):
                res = nll_tlogis_grad(new_mu, np.exp(np.clip(new_s, -30.0, 30.0)), y)
            total = res[0].sum()
            if np.isfinite(total) and total <= cur:
                break
            nu *= 0.5
        else:
            if np.isfinite(total):
                log.debug("boosting converged at iteration %d", it)
            else:
                log.warning("boosting stopped at iteration %d: non-finite likelihood", it)
            it -= 1
            break
        a += nu * cand[0][3]
        c += nu * cand[1][3]
        if link == 0:
            b[j] += nu * slope
        else:
            d[j] += nu * slope
        eta_mu, eta_s = new_mu, new_s
        nll, dmu, dls = res
        cur = total
        history.append((it, link, j, float(nu)))
        crit = aic(cur)
        if crit < best[0]:
            best = (crit, a, b.copy(), c, d.copy(), it)
    _, a_b, b_b, c_b, d_b, it_b = best
    return GbmCoefficients(
        float(a_b), b_b, float(c_b), d_b, tuple(h for h in history if h[0] <= it_b), it, it_b,
    )


@dataclass(frozen=True)
class GbmFit:
    coefficients: GbmCoefficients
    standardizer: Standardizer

    @property
    def names(self):
        return self.standardizer.names

    def predict(self, X, names):
        Z = self.standardizer.transform(X, names)
        mu, sigma = self.coefficients.links(Z)
        return TruncatedLogistic(mu, sigma)


def fit_emos_gb(cases, max_iter=MAX_ITER, step=STEP):
    """Fit one boosted EMOS model on the cases of a single station and lead time.

    Predictors are standardized on ``cases``; constant predictors (station
    altitude, for instance) are dropped.
    """
    ok = cases.has_obs
    if ok.sum() < 2:
        raise DataError("need at least two observed cases")
    X, y = cases.X[ok], cases.obs[ok]
    std = fit_standardizer(X, cases.predictor_names, warn=False)
    Z = std.transform(X, cases.predictor_names)
    return GbmFit(boost_emos(Z, y, max_iter=max_iter, step=step), std)


@dataclass(frozen=True)
class GbmModel:
    """Boosted fits keyed by ``(station, lead_time)``."""

    fits: dict = field(default_factory=dict)

    def lookup(self, station, lead):
        try:
            return self.fits[(int(station), int(lead))]
        except KeyError:
            raise ModelKeyError(f"no EMOS-GB model for station {station}, lead {lead}") from None

    def predict(self, cases):
        mu = np.empty(len(cases))
        sigma = np.empty(len(cases))
        keys = np.stack([cases.station, cases.lead], axis=1)
        for k in np.unique(keys, axis=0):
            sel = np.all(keys == k, axis=1)
            f = self.lookup(*k).predict(cases.X[sel], cases.predictor_names)
            mu[sel], sigma[sel] = f.mu, f.sigma
        return TruncatedLogistic(mu, sigma)

    def to_dict(self):
        out = []
        for (s, ld), f in sorted(self.fits.items()):
            co = f.coefficients
            out.append({
                "station": s,
                "lead": ld,
                "standardizer": f.standardizer.to_dict(),
                "a": co.a,
                "c": co.c,
                # sparse slope lists: only nonzero entries
                "b": {f.names[j]: float(co.b[j]) for j in np.flatnonzero(co.b)},
                "d": {f.names[j]: float(co.d[j]) for j in np.flatnonzero(co.d)},
                "history": [[h[0], "location" if h[1] == 0 else "scale", f.names[h[2]], h[3]] for h in co.history],
                "n_iter": co.n_iter,
                "best_iter": co.best_iter,
            })
        return {"method": "emos-gb", "keys": out}

    @classmethod
    def from_dict(cls, d):
        fits = {}
        for e in d["keys"]:
            std = Standardizer.from_dict(e["standardizer"])
            idx = {n: i for i, n in enumerate(std.names)}
            b = np.zeros(len(std.names))
            dd = np.zeros(len(std.names))
            for n, v in e["b"].items():
                b[idx[n]] = v
            for n, v in e["d"].items():
                dd[idx[n]] = v
            hist = tuple((h[0], 0 if h[1] == "location" else 1, idx[h[2]], h[3]) for h in e["history"])
            co = GbmCoefficients(e["a"], b, e["c"], dd, hist, e["n_iter"], e["best_iter"])
            fits[(e["station"], e["lead"])] = GbmFit(co, std)
        return cls(fits)


def fit_gbm_model(cases, max_iter=MAX_ITER, step=STEP, jobs=1):
    """Fit one boosted model per station and lead time."""
    keys = sorted({(int(s), int(ld)) for s, ld in zip(cases.station, cases.lead)})
    tasks = [(k, cases.subset((cases.station == k[0]) & (cases.lead == k[1]))) for k in keys]
    fits = _run(tasks, lambda t: fit_emos_gb(t[1], max_iter=max_iter, step=step), jobs)
    return GbmModel({t[0]: f for t, f in zip(tasks, fits)})


def predict_emos_gb(model, case):
    """Truncated logistic forecast for one :class:`ForecastCase`."""
    fit = model.lookup(case.station_id, case.lead_time_h)
    try:
        x = np.array([case.predictors[n] for n in fit.names])
    except KeyError as e:
        raise DataError(f"missing predictor {e.args[0]!r}") from None
    Z = (x - fit.standardizer.mean) / fit.standardizer.sd
    mu, sigma = fit.coefficients.links(Z[None, :])
    return TruncatedLogistic(mu[0], sigma[0])


def gbm_coefficient_importance(model):
    """Mean absolute standardized coefficient per predictor, for each link.

    Returns
    -------
    dict
        ``{"location": {name: value}, "scale": {name: value}}`` sorted by
        decreasing value. Predictors never selected are left out, so an
        intercept-only model gives empty tables.
    """
    fits = model.fits.values() if isinstance(model, GbmModel) else [model]
    sums = ({}, {})
    for f in fits:
        for link, coef in ((0, f.coefficients.b), (1, f.coefficients.d)):
            for j in np.flatnonzero(coef):
                sums[link][f.names[j]] = sums[link].get(f.names[j], 0.0) + abs(coef[j])
    n = max(len(fits), 1)
    return {
        name: dict(sorted(((k, v / n) for k, v in tab.items()), key=lambda kv: -kv[1]))
        for name, tab in zip(("location", "scale"), sums)
    }


def gbm_nll(fit, cases):
    """Mean negative log-likelihood of a fitted model on ``cases``."""
    f = fit.predict(cases.X, cases.predictor_names)
    return float(nll_tlogis(f.mu, f.sigma, cases.obs).mean())
