"""Calibration diagnostics, forecast comparison tests and permutation importance."""

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dataset import CaseSet
from .distributions import EnsembleForecast
from .exceptions import DataError, DomainError
from .scoring import NOMINAL_COVERAGE, crps, pi_metrics

__all__ = [
    "pit",
    "rank_histogram_ranks",
    "HistogramDiag",
    "histogram_diag",
    "calibration_diagnostics",
    "DmResult",
    "dm_test",
    "benjamini_hochberg",
    "ImportanceResult",
    "permuted_cases",
    "permutation_importance",
    "skill_score",
    "write_rows",
]

# p-value reported when the score differences are constant and non-zero
P_SENTINEL = np.finfo(float).tiny


def pit(forecast, y, rng=None):
    """(Unified) probability integral transform.

    For continuous CDFs this is ``F(y)``. Where ``F`` jumps at ``y`` the value
    is drawn uniformly on ``[F(y-), F(y)]``, which covers ensembles, discrete
    and quantile-based forecasts with point masses.
    """
    y = np.asarray(y, dtype=float)
    hi = np.asarray(forecast.cdf(y), dtype=float)
    lo = np.asarray(forecast.cdf_left(y), dtype=float)
    jump = hi - lo
    if np.all(jump <= 0):
        return hi
    rng = np.random.default_rng(rng)
    return lo + rng.uniform(size=np.shape(hi)) * np.maximum(jump, 0.0)


def rank_histogram_ranks(members, y, rng=None):
    """Rank of ``y`` among the members (1 .. m+1), ties broken at random."""
    x = np.asarray(members, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(rng)
    below = np.sum(x < y[..., None], axis=-1)
    ties = np.sum(x == y[..., None], axis=-1)
    return 1 + below + np.floor(rng.uniform(size=np.shape(below)) * (ties + 1)).astype(int)


@dataclass(frozen=True)
class HistogramDiag:
    """Histogram of PIT values or ranks with a chi-square uniformity test."""

    counts: np.ndarray
    chi2: float
    p_value: float
    coverage: float = math.nan
    pi_length: float = math.nan

    @property
    def n(self):
        return int(self.counts.sum())


def histogram_diag(values, n_bins, discrete=False, coverage=math.nan, pi_length=math.nan):
    """Bin PIT values on [0, 1] (or ranks 1..n_bins) and test for uniformity."""
    v = np.asarray(values)
    if discrete:
        counts = np.bincount(v.astype(int) - 1, minlength=n_bins)[:n_bins]
    else:
        idx = np.minimum((np.asarray(v, dtype=float) * n_bins).astype(int), n_bins - 1)
        counts = np.bincount(idx, minlength=n_bins)
    res = stats.chisquare(counts)
    return HistogramDiag(counts, float(res.statistic), float(res.pvalue), float(coverage), float(pi_length))


def calibration_diagnostics(forecast, y, rng=None, n_bins=None, coverage=NOMINAL_COVERAGE):
    """Rank histogram for ensembles, uPIT histogram otherwise, plus interval metrics.

    Ensembles get ``m + 1`` rank bins; other forecasts get 21 PIT bins unless
    ``n_bins`` is given.
    """
    y = np.asarray(y, dtype=float)
    length, covered = pi_metrics(forecast, y, coverage)
    if isinstance(forecast, EnsembleForecast) and n_bins is None:
        m = forecast.members.shape[-1]
        ranks = rank_histogram_ranks(forecast.members, y, rng)
        return histogram_diag(ranks, m + 1, True, covered.mean(), length.mean())
    return histogram_diag(pit(forecast, y, rng), n_bins or 21, False, covered.mean(), length.mean())


@dataclass(frozen=True)
class DmResult:
    """Diebold-Mariano test of equal predictive performance.

    ``statistic`` is positive when the first forecast has the larger (worse)
    mean score. ``p_value`` is two-sided; ``p_first_better`` and
    ``p_second_better`` are the one-sided p-values of the alternatives that
    the first / second forecast has the smaller expected score.
    """

    statistic: float
    p_value: float
    p_first_better: float
    p_second_better: float
    n: int

    @property
    def direction(self):
        if self.statistic < 0:
            return "first"
        if self.statistic > 0:
            return "second"
        return "none"


def dm_test(scores_f, scores_g):
    """Diebold-Mariano test with ``t = sqrt(n) * mean(d) / sigma``, ``sigma^2 = mean(d^2)``.

    Here ``d = scores_f - scores_g`` and the scale is the uncentered second
    moment of the differences. Constant differences are handled explicitly:
    zero differences give ``p = 1``; constant non-zero differences give the
    sentinel ``P_SENTINEL`` for the favoured direction.

    Raises
    ------
    DataError
        Length mismatch or fewer than two cases.
    """
    f = np.asarray(scores_f, dtype=float)
    g = np.asarray(scores_g, dtype=float)
    if f.shape != g.shape:
        raise DataError("score sequences must have equal length")
    n = f.size
    if n < 2:
        raise DataError("need at least two scores")
    d = f - g
    mean = d.mean()
    sigma = math.sqrt(np.mean(d * d))
    if sigma == 0.0 or mean == 0.0 and not np.any(d):
        return DmResult(0.0, 1.0, 1.0, 1.0, n)
    t = math.sqrt(n) * mean / sigma
    if np.all(d == d[0]):
        # constant non-zero differences: no sampling variability left
        t = math.copysign(math.inf, mean)
        first = 1.0 if mean > 0 else P_SENTINEL
        second = P_SENTINEL if mean > 0 else 1.0
        return DmResult(t, P_SENTINEL, first, second, n)
    p_first = float(stats.norm.cdf(t))
    p_second = float(stats.norm.sf(t))
    return DmResult(float(t), float(2.0 * min(p_first, p_second)), p_first, p_second, n)


def benjamini_hochberg(p_values, alpha=0.05):
    """Benjamini-Hochberg procedure.

    With ordered p-values ``p_(1) <= ... <= p_(M)`` the threshold is
    ``p_(i*)`` with ``i* = max{i : p_(i) <= alpha * i / M}``; all hypotheses
    with ``p <= p*`` are rejected.

    Returns
    -------
    reject : ndarray of bool
    p_star : float or None
        ``None`` when nothing is rejected.
    """
    p = np.asarray(p_values, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise DomainError("p-values must lie in [0, 1]")
    M = p.size
    if M == 0:
        return np.zeros(0, dtype=bool), None
    srt = np.sort(p)
    ok = np.flatnonzero(srt <= alpha * np.arange(1, M + 1) / M)
    if ok.size == 0:
        return np.zeros(M, dtype=bool), None
    p_star = float(srt[ok[-1]])
    return p <= p_star, p_star


@dataclass(frozen=True)
class ImportanceResult:
    feature: object
    delta: float
    delta0: float
    baseline: float
    delta_sd: float
    n_repeats: int


_ENSEMBLE = "ensemble"


def permuted_cases(cases, features, perm):
    """Copy of ``cases`` with the rows of ``features`` reordered by ``perm``.

    ``"ensemble"`` stands for the 20 raw members; all features share the
    same permutation.
    """
    X = cases.X.copy()
    ens = cases.ens
    for f in features:
        if f == _ENSEMBLE:
            ens = cases.ens[perm]
        else:
            X[:, cases.predictor_names.index(f)] = cases.X[perm, cases.predictor_names.index(f)]
    return CaseSet(cases.station, cases.date, cases.lead, cases.obs, ens, X, cases.predictor_names)


def permutation_importance(predict, cases, feature, rng=None, n_repeats=10, score=crps):
    """Increase of the mean score when a feature (or feature set) is shuffled.

    Parameters
    ----------
    predict : callable
        Maps a ``CaseSet`` to a forecast.
    cases : CaseSet
        Test cases with observations.
    feature : str or sequence of str
        A predictor name, ``"ensemble"`` for the raw members, or several of
        them; a set is shuffled jointly with one permutation (multi-pass).
    n_repeats : int
        Number of permutations averaged.

    Returns
    -------
    ImportanceResult
        ``delta`` is the mean score increase, ``delta0 = delta / baseline``.
    """
    feats = (feature,) if isinstance(feature, str) else tuple(feature)
    for f in feats:
        if f != _ENSEMBLE and f not in cases.predictor_names:
            raise DataError(f"unknown feature {f!r}")
    cases = cases.subset(cases.has_obs)
    rng = np.random.default_rng(rng)
    base = float(np.mean(score(predict(cases), cases.obs)))
    deltas = []
    for _ in range(n_repeats):
        perm = rng.permutation(len(cases))
        perm_cases = permuted_cases(cases, feats, perm)
        deltas.append(float(np.mean(score(predict(perm_cases), cases.obs))) - base)
    deltas = np.array(deltas)
    delta = float(deltas.mean())
    sd = float(deltas.std(ddof=1)) if n_repeats > 1 else math.nan
    return ImportanceResult(feature, delta, delta / base if base != 0 else math.nan, base, sd, n_repeats)


def skill_score(score, reference):
    """``1 - score / reference``; NaN with a warning when the reference is 0."""
    if reference == 0:
        warnings.warn("skill score undefined for a zero reference score", stacklevel=2)
        return math.nan
    return 1.0 - score / reference


def write_rows(path, header, rows):
    """Write a CSV report with a header line and ``repr``-formatted floats."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
