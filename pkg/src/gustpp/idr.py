"""Isotonic distributional regression (IDR) under the empirical stochastic order.

Ensembles are compared through their sorted member vectors: ``x <= x'`` if
every order statistic of ``x`` is at most the matching one of ``x'``. For
every threshold ``t`` on the grid of observed values, the fitted conditional
CDF values solve

    min sum_j w_j (theta_j - 1{y_j <= t})^2   subject to  x_j <= x_i  =>  theta_i <= theta_j,

i.e. larger ensembles never get a larger probability of low gusts.

The least-squares problem is solved exactly by recursive partitioning: the
block weighted mean ``m`` is compared with the best upward-closed subset
(maximizing ``sum w (z - m)``), found as a minimum cut with integer
capacities. The block is split along the cut until no subset improves, at
which point the block value is its weighted mean.

A new ensemble is predicted by the midpoint of the tightest bounds from
comparable training points: the largest fitted CDF among points above it and
the smallest among points below. With points on one side only that bound is
used, and an ensemble comparable to no training point gets the pooled
empirical CDF. A subbagged fit averages many fits on random half-size
subsamples.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .dataset import CaseSet
from .distributions import DiscreteForecast
from .exceptions import DataError, ModelKeyError

__all__ = [
    "sd_compare",
    "sd_leq_matrix",
    "isotonic_poset",
    "IdrFit",
    "IdrEnsembleFit",
    "IdrModel",
    "fit_idr",
    "fit_idr_subbag",
    "predict_idr",
    "fit_idr_model",
]

MIN_CASES = 10


def sd_compare(x, x_other):
    """Compare two ensembles in the empirical stochastic order.

    Returns
    -------
    str
        ``"<"`` (``x`` smaller), ``">"``, ``"="`` or ``"incomparable"``.
    """
    a = np.sort(np.asarray(x, dtype=float))
    b = np.sort(np.asarray(x_other, dtype=float))
    if a.shape != b.shape:
        raise DataError("ensembles must have the same number of members")
    le = bool(np.all(a <= b))
    ge = bool(np.all(a >= b))
    if le and ge:
        return "="
    if le:
        return "<"
    if ge:
        return ">"
    return "incomparable"


def sd_leq_matrix(A, B=None):
    """``out[i, j] = A_i <= B_j`` in the stochastic order (rows are sorted ensembles)."""
    A = np.asarray(A, dtype=float)
    B = A if B is None else np.asarray(B, dtype=float)
    return _leq_matrix(np.ascontiguousarray(A), np.ascontiguousarray(B))


@njit(cache=True)
def _leq_matrix(A, B):
    n, m = A.shape
    k = B.shape[0]
    out = np.empty((n, k), dtype=np.bool_)
    for i in range(n):
        for j in range(k):
            ok = True
            for c in range(m):
                if A[i, c] > B[j, c]:
                    ok = False
                    break
            out[i, j] = ok
    return out


# ---------------------------------------------------------------------------
# exact isotonic regression on a partial order


@njit(cache=True)
def _covers(rel):
    """Cover relation (Hasse diagram) of a strict partial order given by ``rel``.

    ``rel[i, j]`` for ``i != j`` must be transitive and antisymmetric.
    Returns CSR arrays ``(start, target)`` of the cover edges.
    """
    n = rel.shape[0]
    cnt = np.zeros(n, dtype=np.int64)
    keep = np.zeros((n, n), dtype=np.bool_)
    succ = np.empty(n, dtype=np.int64)
    for i in range(n):
        ns = 0
        for j in range(n):
            if j != i and rel[i, j]:
                succ[ns] = j
                ns += 1
        for a in range(ns):
            j = succ[a]
            cover = True
            for b in range(ns):
                k = succ[b]
                if k != j and rel[k, j]:
                    cover = False
                    break
            if cover:
                keep[i, j] = True
                cnt[i] += 1
    start = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        start[i + 1] = start[i] + cnt[i]
    target = np.empty(start[n], dtype=np.int64)
    for i in range(n):
        pos = start[i]
        for j in range(n):
            if keep[i, j]:
                target[pos] = j
                pos += 1
    return start, target


@njit(cache=True)
def _dense_edges(rel):
    n = rel.shape[0]
    start = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        c = 0
        for j in range(n):
            if j != i and rel[i, j]:
                c += 1
        start[i + 1] = start[i] + c
    target = np.empty(start[n], dtype=np.int64)
    for i in range(n):
        pos = start[i]
        for j in range(n):
            if j != i and rel[i, j]:
                target[pos] = j
                pos += 1
    return start, target


@njit(cache=True)
def _source_side(caps, members, local, adj_start, adj_to):
    """Minimal source side of the min cut for a maximum-weight closure.

    ``caps[a]`` is the integer weight of local node ``a`` (global index
    ``members[a]``); an edge ``i -> j`` in the adjacency means "``i`` in the
    closure forces ``j`` in the closure". ``local`` maps global indices to
    local ones (-1 outside the block). Returns a boolean mask over the local
    nodes.
    """
    k = members.shape[0]
    s = k
    t = k + 1
    n_nodes = k + 2
    big = np.int64(1)
    for a in range(k):
        big += abs(caps[a])
    deg = np.zeros(n_nodes, dtype=np.int64)
    n_e = 0
    for a in range(k):
        if caps[a] > 0:
            deg[s] += 1
            deg[a] += 1
            n_e += 1
        elif caps[a] < 0:
            deg[a] += 1
            deg[t] += 1
            n_e += 1
        ia = members[a]
        for e in range(adj_start[ia], adj_start[ia + 1]):
            b = local[adj_to[e]]
            if b >= 0:
                deg[a] += 1
                deg[b] += 1
                n_e += 1
    start = np.zeros(n_nodes + 1, dtype=np.int64)
    for v in range(n_nodes):
        start[v + 1] = start[v] + deg[v]
    to = np.empty(2 * n_e, dtype=np.int64)
    cap = np.empty(2 * n_e, dtype=np.int64)
    rev = np.empty(2 * n_e, dtype=np.int64)
    fill = start[:-1].copy()

    for a in range(k):
        if caps[a] != 0:
            u = s if caps[a] > 0 else a
            v = a if caps[a] > 0 else t
            e1 = fill[u]
            fill[u] += 1
            e2 = fill[v]
            fill[v] += 1
            to[e1] = v
            cap[e1] = abs(caps[a])
            rev[e1] = e2
            to[e2] = u
            cap[e2] = 0
            rev[e2] = e1
        ia = members[a]
        for e in range(adj_start[ia], adj_start[ia + 1]):
            b = local[adj_to[e]]
            if b >= 0:
                e1 = fill[a]
                fill[a] += 1
                e2 = fill[b]
                fill[b] += 1
                to[e1] = b
                cap[e1] = big
                rev[e1] = e2
                to[e2] = a
                cap[e2] = 0
                rev[e2] = e1

    level = np.empty(n_nodes, dtype=np.int64)
    it = np.empty(n_nodes, dtype=np.int64)
    queue = np.empty(n_nodes, dtype=np.int64)
    path = np.empty(n_nodes, dtype=np.int64)
    while True:
        # BFS levels of the residual graph
        level[:] = -1
        level[s] = 0
        qh = 0
        qt = 0
        queue[qt] = s
        qt += 1
        while qh < qt:
            u = queue[qh]
            qh += 1
            for e in range(start[u], start[u + 1]):
                if cap[e] > 0 and level[to[e]] < 0:
                    level[to[e]] = level[u] + 1
                    queue[qt] = to[e]
                    qt += 1
        if level[t] < 0:
            break
        for v in range(n_nodes):
            it[v] = start[v]
        # blocking flow by repeated augmenting paths in the level graph
        while True:
            depth = 0
            u = s
            found = False
            while True:
                if u == t:
                    found = True
                    break
                advanced = False
                while it[u] < start[u + 1]:
                    e = it[u]
                    v = to[e]
                    if cap[e] > 0 and level[v] == level[u] + 1:
                        path[depth] = e
                        depth += 1
                        u = v
                        advanced = True
                        break
                    it[u] += 1
                if not advanced:
                    if u == s:
                        break
                    level[u] = -1
                    depth -= 1
                    u = to[rev[path[depth]]]
                    it[u] += 1
            if not found:
                break
            f = big
            for d in range(depth):
                if cap[path[d]] < f:
                    f = cap[path[d]]
            for d in range(depth):
                e = path[d]
                cap[e] -= f
                cap[rev[e]] += f
    # residual reachability from the source
    seen = np.zeros(n_nodes, dtype=np.bool_)
    seen[s] = True
    qh = 0
    qt = 0
    queue[qt] = s
    qt += 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for e in range(start[u], start[u + 1]):
            v = to[e]
            if cap[e] > 0 and not seen[v]:
                seen[v] = True
                queue[qt] = v
                qt += 1
    return seen[:k]


@njit(cache=True)
def _isotonic_counts(hits, w, adj_start, adj_to):
    """Weighted isotonic regression of ``hits / w`` along the edges ``adj``.

    An edge ``i -> j`` requires ``theta_i <= theta_j``. Every block created by
    the recursive splits is convex in the order, so cover edges of the whole
    order are enough. ``hits`` and ``w`` are integer counts so all cut
    capacities are exact integers.
    """
    n = w.shape[0]
    theta = np.empty(n)
    local = -np.ones(n, dtype=np.int64)
    # pending blocks are stored contiguously in stack_nodes (offset, length)
    stack_nodes = np.arange(n)
    top = 1
    lens = np.empty(n, dtype=np.int64)
    offs = np.empty(n, dtype=np.int64)
    lens[0] = n
    offs[0] = 0
    while top > 0:
        top -= 1
        off = offs[top]
        ln = lens[top]
        members = stack_nodes[off:off + ln].copy()
        W = np.int64(0)
        S = np.int64(0)
        for a in range(ln):
            W += w[members[a]]
            S += hits[members[a]]
        caps = np.empty(ln, dtype=np.int64)
        nonzero = False
        for a in range(ln):
            # hits/w - S/W scaled by w * W
            caps[a] = W * hits[members[a]] - w[members[a]] * S
            if caps[a] != 0:
                nonzero = True
        mean = S / W
        if not nonzero or ln == 1:
            for a in range(ln):
                theta[members[a]] = mean
            continue
        for a in range(ln):
            local[members[a]] = a
        upper = _source_side(caps, members, local, adj_start, adj_to)
        for a in range(ln):
            local[members[a]] = -1
        n_up = 0
        for a in range(ln):
            if upper[a]:
                n_up += 1
        if n_up == 0 or n_up == ln:
            for a in range(ln):
                theta[members[a]] = mean
            continue
        pos = off
        for a in range(ln):
            if upper[a]:
                stack_nodes[pos] = members[a]
                pos += 1
        for a in range(ln):
            if not upper[a]:
                stack_nodes[pos] = members[a]
                pos += 1
        offs[top] = off
        lens[top] = n_up
        offs[top + 1] = off + n_up
        lens[top + 1] = ln - n_up
        top += 2
    return theta


def _order_edges(rel):
    """Cover edges when the relation is antisymmetric, otherwise all edges."""
    rel = np.ascontiguousarray(rel, dtype=np.bool_)
    off_diag = rel & ~np.eye(len(rel), dtype=bool)
    if np.any(off_diag & off_diag.T):
        return _dense_edges(rel)
    return _covers(rel)


def isotonic_poset(z, weights, leq):
    """Exact weighted least-squares isotonic regression on a partial order.

    Parameters
    ----------
    z : ndarray, shape (n,)
        Responses given as ``hits / weights`` with integer ``hits``; any real
        responses are accepted when ``weights`` are all one and ``z`` is a
        0/1 vector or a vector of rationals with the given denominators.
    weights : ndarray of int, shape (n,)
    leq : ndarray of bool, shape (n, n)
        ``leq[i, j]`` requires ``theta_i <= theta_j``.

    Returns
    -------
    ndarray
        Fitted values.
    """
    w = np.asarray(weights, dtype=np.int64)
    hits = np.rint(np.asarray(z, dtype=float) * w).astype(np.int64)
    if not np.allclose(hits, np.asarray(z, dtype=float) * w):
        raise DataError("responses must be integer counts divided by integer weights")
    leq = np.asarray(leq, dtype=bool)
    closure = _transitive_closure(leq)
    adj_start, adj_to = _order_edges(closure)
    return _isotonic_counts(hits, w, adj_start, adj_to)


def _transitive_closure(rel):
    """Warshall closure so that any acyclic constraint graph is accepted."""
    c = np.array(rel, dtype=bool)
    for k in range(len(c)):
        c |= c[:, k:k + 1] & c[k:k + 1, :]
    return c


@njit(cache=True)
def _fit_all_thresholds(rank_of_y, n_thr, point_of_obs, w, adj_start, adj_to):
    """CDF matrix (points x thresholds) of the antitonic fit for every threshold."""
    n = w.shape[0]
    out = np.empty((n, n_thr))
    hits = np.zeros(n, dtype=np.int64)
    # observations sorted by threshold rank are added incrementally
    order = np.argsort(rank_of_y)
    pos = 0
    n_obs = rank_of_y.shape[0]
    for k in range(n_thr):
        changed = False
        while pos < n_obs and rank_of_y[order[pos]] <= k:
            hits[point_of_obs[order[pos]]] += 1
            pos += 1
            changed = True
        if k > 0 and not changed:
            out[:, k] = out[:, k - 1]
            continue
        out[:, k] = _isotonic_counts(hits, w, adj_start, adj_to)
    return out


# ---------------------------------------------------------------------------
# fits and prediction


@dataclass(frozen=True, eq=False)
class IdrFit:
    """Fitted conditional CDFs at the distinct training ensembles.

    Attributes
    ----------
    points : ndarray, shape (k, m)
        Distinct sorted training ensembles.
    weights : ndarray of int, shape (k,)
    thresholds : ndarray, shape (T,)
        Distinct training observations.
    cdf : ndarray, shape (k, T)
        Fitted CDF value of each point at each threshold.
    """

    points: np.ndarray
    weights: np.ndarray
    thresholds: np.ndarray
    cdf: np.ndarray

    def envelope(self):
        """Pointwise minimum and maximum of all fitted CDFs."""
        return self.cdf.min(axis=0), self.cdf.max(axis=0)

    def pooled_cdf(self):
        """Empirical CDF of all training observations at the thresholds.

        Least-squares isotonic fits keep the weighted mean of every block, so
        the weighted average of the fitted CDFs is exactly the pooled one.
        """
        return self.weights @ self.cdf / self.weights.sum()

    def predict_cdf(self, X, grid=None):
        """CDF values of new ensembles ``X`` at ``grid`` (default: own thresholds)."""
        Xs = np.sort(np.asarray(X, dtype=float), axis=-1)
        cdf = _predict_bounds(np.ascontiguousarray(Xs), self.points, self.cdf, self.pooled_cdf())
        if grid is None:
            return cdf
        idx = np.searchsorted(self.thresholds, grid, side="right") - 1
        out = np.where(idx[None, :] >= 0, cdf[:, np.maximum(idx, 0)], 0.0)
        return out

    def to_dict(self):
        return {
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
            "thresholds": self.thresholds.tolist(),
            "cdf": self.cdf.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["points"], float),
            np.asarray(d["weights"], np.int64),
            np.asarray(d["thresholds"], float),
            np.asarray(d["cdf"], float),
        )


@njit(cache=True)
def _predict_bounds(Xnew, P, cdf, pooled):
    n_new, m = Xnew.shape
    k, T = cdf.shape
    out = np.empty((n_new, T))
    lower = np.empty(T)
    upper = np.empty(T)
    for i in range(n_new):
        has_lo = False
        has_hi = False
        for t in range(T):
            lower[t] = 0.0
            upper[t] = 1.0
        for j in range(k):
            above = True
            below = True
            for c in range(m):
                if P[j, c] < Xnew[i, c]:
                    above = False
                if P[j, c] > Xnew[i, c]:
                    below = False
                if not above and not below:
                    break
            if above:
                # training point dominates: its CDF is a lower bound
                has_lo = True
                for t in range(T):
                    if cdf[j, t] > lower[t]:
                        lower[t] = cdf[j, t]
            if below:
                has_hi = True
                for t in range(T):
                    if cdf[j, t] < upper[t]:
                        upper[t] = cdf[j, t]
        for t in range(T):
            if has_lo and has_hi:
                out[i, t] = 0.5 * (lower[t] + upper[t])
            elif has_lo:
                out[i, t] = lower[t]
            elif has_hi:
                out[i, t] = upper[t]
            else:
                out[i, t] = pooled[t]
    return out


def fit_idr(ensembles, y, min_cases=MIN_CASES):
    """Fit IDR on ensembles (rows) and observations.

    Raises
    ------
    DataError
        Fewer than ``min_cases`` cases or non-finite inputs.
    """
    X = np.sort(np.asarray(ensembles, dtype=float), axis=1)
    y = np.asarray(y, dtype=float)
    if len(y) < min_cases:
        raise DataError(f"IDR needs at least {min_cases} cases, got {len(y)}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("IDR inputs must be finite")
    points, point_of_obs, weights = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    point_of_obs = point_of_obs.ravel()
    thresholds, rank_of_y = np.unique(y, return_inverse=True)
    leq = sd_leq_matrix(points)
    # theta_i <= theta_j whenever x_j <= x_i
    adj_start, adj_to = _covers(np.ascontiguousarray(leq.T))
    cdf = _fit_all_thresholds(
        rank_of_y.ravel().astype(np.int64), len(thresholds), point_of_obs.astype(np.int64),
        weights.astype(np.int64), adj_start, adj_to,
    )
    cdf[:, -1] = 1.0
    return IdrFit(points, weights.astype(np.int64), thresholds, np.clip(cdf, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class IdrEnsembleFit:
    """Subbagged IDR: fits on random subsamples, combined by averaging CDFs."""

    members: tuple
    grid: np.ndarray

    def predict(self, X):
        """Averaged forecast as point masses on the union of all threshold grids."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        acc = np.zeros((len(X), len(self.grid)))
        for fit in self.members:
            acc += fit.predict_cdf(X, self.grid)
        cdf = acc / len(self.members)
        cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0), axis=1)
        cdf[:, -1] = 1.0
        probs = np.diff(cdf, axis=1, prepend=0.0)
        return DiscreteForecast(np.broadcast_to(self.grid, probs.shape), probs)

    def to_dict(self):
        return {"grid": self.grid.tolist(), "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(IdrFit.from_dict(m) for m in d["members"]), np.asarray(d["grid"], float))


def fit_idr_subbag(ensembles, y, n_subsamples=100, ratio=0.5, rng=None):
    """Fit IDR on ``n_subsamples`` random subsamples of size ``floor(ratio * n)``.

    Subsamples are drawn without replacement from ``rng`` in a fixed order,
    so the result is deterministic for a seeded generator.
    """
    X = np.asarray(ensembles, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(rng)
    n = len(y)
    size = int(np.floor(ratio * n))
    if size < MIN_CASES:
        raise DataError(f"subsamples of size {size} are too small for IDR")
    fits = []
    for _ in range(n_subsamples):
        idx = rng.choice(n, size=size, replace=False)
        fits.append(fit_idr(X[idx], y[idx]))
    grid = np.unique(np.concatenate([f.thresholds for f in fits]))
    return IdrEnsembleFit(tuple(fits), grid)


def predict_idr(fit, X):
    """Forecast for new ensembles from an :class:`IdrFit` or :class:`IdrEnsembleFit`."""
    if isinstance(fit, IdrEnsembleFit):
        return fit.predict(X)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cdf = fit.predict_cdf(X)
    cdf = np.maximum.accumulate(cdf, axis=1)
    cdf[:, -1] = 1.0
    probs = np.diff(cdf, axis=1, prepend=0.0)
    return DiscreteForecast(np.broadcast_to(fit.thresholds, probs.shape), probs)


@dataclass(frozen=True, eq=False)
class IdrModel:
    """Subbagged IDR fits keyed by ``(station, lead_time)``."""

    fits: dict

    def predict(self, cases):
        """Batch forecast; cases of different keys are padded to a common support size."""
        keys = np.stack([cases.station, cases.lead], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        parts = []
        width = 0
        for u, key in enumerate(uniq):
            k = (int(key[0]), int(key[1]))
            if k not in self.fits:
                raise ModelKeyError(f"no IDR model for station {k[0]}, lead {k[1]}")
            rows = np.flatnonzero(inv == u)
            f = predict_idr(self.fits[k], cases.ens[rows])
            parts.append((rows, f))
            width = max(width, f.values.shape[1])
        values = np.empty((len(cases), width))
        probs = np.zeros((len(cases), width))
        for rows, f in parts:
            w = f.values.shape[1]
            values[rows, :w] = f.values
            values[rows, w:] = f.values[:, -1:]
            probs[rows, :w] = f.probs
        return DiscreteForecast(values, probs)

    def to_dict(self):
        return {
            "method": "idr",
            "keys": [{"station": k[0], "lead": k[1], "fit": v.to_dict()} for k, v in sorted(self.fits.items())],
        }

    @classmethod
    def from_dict(cls, d):
        return cls({(e["station"], e["lead"]): IdrEnsembleFit.from_dict(e["fit"]) for e in d["keys"]})


def fit_idr_model(cases, n_subsamples=100, ratio=0.5, seed=0, jobs=1):
    """Fit subbagged IDR per station and lead time on all training cases."""
    if not isinstance(cases, CaseSet):
        raise DataError("expected a CaseSet")
    ok = cases.has_obs
    tasks = []
    for s in np.unique(cases.station[ok]):
        for ld in np.unique(cases.lead[ok & (cases.station == s)]):
            sel = ok & (cases.station == s) & (cases.lead == ld)
            tasks.append((int(s), int(ld), cases.ens[sel], cases.obs[sel]))
    seeds = np.random.SeedSequence(seed).spawn(len(tasks))

    def work(i):
        s, ld, X, y = tasks[i]
        return fit_idr_subbag(X, y, n_subsamples=n_subsamples, ratio=ratio, rng=np.random.default_rng(seeds[i]))

    if jobs == 1:
        fits = [work(i) for i in range(len(tasks))]
    else:
        from joblib import Parallel, delayed

        fits = Parallel(n_jobs=jobs)(delayed(work)(i) for i in range(len(tasks)))
    return IdrModel({(t[0], t[1]): f for t, f in zip(tasks, fits)})
