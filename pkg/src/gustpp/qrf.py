"""Quantile regression forests.

Trees are grown on bootstrap samples with variance-reduction splits over a
random subset of the predictors at every node. For prediction, all training
observations are dropped down each tree; a training observation gets weight
``1 / (leaf size)`` in a tree when it shares the leaf with the new case, and
the weights are averaged over the trees. Quantiles are lower quantiles of the
resulting weighted empirical distribution.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .distributions import QuantileForecast
from .emos import _run
from .exceptions import DataError, ModelKeyError
from .scoring import EVAL_LEVELS

__all__ = [
    "Forest",
    "QrfModel",
    "fit_forest",
    "fit_qrf",
    "fit_qrf_model",
    "predict_qrf",
    "weighted_quantiles",
    "qrf_oob_importance",
    "write_forest_jsonl",
    "read_forest_jsonl",
]

N_TREES = 1000
MTRY_RATIO = 0.5
MIN_NODE_SIZE = 5
MAX_DEPTH = 20


# ---------------------------------------------------------------------------
# tree growth


@njit(cache=True)
def _grow_tree(X, y, boot, mtry, min_node, max_depth, seed):
    """Grow one regression tree on the rows ``boot`` (with repetitions).

    Returns node arrays ``feature, threshold, left, right`` (leaves have
    ``feature == -1``) and the number of nodes.
    """
    np.random.seed(seed)
    n_boot = boot.shape[0]
    p = X.shape[1]
    cap = 2 * n_boot + 1
    feature = -np.ones(cap, dtype=np.int64)
    threshold = np.zeros(cap)
    left = -np.ones(cap, dtype=np.int64)
    right = -np.ones(cap, dtype=np.int64)
    # node work list: (node id, start, end, depth) into the index buffer
    idx = boot.copy()
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n_boot
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    feats = np.arange(p)
    xs = np.empty(n_boot)
    ys = np.empty(n_boot)
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        k = hi - lo
        if k < 2 * min_node or depth >= max_depth:
            continue
        tot = 0.0
        tot2 = 0.0
        for a in range(lo, hi):
            tot += y[idx[a]]
            tot2 += y[idx[a]] * y[idx[a]]
        parent = tot * tot / k
        if tot2 - parent <= 1e-12 * max(tot2, 1.0):
            continue  # constant response
        # random predictor subset (partial Fisher-Yates), scanned in index order
        for a in range(mtry):
            b = a + np.random.randint(p - a)
            tmp = feats[a]
            feats[a] = feats[b]
            feats[b] = tmp
        cand = np.sort(feats[:mtry])
        best_gain = 0.0
        best_f = -1
        best_t = 0.0
        for ci in range(mtry):
            f = cand[ci]
            for a in range(k):
                xs[a] = X[idx[lo + a], f]
            order = np.argsort(xs[:k], kind="mergesort")
            for a in range(k):
                ys[a] = y[idx[lo + order[a]]]
            s_left = 0.0
            for a in range(k - 1):
                s_left += ys[a]
                n_l = a + 1
                if n_l < min_node or k - n_l < min_node:
                    continue
                x_a = xs[order[a]]
                x_b = xs[order[a + 1]]
                if x_b <= x_a:
                    continue
                s_right = tot - s_left
                gain = s_left * s_left / n_l + s_right * s_right / (k - n_l) - parent
                if gain > best_gain * (1.0 + 1e-12) + 1e-12:
                    best_gain = gain
                    best_f = f
                    best_t = 0.5 * (x_a + x_b)
        if best_f < 0:
            continue
        # partition the index buffer in place
        i = lo
        j = hi - 1
        while i <= j:
            if X[idx[i], best_f] <= best_t:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top] = n_nodes
        st_lo[top] = lo
        st_hi[top] = i
        st_depth[top] = depth + 1
        st_node[top + 1] = n_nodes + 1
        st_lo[top + 1] = i
        st_hi[top + 1] = hi
        st_depth[top + 1] = depth + 1
        top += 2
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes]


@njit(cache=True)
def _apply(feature, threshold, left, right, X):
    """Leaf node id of every row of ``X``."""
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def _forest_apply(offsets, feature, threshold, left, right, X):
    """Leaf ids (local to each tree) for all trees, shape (n_trees, n)."""
    n_trees = offsets.shape[0] - 1
    out = np.empty((n_trees, X.shape[0]), dtype=np.int64)
    for t in range(n_trees):
        a = offsets[t]
        b = offsets[t + 1]
        out[t] = _apply(feature[a:b], threshold[a:b], left[a:b], right[a:b], X)
    return out


@njit(cache=True)
def _weights(train_leaves, test_leaves, n_nodes):
    """Forest weights of the training observations for each test case."""
    n_trees, n_train = train_leaves.shape
    n_test = test_leaves.shape[1]
    w = np.zeros((n_test, n_train))
    for t in range(n_trees):
        size = np.zeros(n_nodes[t], dtype=np.int64)
        for i in range(n_train):
            size[train_leaves[t, i]] += 1
        # training members of each leaf in CSR form
        start = np.zeros(n_nodes[t] + 1, dtype=np.int64)
        for v in range(n_nodes[t]):
            start[v + 1] = start[v] + size[v]
        fill = start[:-1].copy()
        members = np.empty(n_train, dtype=np.int64)
        for i in range(n_train):
            v = train_leaves[t, i]
            members[fill[v]] = i
            fill[v] += 1
        for c in range(n_test):
            v = test_leaves[t, c]
            if size[v] == 0:
                continue
            inc = 1.0 / size[v]
            for e in range(start[v], start[v + 1]):
                w[c, members[e]] += inc
    return w / n_trees


def weighted_quantiles(y, w, levels):
    """Lower quantiles ``min{y : W(y) >= tau}`` of weighted samples.

    Parameters
    ----------
    y : ndarray, shape (n,)
    w : ndarray, shape (..., n)
        Non-negative weights, normalized along the last axis.
    levels : ndarray, shape (K,)
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    order = np.argsort(y, kind="mergesort")
    ys = y[order]
    cw = np.cumsum(w[..., order], axis=-1)
    cw /= cw[..., -1:]
    levels = np.asarray(levels, dtype=float)
    # guard the comparison against rounding in the cumulative sum
    pos = np.apply_along_axis(lambda c: np.searchsorted(c, levels - 1e-12, side="left"), -1, cw)
    return ys[np.minimum(pos, len(ys) - 1)]


@njit(cache=True)
def _oob_importance(offsets, feature, threshold, left, right, X, y, boot_counts, seeds):
    """Per-tree increase of the out-of-bag squared error after permuting each predictor."""
    n_trees = offsets.shape[0] - 1
    n, p = X.shape
    out = np.zeros((n_trees, p))
    for t in range(n_trees):
        np.random.seed(seeds[t])
        a = offsets[t]
        b = offsets[t + 1]
        f, th, le, ri = feature[a:b], threshold[a:b], left[a:b], right[a:b]
        nn = b - a
        # in-bag leaf means
        s = np.zeros(nn)
        c = np.zeros(nn)
        leaves = _apply(f, th, le, ri, X)
        for i in range(n):
            if boot_counts[t, i] > 0:
                s[leaves[i]] += boot_counts[t, i] * y[i]
                c[leaves[i]] += boot_counts[t, i]
        oob = np.flatnonzero(boot_counts[t] == 0)
        m = oob.shape[0]
        if m < 2:
            continue
        Xo = X[oob].copy()
        base = 0.0
        for r in range(m):
            v = leaves[oob[r]]
            base += (y[oob[r]] - s[v] / c[v]) ** 2
        base /= m
        for j in range(p):
            perm = np.random.permutation(m)
            col = Xo[:, j].copy()
            for r in range(m):
                Xo[r, j] = col[perm[r]]
            lp = _apply(f, th, le, ri, Xo)
            err = 0.0
            for r in range(m):
                err += (y[oob[r]] - s[lp[r]] / c[lp[r]]) ** 2
            out[t, j] = err / m - base
            for r in range(m):
                Xo[r, j] = col[r]
    return out


# ---------------------------------------------------------------------------
# forest container


@dataclass(frozen=True, eq=False)
class Forest:
    """Trees stored as concatenated node arrays with per-tree offsets.

    ``y`` and ``train_leaves`` (leaf of every training observation in every
    tree) are kept so that prediction only needs the new predictors.
    """

    names: tuple
    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    y: np.ndarray
    train_leaves: np.ndarray
    boot_counts: np.ndarray
    seed: int = 0
    hyper: dict = field(default_factory=dict)

    @property
    def n_trees(self):
        return len(self.offsets) - 1

    @property
    def n_nodes(self):
        return np.diff(self.offsets)

    def tree(self, t):
        a, b = self.offsets[t], self.offsets[t + 1]
        return self.feature[a:b], self.threshold[a:b], self.left[a:b], self.right[a:b]

    def apply(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        return _forest_apply(self.offsets, self.feature, self.threshold, self.left, self.right, X)

    def weights(self, X):
        """Forest weights of the training observations, shape (n_cases, n_train)."""
        leaves = self.apply(X)
        return _weights(self.train_leaves, leaves, self.n_nodes.astype(np.int64))

    def predict_quantiles(self, X, levels=EVAL_LEVELS):
        return weighted_quantiles(self.y, self.weights(X), levels)

    def predict_mean(self, X):
        return self.weights(X) @ self.y

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.offsets, self.feature, self.threshold, self.left, self.right, self.train_leaves):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def columns(self, X, names):
        """Select this forest's predictor columns from ``X`` labelled by ``names``."""
        names = list(names)
        try:
            idx = [names.index(n) for n in self.names]
        except ValueError:
            missing = [n for n in self.names if n not in names]
            raise DataError(f"missing predictor {missing[0]!r}") from None
        return np.asarray(X, dtype=float)[..., idx]


def fit_forest(X, y, names=None, n_trees=N_TREES, mtry_ratio=MTRY_RATIO,
               min_node_size=MIN_NODE_SIZE, max_depth=MAX_DEPTH, seed=0):
    """Grow a forest on predictor matrix ``X`` (n, p) and responses ``y``.

    Each tree uses its own random stream derived from ``(seed, tree index)``.

    Raises
    ------
    DataError
        Fewer than ``2 * min_node_size`` cases.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, p = X.shape
    if n < 2 * min_node_size:
        raise DataError(f"need at least {2 * min_node_size} training cases, got {n}")
    if names is None:
        names = tuple(f"x{j}" for j in range(p))
    mtry = max(1, math.ceil(mtry_ratio * p))
    children = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    counts = np.zeros((n_trees, n), dtype=np.int64)
    for t, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, n)
        counts[t] = np.bincount(boot, minlength=n)
        tree_seed = int(ss.generate_state(1)[0] % (2**31 - 1))
        trees.append(_grow_tree(X, y, boot.astype(np.int64), mtry, min_node_size, max_depth, tree_seed))
    sizes = np.array([len(tr[0]) for tr in trees])
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    feature, threshold, left, right = (np.concatenate([tr[i] for tr in trees]) for i in range(4))
    leaves = _forest_apply(offsets, feature, threshold, left, right, X)
    hyper = dict(n_trees=n_trees, mtry=mtry, min_node_size=min_node_size, max_depth=max_depth)
    return Forest(tuple(names), offsets, feature, threshold, left, right, y, leaves, counts, int(seed), hyper)


def _usable_columns(X, names):
    keep = np.ptp(X, axis=0) > 0
    return X[:, keep], tuple(n for n, k in zip(names, keep) if k)


def fit_qrf(cases, seed=0, **hyper):
    """Forest on the observed cases of one station and lead time.

    Predictors constant over the training cases (station altitude, for
    instance) are left out since they can never split a node.
    """
    ok = cases.has_obs
    X, names = _usable_columns(cases.X[ok], cases.predictor_names)
    return fit_forest(X, cases.obs[ok], names, seed=seed, **hyper)


def predict_qrf(forest, case_or_X, levels=EVAL_LEVELS, names=None):
    """Quantile forecast at ``levels`` for a :class:`ForecastCase` or predictor rows."""
    if hasattr(case_or_X, "predictors"):
        try:
            x = np.array([[case_or_X.predictors[n] for n in forest.names]])
        except KeyError as e:
            raise DataError(f"missing predictor {e.args[0]!r}") from None
        return QuantileForecast(levels, forest.predict_quantiles(x, levels)[0])
    X = np.atleast_2d(case_or_X)
    if names is not None:
        X = forest.columns(X, names)
    return QuantileForecast(levels, forest.predict_quantiles(X, levels))


def qrf_oob_importance(forest, X=None, y=None):
    """Out-of-bag permutation importance per predictor.

    For every tree the out-of-bag cases are predicted by their in-bag leaf
    means; the importance of a predictor is the increase of the mean squared
    error after permuting it among the out-of-bag cases, averaged over trees.

    Parameters
    ----------
    forest : Forest
    X, y : ndarray, optional
        Training predictors and responses; ``y`` defaults to the stored one.
        ``X`` must be the matrix the forest was grown on.

    Returns
    -------
    dict
        Predictor name to importance.
    """
    if X is None:
        raise DataError("training predictors are required for out-of-bag importance")
    X = np.ascontiguousarray(X, dtype=float)
    y = forest.y if y is None else np.ascontiguousarray(y, dtype=float)
    seeds = np.array(
        [s.generate_state(1)[0] % (2**31 - 1) for s in np.random.SeedSequence([forest.seed, 1]).spawn(forest.n_trees)],
        dtype=np.int64,
    )
    per_tree = _oob_importance(
        forest.offsets, forest.feature, forest.threshold, forest.left, forest.right, X, y, forest.boot_counts, seeds,
    )
    return dict(zip(forest.names, per_tree.mean(axis=0).tolist()))


# ---------------------------------------------------------------------------
# local models and serialization


@dataclass(frozen=True)
class QrfModel:
    """Forests keyed by ``(station, lead_time)``."""

    forests: dict

    def lookup(self, station, lead):
        try:
            return self.forests[(int(station), int(lead))]
        except KeyError:
            raise ModelKeyError(f"no QRF model for station {station}, lead {lead}") from None

    def predict(self, cases, levels=EVAL_LEVELS):
        out = np.empty((len(cases), len(levels)))
        keys = np.stack([cases.station, cases.lead], axis=1)
        for k in np.unique(keys, axis=0):
            sel = np.all(keys == k, axis=1)
            f = self.lookup(*k)
            out[sel] = f.predict_quantiles(f.columns(cases.X[sel], cases.predictor_names), levels)
        return QuantileForecast(levels, out)

    def importance(self, cases):
        """OOB importance averaged over the local forests, per predictor.

        ``cases`` must be the training cases the model was fitted on.
        """
        tot = {}
        for (s, ld), f in self.forests.items():
            sub = cases.subset((cases.station == s) & (cases.lead == ld) & cases.has_obs)
            imp = qrf_oob_importance(f, f.columns(sub.X, sub.predictor_names), sub.obs)
            for k, v in imp.items():
                tot[k] = tot.get(k, 0.0) + v / len(self.forests)
        return dict(sorted(tot.items(), key=lambda kv: -kv[1]))


def fit_qrf_model(cases, seed=0, jobs=1, **hyper):
    """Fit one forest per station and lead time with seeds derived from ``seed``."""
    keys = sorted({(int(s), int(ld)) for s, ld in zip(cases.station, cases.lead)})
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(keys))]
    tasks = [(k, sd, cases.subset((cases.station == k[0]) & (cases.lead == k[1]))) for k, sd in zip(keys, seeds)]
    fits = _run(tasks, lambda t: fit_qrf(t[2], seed=t[1], **hyper), jobs)
    return QrfModel({t[0]: f for t, f in zip(tasks, fits)})


def _forest_lines(forest, key=None):
    head = {
        "kind": "forest",
        "names": list(forest.names),
        "y": forest.y.tolist(),
        "seed": forest.seed,
        "hyper": forest.hyper,
    }
    if key is not None:
        head["station"], head["lead"] = key
    yield json.dumps(head)
    for t in range(forest.n_trees):
        f, th, le, ri = forest.tree(t)
        yield json.dumps({
            "kind": "tree",
            "feature": f.tolist(),
            "threshold": th.tolist(),
            "left": le.tolist(),
            "right": ri.tolist(),
            "leaves": forest.train_leaves[t].tolist(),
            "boot_counts": forest.boot_counts[t].tolist(),
        })


def write_forest_jsonl(model, path):
    """Write a :class:`QrfModel` (or a single :class:`Forest`) as JSON lines.

    Every forest starts with a header line followed by one line per tree.
    """
    items = [(None, model)] if isinstance(model, Forest) else sorted(model.forests.items())
    with open(path, "w", encoding="utf-8") as fh:
        for key, forest in items:
            for line in _forest_lines(forest, key):
                fh.write(line + "\n")


def _build(head, trees):
    sizes = [len(t["feature"]) for t in trees]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cat = lambda k, dt: np.concatenate([np.asarray(t[k], dtype=dt) for t in trees])  # noqa: E731
    return Forest(
        tuple(head["names"]), offsets, cat("feature", np.int64), cat("threshold", float),
        cat("left", np.int64), cat("right", np.int64), np.asarray(head["y"], float),
        np.array([t["leaves"] for t in trees], dtype=np.int64),
        np.array([t["boot_counts"] for t in trees], dtype=np.int64),
        head["seed"], head["hyper"],
    )


def read_forest_jsonl(path):
    """Inverse of :func:`write_forest_jsonl`."""
    forests = []
    head, trees = None, []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            rec = json.loads(line)
            if rec.get("kind") == "forest":
                if head is not None:
                    forests.append((head, trees))
                head, trees = rec, []
            elif rec.get("kind") == "tree" and head is not None:
                trees.append(rec)
            else:
                raise DataError("unexpected record in forest file", line=lineno)
    if head is not None:
        forests.append((head, trees))
    if len(forests) == 1 and "station" not in forests[0][0]:
        return _build(*forests[0])
    return QrfModel({(h["station"], h["lead"]): _build(h, t) for h, t in forests})
