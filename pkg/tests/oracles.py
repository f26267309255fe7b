"""Independent reference implementations used to check the package.

They are deliberately naive: enumeration, textbook recursions, plain loops
and adaptive quadrature, sharing no code with the package. The gradient
check drives the package network but takes its reference from finite
differences of the loss.
"""

import math

import numpy as np
from scipy import integrate, special


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for p in set_partitions(rest):
        for i in range(len(p)):
            yield p[:i] + [[first] + p[i]] + p[i + 1:]
        yield [[first]] + p


def isotonic_brute_force(z, w, leq):
    """Weighted least squares under ``theta_i <= theta_j`` for ``leq[i, j]``.

    The optimum is constant with the block weighted mean on each of its level
    sets, so enumerating every set partition and keeping the best feasible
    block-mean assignment finds it exactly.
    """
    n = len(z)
    best = None
    for part in set_partitions(list(range(n))):
        th = np.empty(n)
        for b in part:
            th[b] = np.dot(w[b], z[b]) / w[b].sum()
        if all(th[i] <= th[j] + 1e-12 for i in range(n) for j in range(n) if leq[i, j]):
            obj = float(np.dot(w, (th - z) ** 2))
            if best is None or obj < best[0] - 1e-14:
                best = (obj, th)
    return best[1]


def pava(y, w=None):
    """Pool-adjacent-violators for a sequence (non-decreasing fit)."""
    w = np.ones(len(y)) if w is None else np.asarray(w, float)
    blocks = []
    for v, wt in zip(y, w):
        blocks.append([float(v), float(wt), 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            v2, w2, c2 = blocks.pop()
            v1, w1, c1 = blocks.pop()
            blocks.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, c1 + c2])
    return np.concatenate([[v] * c for v, _, c in blocks])


def dm_statistic(f, g):
    d = [a - b for a, b in zip(f, g)]
    n = len(d)
    mean = sum(d) / n
    s = math.sqrt(sum(x * x for x in d) / n)
    return math.sqrt(n) * mean / s


def central_difference_gradient(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def network_gradient_error(head, rng, n_inputs=4, batch=6, hidden=(5, 3)):
    """Relative error between backpropagation and central differences.

    A random small network (weights perturbed away from initialization) and a
    random batch are drawn; the loss is the mean head loss of the batch.
    """
    from gustpp.nn import NetworkSpec, init_network

    spec = NetworkSpec(n_inputs, head.n_outputs, hidden=hidden, embedding_dim=2)
    net = init_network(spec, [1, 2, 3], rng)
    for k in net.params:
        net.params[k][...] += rng.normal(0, 0.3, net.params[k].shape)
    X = rng.normal(size=(batch, n_inputs))
    rows = net.rows(rng.integers(1, 4, batch))
    t = head.target(rng.uniform(0.5, 15, batch))

    def loss(theta):
        other = net.copy()
        other.set_flat(theta)
        return head.loss_grad(other.forward(X, rows), t)[0].mean()

    o, cache = net.forward(X, rows, keep=True)
    _, g = head.loss_grad(o, t)
    analytic = net.backward(cache, rows, g / batch)
    numeric = central_difference_gradient(loss, net.flat())
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


def crps_quadrature(cdf, y, lo, hi, breaks=()):
    """CRPS as the integral of (F(z) - 1{y <= z})^2 over [lo, hi].

    The range is cut at ``y`` and at every point in ``breaks`` (kinks or jumps
    of ``F``) so each piece is smooth for the adaptive rule.
    """
    pts = np.unique(np.clip(np.r_[lo, hi, y, list(breaks)], lo, hi))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        step = 1.0 if a >= y else 0.0
        total += integrate.quad(lambda z: (cdf(z) - step) ** 2, a, b, limit=200, epsabs=1e-12, epsrel=1e-11)[0]
    return total


def tlogis_cdf_ratio(z, mu, sigma):
    """CDF of the logistic distribution left-truncated at zero.

    Written as one minus a ratio of survival functions, which stays accurate
    when nearly all mass of the untruncated logistic lies below zero.
    """
    if z <= 0:
        return 0.0
    return 1.0 - special.expit((mu - z) / sigma) / special.expit(mu / sigma)


def crps_tlogis_quadrature(mu, sigma, y):
    # beyond 60 scales above the larger of mu and y the integrand is below 1e-26
    hi = max(mu, y, 0.0) + 60.0 * sigma
    return crps_quadrature(lambda z: tlogis_cdf_ratio(z, mu, sigma), y, 0.0, hi, (mu,))


def crps_ensemble_quadrature(x, y):
    x = np.sort(np.asarray(x, dtype=float))
    lo, hi = min(x[0], y) - 1.0, max(x[-1], y) + 1.0
    return crps_quadrature(lambda z: np.searchsorted(x, z, side="right") / len(x), y, lo, hi, x)


def crps_histogram_quadrature(edges, p, y):
    cum = np.r_[0.0, np.cumsum(p)]
    lo, hi = min(edges[0], y) - 1.0, max(edges[-1], y) + 1.0
    return crps_quadrature(lambda z: float(np.interp(z, edges, cum)), y, lo, hi, edges)
