"""Output heads: activation, training loss and forecast construction.

Each head maps the raw network outputs ``o`` (B, k) to a forecast and
provides the per-case loss together with its gradient w.r.t. ``o``. Losses
take ``head.target(y)``, which is ``y`` itself except for the histogram head
(bin indices).

- ``drn``: truncated logistic, ``mu = softplus(o_0)``, ``sigma = softplus(o_1)``,
  trained on the CRPS.
- ``bqn``: Bernstein quantile function of degree 12 whose coefficients are
  cumulative sums of 13 softplus increments, trained on the mean quantile
  loss over 99 levels.
- ``hen``: histogram with fixed bins and softmax probabilities, trained on the
  categorical cross-entropy of the bin containing the observation.
"""

import logging

import numpy as np
from scipy.special import expit, log_softmax

from ..distributions import BernsteinQuantile, HistogramForecast, TruncatedLogistic, bernstein_basis
from ..exceptions import ConfigError
from ..scoring import TRAIN_LEVELS, crps_tlogis_grad
from .network import softplus

__all__ = ["DrnHead", "BqnHead", "HenHead", "make_head", "HEADS"]

log = logging.getLogger(__name__)


class DrnHead:
    name = "drn"
    n_outputs = 2
    hidden = (64, 32)

    def params(self, o):
        return softplus(o[:, 0]), softplus(o[:, 1])

    def target(self, y):
        return np.asarray(y, dtype=float)

    def loss_grad(self, o, y):
        mu, sigma = self.params(o)
        loss, d_mu, d_sigma = crps_tlogis_grad(mu, sigma, y)
        g = np.stack([d_mu * expit(o[:, 0]), d_sigma * expit(o[:, 1])], axis=1)
        return loss, g

    def forecast(self, o):
        mu, sigma = self.params(o)
        return TruncatedLogistic(mu, sigma)

    def to_dict(self):
        return {"name": self.name}


class BqnHead:
    name = "bqn"
    hidden = (48, 24)

    def __init__(self, degree=12, levels=TRAIN_LEVELS):
        self.degree = int(degree)
        self.levels = np.asarray(levels, dtype=float)
        self.basis = bernstein_basis(self.levels, self.degree)  # (K, d+1)

    @property
    def n_outputs(self):
        return self.degree + 1

    def coefficients(self, o):
        return np.cumsum(softplus(o), axis=1)

    def target(self, y):
        return np.asarray(y, dtype=float)

    def loss_grad(self, o, y):
        alpha = self.coefficients(o)
        q = alpha @ self.basis.T  # (B, K)
        diff = q - y[:, None]
        ind = (diff >= 0).astype(float)
        loss = np.mean(diff * (ind - self.levels), axis=1)
        d_q = (ind - self.levels) / len(self.levels)
        d_alpha = d_q @ self.basis
        # coefficients are cumulative sums of the increments
        d_inc = np.cumsum(d_alpha[:, ::-1], axis=1)[:, ::-1]
        return loss, d_inc * expit(o)

    def forecast(self, o):
        return BernsteinQuantile(self.coefficients(o))

    def to_dict(self):
        return {"name": self.name, "degree": self.degree, "levels": self.levels.tolist()}


class HenHead:
    name = "hen"
    hidden = (64, 32)

    def __init__(self, edges):
        self.edges = np.asarray(edges, dtype=float)
        if np.any(np.diff(self.edges) <= 0):
            raise ConfigError("bin edges must be strictly increasing")

    @property
    def n_outputs(self):
        return len(self.edges) - 1

    def target(self, y):
        return self.bin_index(y)

    def bin_index(self, y):
        """Bin of each observation; values outside the bins are clamped to the edge bins."""
        y = np.asarray(y, dtype=float)
        k = np.searchsorted(self.edges, y, side="right") - 1
        outside = (k < 0) | (k >= self.n_outputs)
        if np.any(outside):
            log.warning("%d observations outside the histogram bins, clamped to the edge bins", int(outside.sum()))
        return np.clip(k, 0, self.n_outputs - 1)

    def probs(self, o):
        return np.exp(log_softmax(o, axis=1))

    def loss_grad(self, o, k):
        """Cross-entropy for bin indices ``k`` (see :meth:`target`)."""
        lp = log_softmax(o, axis=1)
        loss = -lp[np.arange(len(k)), k]
        g = np.exp(lp)
        g[np.arange(len(k)), k] -= 1.0
        return loss, g

    def forecast(self, o):
        p = self.probs(o)
        # renormalize against rounding so the histogram invariant holds exactly
        p = p / p.sum(axis=1, keepdims=True)
        return HistogramForecast(self.edges, p)

    def to_dict(self):
        return {"name": self.name, "edges": self.edges.tolist()}


HEADS = ("drn", "bqn", "hen")


def make_head(d):
    """Rebuild a head from its ``to_dict`` form."""
    name = d["name"]
    if name == "drn":
        return DrnHead()
    if name == "bqn":
        return BqnHead(d.get("degree", 12), d.get("levels", TRAIN_LEVELS))
    if name == "hen":
        return HenHead(d["edges"])
    raise ConfigError(f"unknown network head {name!r}")
