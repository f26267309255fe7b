"""Feed-forward network with a station embedding, written directly in numpy.

The input of every case is its standardized predictor vector concatenated
with a learned embedding row of its station. Hidden layers use the softplus
activation; the output layer is linear and the head applies its own
activation.
"""

from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit

from ..exceptions import DataError

__all__ = ["NetworkSpec", "Network", "init_network", "Adam", "softplus"]


def softplus(x):
    # stable log(1 + exp(x)), cheaper than np.logaddexp
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture and optimizer settings of one network."""

    n_inputs: int
    n_outputs: int
    hidden: tuple = (64, 32)
    embedding_dim: int = 10
    learning_rate: float = 5e-4
    epochs: int = 150
    patience: int = 10
    batch_size: int = 64

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class Network:
    """Parameters and forward/backward passes of one network.

    ``params`` holds the embedding matrix ``E`` and the dense layers
    ``W0, b0, W1, b1, ...``; the last dense layer is the (linear) output.
    All parameters are views into the flat vector ``theta`` (keys in sorted
    order), so optimizers can update them in a single operation.
    """

    def __init__(self, spec, stations, params):
        self.spec = spec
        self.stations = tuple(int(s) for s in stations)
        self._row = {s: i for i, s in enumerate(self.stations)}
        self._keys = sorted(params)
        self._shapes = [np.shape(params[k]) for k in self._keys]
        self.theta = np.concatenate([np.asarray(params[k], dtype=float).ravel() for k in self._keys])
        self.params = self._views(self.theta)

    def _views(self, flat):
        out, pos = {}, 0
        for k, shp in zip(self._keys, self._shapes):
            n = int(np.prod(shp))
            out[k] = flat[pos:pos + n].reshape(shp)
            pos += n
        return out

    @property
    def n_layers(self):
        return len(self.spec.hidden) + 1

    def rows(self, station):
        """Embedding rows for station ids; unknown stations raise ``DataError``."""
        try:
            return np.array([self._row[int(s)] for s in np.atleast_1d(station)], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"station {e.args[0]} has no embedding (not in the training data)") from None

    def forward(self, X, rows, keep=False):
        """Raw (pre-activation) outputs for inputs ``X`` (B, n_inputs).

        With ``keep=True`` the intermediate activations needed by
        :meth:`backward` are returned as well.
        """
        a = np.concatenate([X, self.params["E"][rows]], axis=1)
        cache = [(a, None)]
        for k in range(self.n_layers):
            z = a @ self.params[f"W{k}"] + self.params[f"b{k}"]
            if k < self.n_layers - 1:
                a = softplus(z)
                cache.append((a, z))
            else:
                a = z
        return (a, cache) if keep else a

    def backward(self, cache, rows, g_out):
        """Gradients of ``sum(g_out * output)`` w.r.t. all parameters.

        Returns the flat gradient (same layout as ``theta``); the per-key
        views are available through :meth:`unflatten`.
        """
        flat = np.zeros_like(self.theta)
        grads = self._views(flat)
        g = g_out
        for k in range(self.n_layers - 1, -1, -1):
            a_in = cache[k][0]
            np.matmul(a_in.T, g, out=grads[f"W{k}"])
            grads[f"b{k}"][...] = g.sum(axis=0)
            g = g @ self.params[f"W{k}"].T
            if k > 0:
                g = g * expit(cache[k][1])
        n_x = self.spec.n_inputs
        np.add.at(grads["E"], rows, g[:, n_x:])
        return flat

    def unflatten(self, flat):
        return self._views(flat)

    def copy(self):
        return Network(self.spec, self.stations, self.params)

    def flat(self):
        return self.theta.copy()

    def set_flat(self, theta):
        self.theta[...] = theta

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "stations": list(self.stations),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, d):
        params = {
            k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["params"].items()
        }
        for k, v in params.items():
            if not np.all(np.isfinite(v)):
                raise DataError(f"non-finite network weights in {k}")
        return cls(NetworkSpec.from_dict(d["spec"]), d["stations"], params)


def init_network(spec, stations, rng):
    """Random initial weights.

    The embedding is uniform on [-0.05, 0.05]; dense weights are uniform on
    ``[-sqrt(3 / fan_in), sqrt(3 / fan_in)]``; biases start at zero.
    """
    params = {"E": rng.uniform(-0.05, 0.05, (len(stations), spec.embedding_dim))}
    sizes = [spec.n_inputs + spec.embedding_dim, *spec.hidden, spec.n_outputs]
    for k in range(len(sizes) - 1):
        lim = np.sqrt(3.0 / sizes[k])
        params[f"W{k}"] = rng.uniform(-lim, lim, (sizes[k], sizes[k + 1]))
        params[f"b{k}"] = np.zeros(sizes[k + 1])
    return Network(spec, stations, params)


class Adam:
    """Adaptive moment estimation with the usual bias correction, on a flat vector."""

    def __init__(self, n, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta, grad):
        """Update ``theta`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        theta -= (self.lr / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)
