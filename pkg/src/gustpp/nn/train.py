"""Training of network ensembles, one ensemble per lead time.

Every lead time gets its own ensemble of networks trained jointly on all
stations (the station embedding makes the model locally adaptive). Members
differ only in their initialization and batch-order seeds.
"""

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np

from ..dataset import fit_standardizer, Standardizer
from ..emos import _run
from ..exceptions import ConfigError, DataError, ModelKeyError, OptimizationError
from .aggregate import aggregate
from .binning import build_hen_binning
from .heads import BqnHead, DrnHead, HenHead, make_head
from .network import Adam, Network, NetworkSpec, init_network

__all__ = [
    "InputEncoder",
    "TrainResult",
    "train_network",
    "NnLeadModel",
    "NnModel",
    "fit_nn_model",
    "write_training_log",
    "N_MEMBERS_DEFAULT",
]

log = logging.getLogger(__name__)

N_MEMBERS_DEFAULT = 10
WEIGHTS_VERSION = 1
_GUST_SUMMARIES = ("vmax_mean", "vmax_sd")


@dataclass(frozen=True)
class InputEncoder:
    """Builds network inputs from a ``CaseSet``.

    All heads get the standardized predictors. With ``sorted_members`` the
    gust mean and sd are replaced by the 20 sorted ensemble members, which
    are standardized with the overall member mean and sd of the training data.
    """

    standardizer: Standardizer
    sorted_members: bool = False
    member_mean: float = 0.0
    member_sd: float = 1.0

    @property
    def columns(self):
        names = [n for n in self.standardizer.names if not (self.sorted_members and n in _GUST_SUMMARIES)]
        if self.sorted_members:
            names += [f"member_{i + 1}" for i in range(20)]
        return tuple(names)

    @property
    def n_inputs(self):
        return len(self.columns)

    def encode(self, cases):
        Z = self.standardizer.transform(cases.X, cases.predictor_names)
        if not self.sorted_members:
            return Z
        keep = [i for i, n in enumerate(self.standardizer.names) if n not in _GUST_SUMMARIES]
        members = (np.sort(cases.ens, axis=1) - self.member_mean) / self.member_sd
        return np.concatenate([Z[:, keep], members], axis=1)

    def to_dict(self):
        return {
            "standardizer": self.standardizer.to_dict(),
            "sorted_members": self.sorted_members,
            "member_mean": self.member_mean,
            "member_sd": self.member_sd,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(Standardizer.from_dict(d["standardizer"]), d["sorted_members"], d["member_mean"], d["member_sd"])


def fit_encoder(train, sorted_members=False):
    std = fit_standardizer(train.X, train.predictor_names, warn=False)
    if not sorted_members:
        return InputEncoder(std)
    return InputEncoder(std, True, float(train.ens.mean()), float(train.ens.std(ddof=1)))


@dataclass
class TrainResult:
    network: Network
    history: list  # (epoch, train_loss, val_loss)
    best_epoch: int
    skipped_batches: int
    learning_rate: float


def _mean_loss(head, net, X, rows, t, chunk=4096):
    tot = 0.0
    for a in range(0, len(t), chunk):
        o = net.forward(X[a:a + chunk], rows[a:a + chunk])
        tot += head.loss_grad(o, t[a:a + chunk])[0].sum()
    return tot / len(t)


def _train_once(head, net, data, spec, rng):
    X, rows, t, Xv, rows_v, tv = data
    opt = Adam(net.theta.size, lr=spec.learning_rate)
    n = len(t)
    best = (np.inf, 0, net.copy())
    history = []
    skipped = 0
    wait = 0
    for epoch in range(1, spec.epochs + 1):
        perm = rng.permutation(n)
        tot, cnt = 0.0, 0
        for a in range(0, n, spec.batch_size):
            b = perm[a:a + spec.batch_size]
            o, cache = net.forward(X[b], rows[b], keep=True)
            loss, g = head.loss_grad(o, t[b])
            grad = net.backward(cache, rows[b], g / len(b))
            if not (np.isfinite(loss.sum()) and np.isfinite(grad.sum())):
                skipped += 1
                continue
            opt.step(net.theta, grad)
            tot += loss.sum()
            cnt += len(b)
        train_loss = tot / cnt if cnt else np.nan
        val_loss = _mean_loss(head, net, Xv, rows_v, tv)
        history.append((epoch, float(train_loss), float(val_loss)))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            return None, history, skipped
        if val_loss < best[0]:
            best = (val_loss, epoch, net.copy())
            wait = 0
        else:
            wait += 1
            if wait >= spec.patience:
                break
    return best, history, skipped


def train_network(head, train_data, val_data, spec, stations, seed):
    """Train one network with Adam and early stopping on the validation loss.

    Parameters
    ----------
    head : DrnHead, BqnHead or HenHead
    train_data, val_data : tuple
        ``(inputs, station ids, observations)``.
    spec : NetworkSpec
    stations : sequence of int
        Stations with an embedding row.
    seed : int or SeedSequence
        Controls initialization and batch order.

    Returns
    -------
    TrainResult
        Weights of the epoch with the smallest validation loss.

    Raises
    ------
    OptimizationError
        The loss diverged twice (the second attempt uses half the learning rate).
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    lr = spec.learning_rate
    for attempt in range(2):
        rng = np.random.default_rng(ss)
        s = replace(spec, learning_rate=lr)
        net = init_network(s, stations, rng)
        X, st, y = train_data
        Xv, stv, yv = val_data
        data = (
            np.asarray(X, float), net.rows(st), head.target(y),
            np.asarray(Xv, float), net.rows(stv), head.target(yv),
        )
        best, history, skipped = _train_once(head, net, data, s, rng)
        if best is not None:
            return TrainResult(best[2], history, best[1], skipped, lr)
        log.warning("training diverged (attempt %d); restarting with half the learning rate", attempt + 1)
        lr *= 0.5
    raise OptimizationError("network training diverged twice")


def write_training_log(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, tr, va in history:
            w.writerow([e, repr(tr), repr(va)])


@dataclass(frozen=True, eq=False)
class NnLeadModel:
    """Network ensemble of one head for one lead time."""

    head: object
    encoder: InputEncoder
    members: tuple

    def member_outputs(self, cases):
        X = self.encoder.encode(cases)
        return [m.forward(X, m.rows(cases.station)) for m in self.members]

    def member_forecasts(self, cases):
        return [self.head.forecast(o) for o in self.member_outputs(cases)]

    def predict(self, cases):
        return aggregate(self.head.name, self.member_forecasts(cases))

    def to_dict(self):
        return {
            "head": self.head.to_dict(),
            "encoder": self.encoder.to_dict(),
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(make_head(d["head"]), InputEncoder.from_dict(d["encoder"]), tuple(Network.from_dict(m) for m in d["members"]))


@dataclass(frozen=True, eq=False)
class NnModel:
    """One network ensemble per lead time for a single head."""

    head: str
    leads: dict
    logs: dict = None

    def lookup(self, lead):
        try:
            return self.leads[int(lead)]
        except KeyError:
            raise ModelKeyError(f"no {self.head} networks for lead {lead}") from None

    def predict(self, cases):
        """Aggregated ensemble forecast; cases may mix lead times."""
        uniq = np.unique(cases.lead)
        if len(uniq) == 1:
            return self.lookup(uniq[0]).predict(cases)
        parts = [(cases.lead == ld, self.lookup(ld).predict(cases.subset(cases.lead == ld))) for ld in uniq]
        return _merge_batches(parts, len(cases))

    def to_dict(self):
        return {
            "version": WEIGHTS_VERSION,
            "method": self.head,
            "leads": [dict(lead=ld, **m.to_dict()) for ld, m in sorted(self.leads.items())],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != WEIGHTS_VERSION:
            raise DataError(f"unsupported network weights version {d.get('version')!r}")
        return cls(d["method"], {e["lead"]: NnLeadModel.from_dict(e) for e in d["leads"]})


def _merge_batches(parts, n):
    """Reassemble per-lead forecasts of the same family into one batch in case order."""
    from ..distributions import BernsteinQuantile, PiecewiseLinearQuantile, TruncatedLogistic

    first = parts[0][1]
    if isinstance(first, TruncatedLogistic):
        mu, sigma = np.empty(n), np.empty(n)
        for m, f in parts:
            mu[m], sigma[m] = f.mu, f.sigma
        return TruncatedLogistic(mu, sigma)
    if isinstance(first, BernsteinQuantile):
        co = np.empty((n, first.coefficients.shape[-1]))
        for m, f in parts:
            co[m] = f.coefficients
        return BernsteinQuantile(co)
    if isinstance(first, PiecewiseLinearQuantile):
        # knot counts differ between leads: pad by repeating the last knot
        width = max(f.levels.shape[-1] for _, f in parts)
        lv, va = np.empty((n, width)), np.empty((n, width))
        for m, f in parts:
            k = f.levels.shape[-1]
            L = np.broadcast_to(f.levels, f.values.shape)
            lv[m, :k], va[m, :k] = L, f.values
            lv[m, k:], va[m, k:] = L[:, -1:], f.values[:, -1:]
        return PiecewiseLinearQuantile(lv, va)
    raise DataError(f"cannot merge forecasts of type {type(first).__name__}")


def _make_head(name, train_obs, binning_kw=None):
    if name == "drn":
        return DrnHead()
    if name == "bqn":
        return BqnHead()
    if name == "hen":
        return HenHead(build_hen_binning(train_obs, **(binning_kw or {})).edges)
    raise ConfigError(f"unknown network head {name!r}")


def fit_nn_model(train, validation, head, n_members=N_MEMBERS_DEFAULT, seed=0, jobs=1, spec_overrides=None):
    """Train ``n_members`` networks of ``head`` for every lead time.

    Parameters
    ----------
    train, validation : CaseSet
        Training cases and the validation cases used for early stopping.
        The standardizer and the histogram bins use ``train`` only.
    head : {"drn", "bqn", "hen"}
    spec_overrides : dict, optional
        Replacements for :class:`NetworkSpec` fields (epochs, hidden, ...).

    Returns
    -------
    NnModel
        With training histories in ``logs[(lead, member)]``.
    """
    overrides = dict(spec_overrides or {})
    train = train.subset(train.has_obs)
    validation = validation.subset(validation.has_obs)
    if len(validation) == 0:
        raise DataError("network training needs a non-empty validation set")
    stations = tuple(int(s) for s in train.stations())
    leads = [int(x) for x in train.leads()]
    setup = {}
    tasks = []
    for ld in leads:
        tr = train.subset(train.lead == ld)
        va = validation.subset(validation.lead == ld)
        if len(va) == 0:
            raise DataError(f"no validation cases for lead {ld}")
        h = _make_head(head, tr.obs)
        enc = fit_encoder(tr, sorted_members=(head == "bqn"))
        spec = NetworkSpec(enc.n_inputs, h.n_outputs, hidden=h.hidden)
        if overrides:
            spec = replace(spec, **{k: (tuple(v) if k == "hidden" else v) for k, v in overrides.items()})
        setup[ld] = (h, enc)
        data_tr = (enc.encode(tr), tr.station, tr.obs)
        data_va = (enc.encode(va), va.station, va.obs)
        seeds = np.random.SeedSequence([seed, ld, ("drn", "bqn", "hen").index(head)]).spawn(n_members)
        for i, ss in enumerate(seeds):
            tasks.append((ld, i, h, data_tr, data_va, spec, ss))
    results = _run(tasks, lambda t: train_network(t[2], t[3], t[4], t[5], stations, t[6]), jobs)
    by_lead = {ld: [] for ld in leads}
    logs = {}
    for t, r in zip(tasks, results):
        by_lead[t[0]].append(r.network)
        logs[(t[0], t[1])] = r.history
    lead_models = {ld: NnLeadModel(setup[ld][0], setup[ld][1], tuple(by_lead[ld])) for ld in leads}
    return NnModel(head, lead_models, logs)
