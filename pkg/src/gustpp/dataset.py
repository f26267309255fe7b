"""Forecast cases, CSV ingestion, chronological splits, standardization and
synthetic gust scenarios.

A collection of forecast cases is stored column-wise in :class:`CaseSet`
(one row per station, date and lead time). Indexing a ``CaseSet`` with an
integer returns an immutable :class:`ForecastCase`; indexing with a mask,
slice or index array returns a smaller ``CaseSet``.

Standard deviations use the sample convention (divisor ``n - 1``) throughout
the package, both for ensemble spread and for predictor standardization.
"""

import csv
import datetime as dt
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .distributions import tlogis_quantile
from .exceptions import ConfigError, DataError

__all__ = [
    "N_MEMBERS",
    "N_SUBENSEMBLES",
    "PREDICTOR_NAMES",
    "ForecastCase",
    "CaseSet",
    "DataSplit",
    "Standardizer",
    "ScenarioConfig",
    "Scenario",
    "load_csv",
    "write_csv",
    "load_truth_csv",
    "write_truth_csv",
    "split_chronological",
    "fit_standardizer",
    "generate_scenario",
    "ensemble_sd",
    "seasonal_months",
    "floor_spread",
]

N_MEMBERS = 20
N_SUBENSEMBLES = 4
LEAD_RANGE = range(0, 22)

#: Predictors produced by the synthetic generator, in column order.
PREDICTOR_NAMES = (
    "vmax_mean",  # ensemble mean of the gust forecast
    "vmax_sd",  # ensemble standard deviation of the gust forecast
    "u10",  # zonal 10 m wind component
    "t2m",  # 2 m temperature
    "rad",  # net radiation proxy
    "yday",  # cosine of the day of the year
    "alt",  # station altitude
    "loc_bias",  # mean historical ensemble bias at the station
    "noise",  # pure noise, carries no information
)


def ensemble_sd(members):
    """Sample standard deviation of ensemble members along the last axis."""
    return np.std(members, axis=-1, ddof=1)


# ---------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class ForecastCase:
    """One forecast for a station, initialization date and lead time."""

    station_id: int
    date: dt.date
    lead_time_h: int
    ensemble: np.ndarray
    predictors: MappingProxyType
    observation: float | None = None

    def __post_init__(self):
        ens = np.array(self.ensemble, dtype=float)
        if ens.shape != (N_MEMBERS,):
            raise DataError(f"ensemble must have {N_MEMBERS} members, got shape {ens.shape}")
        if not np.all(np.isfinite(ens)) or np.any(ens <= 0):
            raise DataError("ensemble values must be finite and positive")
        if int(self.lead_time_h) not in LEAD_RANGE:
            raise DataError(f"lead time {self.lead_time_h} outside 0..21")
        if self.observation is not None and not self.observation > 0:
            raise DataError("observation must be positive")
        ens.flags.writeable = False
        object.__setattr__(self, "ensemble", ens)
        object.__setattr__(self, "predictors", MappingProxyType(dict(self.predictors)))

    @property
    def has_observation(self):
        return self.observation is not None


@dataclass(frozen=True, eq=False)
class CaseSet:
    """Column-wise collection of forecast cases.

    Attributes
    ----------
    station : ndarray of int, shape (n,)
    date : ndarray of datetime64[D], shape (n,)
    lead : ndarray of int, shape (n,)
    obs : ndarray of float, shape (n,)
        Observations; NaN marks a missing observation.
    ens : ndarray of float, shape (n, 20)
    X : ndarray of float, shape (n, p)
        Predictor values in the order of ``predictor_names``.
    predictor_names : tuple of str
    """

    station: np.ndarray
    date: np.ndarray
    lead: np.ndarray
    obs: np.ndarray
    ens: np.ndarray
    X: np.ndarray
    predictor_names: tuple = field(default=PREDICTOR_NAMES)

    def __post_init__(self):
        n = len(self.station)
        station = np.asarray(self.station, dtype=np.int64).reshape(n)
        date = np.asarray(self.date, dtype="datetime64[D]").reshape(n)
        lead = np.asarray(self.lead, dtype=np.int64).reshape(n)
        obs = np.asarray(self.obs, dtype=float).reshape(n)
        ens = np.asarray(self.ens, dtype=float).reshape(n, N_MEMBERS)
        names = tuple(self.predictor_names)
        X = np.asarray(self.X, dtype=float).reshape(n, len(names))
        if len(set(names)) != len(names):
            raise DataError("duplicate predictor names")
        if np.any((lead < 0) | (lead > 21)):
            raise DataError("lead times must lie in 0..21")
        if not np.all(np.isfinite(ens)) or np.any(ens <= 0):
            raise DataError("ensemble values must be finite and positive")
        if np.any(obs <= 0):
            raise DataError("observations must be positive")
        for name, arr in (("station", station), ("date", date), ("lead", lead), ("obs", obs), ("ens", ens), ("X", X)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "predictor_names", names)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_cases(cls, cases, predictor_names=None):
        cases = list(cases)
        if predictor_names is None:
            predictor_names = tuple(cases[0].predictors) if cases else PREDICTOR_NAMES
        return cls(
            station=np.array([c.station_id for c in cases], dtype=np.int64),
            date=np.array([np.datetime64(c.date, "D") for c in cases], dtype="datetime64[D]"),
            lead=np.array([c.lead_time_h for c in cases], dtype=np.int64),
            obs=np.array([np.nan if c.observation is None else c.observation for c in cases], dtype=float),
            ens=np.array([c.ensemble for c in cases], dtype=float).reshape(len(cases), N_MEMBERS),
            X=np.array([[c.predictors[k] for k in predictor_names] for c in cases], dtype=float).reshape(
                len(cases), len(predictor_names)
            ),
            predictor_names=tuple(predictor_names),
        )

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts]
        if not parts:
            raise DataError("nothing to concatenate")
        names = parts[0].predictor_names
        if any(p.predictor_names != names for p in parts):
            raise DataError("predictor columns differ between case sets")
        return cls(
            station=np.concatenate([p.station for p in parts]),
            date=np.concatenate([p.date for p in parts]),
            lead=np.concatenate([p.lead for p in parts]),
            obs=np.concatenate([p.obs for p in parts]),
            ens=np.concatenate([p.ens for p in parts]),
            X=np.concatenate([p.X for p in parts]),
            predictor_names=names,
        )

    # -- sequence protocol ---------------------------------------------------

    def __len__(self):
        return len(self.station)

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            i = int(key)
            obs = self.obs[i]
            return ForecastCase(
                station_id=int(self.station[i]),
                date=self.date[i].astype(dt.date),
                lead_time_h=int(self.lead[i]),
                ensemble=self.ens[i],
                predictors=dict(zip(self.predictor_names, self.X[i].tolist())),
                observation=None if np.isnan(obs) else float(obs),
            )
        return self.subset(key)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, key):
        """Rows selected by a boolean mask, slice or index array."""
        return CaseSet(
            station=self.station[key],
            date=self.date[key],
            lead=self.lead[key],
            obs=self.obs[key],
            ens=self.ens[key],
            X=self.X[key],
            predictor_names=self.predictor_names,
        )

    # -- derived columns -------------------------------------------------

    @property
    def year(self):
        return self.date.astype("datetime64[Y]").astype(int) + 1970

    @property
    def month(self):
        return self.date.astype("datetime64[M]").astype(int) % 12 + 1

    @property
    def day_of_year(self):
        return (self.date - self.date.astype("datetime64[Y]")).astype(int) + 1

    @property
    def has_obs(self):
        return ~np.isnan(self.obs)

    @property
    def ens_mean(self):
        return self.ens.mean(axis=1)

    @property
    def ens_sd(self):
        return ensemble_sd(self.ens)

    def predictor(self, name):
        try:
            return self.X[:, self.predictor_names.index(name)]
        except ValueError:
            raise DataError(f"unknown predictor {name!r}") from None

    def with_predictors(self, X, names=None):
        """Copy with a replaced predictor matrix (used for permutation tests)."""
        return replace(self, X=X, predictor_names=tuple(names or self.predictor_names))

    def stations(self):
        return np.unique(self.station)

    def leads(self):
        return np.unique(self.lead)


@dataclass(frozen=True)
class DataSplit:
    """Chronological train / validation / test partition."""

    train: CaseSet
    validation: CaseSet
    test: CaseSet

    @property
    def train_full(self):
        """Training and validation periods together, used for the final refit."""
        return CaseSet.concat([self.train, self.validation])


# ---------------------------------------------------------------------------
# CSV input / output


def _header(names):
    return ["station_id", "date", "lead_time", "obs"] + [f"ens_{i}" for i in range(1, N_MEMBERS + 1)] + list(names)


def _fmt(x):
    return "" if np.isnan(x) else repr(float(x))


def write_csv(cases, path):
    """Write cases in the canonical CSV layout.

    Floats are written in their shortest round-trip representation, so
    ``write_csv(load_csv(f))`` reproduces a canonical file byte for byte.
    """
    if not isinstance(cases, CaseSet):
        cases = CaseSet.from_cases(cases)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(cases.predictor_names))
        dates = cases.date.astype(str)
        for i in range(len(cases)):
            row = [str(int(cases.station[i])), dates[i], str(int(cases.lead[i])), _fmt(cases.obs[i])]
            row += [repr(float(v)) for v in cases.ens[i]]
            row += [repr(float(v)) for v in cases.X[i]]
            w.writerow(row)


def load_csv(path):
    """Read forecast cases from CSV.

    Rows with an empty ``obs`` field are kept with a missing observation.

    Raises
    ------
    DataError
        Header mismatch, malformed rows (with line number) or invalid
        values (with line number and column name).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file", line=1) from None
        fixed = _header([])
        if header[: len(fixed)] != fixed:
            raise DataError("header does not match the expected columns", line=1)
        names = tuple(header[len(fixed):])
        n_cols = len(header)
        station, date, lead, obs, ens, X = [], [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_cols:
                raise DataError(f"expected {n_cols} fields, got {len(row)}", line=lineno)
            col = "station_id"
            try:
                station.append(int(row[0]))
                col = "date"
                date.append(np.datetime64(dt.date.fromisoformat(row[1]), "D"))
                col = "lead_time"
                lt = int(row[2])
                if lt not in LEAD_RANGE:
                    raise DataError("lead time outside 0..21", line=lineno, column=col)
                lead.append(lt)
                col = "obs"
                o = float(row[3]) if row[3].strip() else np.nan
                if not np.isnan(o) and not (np.isfinite(o) and o > 0):
                    raise DataError("observation must be positive", line=lineno, column=col)
                obs.append(o)
                vals = []
                for j in range(N_MEMBERS):
                    col = header[4 + j]
                    v = float(row[4 + j])
                    if not (np.isfinite(v) and v > 0):
                        raise DataError("ensemble value must be finite and positive", line=lineno, column=col)
                    vals.append(v)
                ens.append(vals)
                preds = []
                for j, name in enumerate(names):
                    col = name
                    preds.append(float(row[4 + N_MEMBERS + j]))
                X.append(preds)
            except DataError:
                raise
            except ValueError as exc:
                raise DataError(f"cannot parse value: {exc}", line=lineno, column=col) from None
    n = len(station)
    return CaseSet(
        station=np.array(station, dtype=np.int64),
        date=np.array(date, dtype="datetime64[D]"),
        lead=np.array(lead, dtype=np.int64),
        obs=np.array(obs, dtype=float),
        ens=np.array(ens, dtype=float).reshape(n, N_MEMBERS),
        X=np.array(X, dtype=float).reshape(n, len(names)),
        predictor_names=names,
    )


def write_truth_csv(cases, mu, sigma, path):
    """Write the true predictive parameters next to the cases."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "date", "lead_time", "mu_true", "sigma_true"])
        dates = cases.date.astype(str)
        for i in range(len(cases)):
            w.writerow([int(cases.station[i]), dates[i], int(cases.lead[i]), repr(float(mu[i])), repr(float(sigma[i]))])


def load_truth_csv(path):
    """Read a truth sidecar; returns ``(station, date, lead, mu, sigma)`` arrays."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["station_id", "date", "lead_time", "mu_true", "sigma_true"]:
            raise DataError("unexpected truth header", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((int(row[0]), np.datetime64(row[1], "D"), int(row[2]), float(row[3]), float(row[4])))
            except (ValueError, IndexError) as exc:
                raise DataError(f"cannot parse truth row: {exc}", line=lineno) from None
    cols = list(zip(*rows)) if rows else [[]] * 5
    return (
        np.array(cols[0], dtype=np.int64),
        np.array(cols[1], dtype="datetime64[D]"),
        np.array(cols[2], dtype=np.int64),
        np.array(cols[3], dtype=float),
        np.array(cols[4], dtype=float),
    )


# ---------------------------------------------------------------------------
# splitting and standardization


def _year_set(spec):
    if spec is None:
        return set()
    if isinstance(spec, (int, np.integer)):
        return {int(spec)}
    return {int(y) for y in spec}


def split_chronological(cases, years):
    """Partition cases by calendar year into train, validation and test.

    Parameters
    ----------
    cases : CaseSet
    years : (train, validation, test)
        Each entry is a year or an iterable of years (may be empty).

    Raises
    ------
    ConfigError
        Overlapping year sets, years out of chronological order, or years
        absent from the data.
    """
    if len(years) != 3:
        raise ConfigError("need (train, validation, test) year specifications")
    sets = [_year_set(y) for y in years]
    for i in range(3):
        for j in range(i + 1, 3):
            if sets[i] & sets[j]:
                raise ConfigError(f"overlapping years {sorted(sets[i] & sets[j])}")
            if sets[i] and sets[j] and max(sets[i]) > min(sets[j]):
                raise ConfigError("year ranges are not in chronological order")
    present = set(np.unique(cases.year).tolist())
    missing = set().union(*sets) - present
    if missing:
        raise ConfigError(f"years not present in the data: {sorted(missing)}")
    yr = cases.year
    parts = [cases.subset(np.isin(yr, sorted(s))) for s in sets]
    return DataSplit(*parts)


@dataclass(frozen=True)
class Standardizer:
    """Column means and sample standard deviations of the training predictors.

    Predictors with zero variance are dropped and listed in ``dropped``.
    """

    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    dropped: tuple = ()

    def transform(self, X, names):
        """Standardize the kept columns of ``X`` (columns labelled by ``names``)."""
        idx = []
        for n in self.names:
            try:
                idx.append(list(names).index(n))
            except ValueError:
                raise DataError(f"missing predictor {n!r}") from None
        X = np.asarray(X, dtype=float)
        return (X[..., idx] - self.mean) / self.sd

    def apply(self, cases):
        return self.transform(cases.X, cases.predictor_names)

    def apply_case(self, case):
        """Standardized predictor map of a single :class:`ForecastCase`."""
        return {
            n: (case.predictors[n] - m) / s for n, m, s in zip(self.names, self.mean, self.sd)
        }

    def to_dict(self):
        return {"names": list(self.names), "mean": self.mean.tolist(), "sd": self.sd.tolist(), "dropped": list(self.dropped)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), np.asarray(d["mean"], float), np.asarray(d["sd"], float), tuple(d["dropped"]))


def fit_standardizer(X, names=None, warn=True):
    """Fit a :class:`Standardizer` on training predictors.

    Parameters
    ----------
    X : CaseSet or ndarray, shape (n, p)
    names : sequence of str, optional
        Column names; taken from the ``CaseSet`` if omitted.
    """
    if isinstance(X, CaseSet):
        names = X.predictor_names
        X = X.X
    X = np.asarray(X, dtype=float)
    if names is None:
        names = tuple(f"x{i}" for i in range(X.shape[1]))
    if X.shape[0] < 2:
        raise DataError("need at least two training cases to standardize")
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(mean), 1.0)
    keep = sd > 1e-12 * scale
    dropped = tuple(n for n, k in zip(names, keep) if not k)
    if dropped and warn:
        warnings.warn(f"dropping constant predictors: {', '.join(dropped)}", stacklevel=2)
    return Standardizer(tuple(n for n, k in zip(names, keep) if k), mean[keep], sd[keep], dropped)


# ---------------------------------------------------------------------------
# synthetic scenarios

_PRESETS = {
    # raw ensemble drawn from the true distribution
    "calibrated": dict(truth="linear", dispersion=1.0, sub_biases=(0.0, 0.0, 0.0, 0.0), station_bias_sd=0.0, obs_resolution=0.0),
    # biased, underdispersed ensemble around a linear truth
    "underdispersed": dict(truth="linear", dispersion=0.5, sub_biases=(1.5, 0.5, 2.0, 1.0)),
    # truth of EMOS form: ensemble statistics carry all available information
    "linear": dict(truth="linear", dispersion=0.6, sub_biases=(0.5, -0.5, 1.0, -1.0)),
    # planted radiation effect that the ensemble does not represent
    "nonlinear": dict(truth="nonlinear", dispersion=0.5, sub_biases=(1.0, -1.0, 2.0, -2.0)),
    # nearly static latent gust level: the radiation effect dominates the
    # variation of the observations (feature-importance checks)
    "planted": dict(
        truth="nonlinear", dispersion=0.5, sub_biases=(1.0, -1.0, 2.0, -2.0),
        planted_amplitude=8.0, latent_sd=0.05, seasonal_amplitude=0.05,
    ),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Specification of a synthetic gust data set with known truth.

    Parameters
    ----------
    n_stations, n_years : int
    lead_times : tuple of int
        Lead times in hours (runs start at 00 UTC).
    truth : {"linear", "nonlinear"}
        ``linear``: true location is the latent gust strength and the ensemble
        is sampled around it. ``nonlinear``: adds a saturating radiation
        effect to location and scale that the ensemble does not carry.
    dispersion : float in (0, 1]
        Ratio of ensemble scale to true scale.
    sub_biases : 4 floats
        Location offset (m/s) of each five-member sub-ensemble.
    station_effects : array (n_stations, 2), optional
        Per-station ensemble bias (m/s) and scale factor; drawn from the seed
        when omitted.
    station_bias_sd : float
        Spread of drawn station biases.
    planted_amplitude : float
        Amplitude (m/s) of the radiation effect in the nonlinear truth.
    latent_sd : float
        Innovation standard deviation of the daily log wind strength.
    seasonal_amplitude : float
        Seasonal amplitude of the log wind strength.
    obs_resolution : float
        Observations are rounded to this resolution (0 disables rounding).
    start_year : int
    rng_seed : int
    """

    n_stations: int = 20
    n_years: int = 3
    lead_times: tuple = (0, 6, 12, 15, 18)
    truth: str = "linear"
    dispersion: float = 1.0
    sub_biases: tuple = (0.0, 0.0, 0.0, 0.0)
    station_effects: tuple | None = None
    station_bias_sd: float = 0.5
    planted_amplitude: float = 5.0
    latent_sd: float = 0.22
    seasonal_amplitude: float = 0.2
    obs_resolution: float = 0.1
    start_year: int = 2010
    rng_seed: int = 0

    def __post_init__(self):
        if not self.dispersion > 0 or self.dispersion > 1:
            raise ConfigError("dispersion must lie in (0, 1]")
        if self.truth not in ("linear", "nonlinear"):
            raise ConfigError(f"unknown truth specification {self.truth!r}")
        if len(self.sub_biases) != N_SUBENSEMBLES:
            raise ConfigError("need exactly four sub-ensemble biases")
        if self.n_stations < 1 or self.n_years < 1:
            raise ConfigError("need at least one station and one year")
        if not self.lead_times or any(int(lt) not in LEAD_RANGE for lt in self.lead_times):
            raise ConfigError("lead times must lie in 0..21")
        if self.latent_sd < 0 or self.seasonal_amplitude < 0:
            raise ConfigError("latent_sd and seasonal_amplitude must be non-negative")
        if self.obs_resolution < 0:
            raise ConfigError("observation resolution must be non-negative")
        if self.station_effects is not None:
            eff = np.asarray(self.station_effects, dtype=float)
            if eff.shape != (self.n_stations, 2) or np.any(eff[:, 1] <= 0):
                raise ConfigError("station_effects must be (n_stations, 2) with positive scales")
        object.__setattr__(self, "lead_times", tuple(int(x) for x in self.lead_times))
        object.__setattr__(self, "sub_biases", tuple(float(x) for x in self.sub_biases))

    @classmethod
    def preset(cls, name, **overrides):
        """Named scenario (``calibrated``, ``underdispersed``, ``linear``, ``nonlinear``, ``planted``)."""
        try:
            base = dict(_PRESETS[name])
        except KeyError:
            raise ConfigError(f"unknown scenario preset {name!r}") from None
        base.update(overrides)
        return cls(**base)

    @property
    def years(self):
        return tuple(range(self.start_year, self.start_year + self.n_years))

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["lead_times"] = list(self.lead_times)
        d["sub_biases"] = list(self.sub_biases)
        if self.station_effects is not None:
            d["station_effects"] = np.asarray(self.station_effects).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        preset = d.pop("preset", None)
        if preset is not None:
            return cls.preset(preset, **d)
        for k in ("lead_times", "sub_biases"):
            if k in d:
                d[k] = tuple(d[k])
        if d.get("station_effects") is not None:
            d["station_effects"] = tuple(map(tuple, d["station_effects"]))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Generated cases with the true predictive parameters of each case."""

    cases: CaseSet
    mu_true: np.ndarray
    sigma_true: np.ndarray
    config: ScenarioConfig

    def truth_subset(self, mask):
        return self.mu_true[mask], self.sigma_true[mask]


def _tl_draw(rng, mu, sigma, size):
    u = rng.uniform(size=size)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return tlogis_quantile(u, mu, sigma)


def generate_scenario(cfg):
    """Generate a synthetic data set with known true predictive distributions.

    A latent daily wind strength per station follows a seasonal AR(1)
    process on the log scale. Together with a diurnal cycle it defines the
    latent gust strength ``G``. Observations are drawn from a truncated
    logistic with location ``mu_true`` and scale ``sigma_true``; each
    five-member sub-ensemble ``k`` is drawn around ``mu_true + bias_k`` plus a
    station bias with scale ``dispersion * sigma_true``. In the nonlinear
    truth a saturating radiation effect is added to ``mu_true`` but not to the
    ensemble location, so it can only be learned from the ``rad`` predictor.

    Returns
    -------
    Scenario
    """
    if not isinstance(cfg, ScenarioConfig):
        raise ConfigError("expected a ScenarioConfig")
    rng = np.random.default_rng(cfg.rng_seed)
    S = cfg.n_stations
    first = np.datetime64(f"{cfg.start_year}-01-01", "D")
    last = np.datetime64(f"{cfg.start_year + cfg.n_years}-01-01", "D")
    days = np.arange(first, last, dtype="datetime64[D]")
    D = len(days)
    leads = np.array(cfg.lead_times)
    L = len(leads)
    doy = (days - days.astype("datetime64[Y]")).astype(int) + 1
    season = np.cos(2 * np.pi * (doy - 15) / 365.25)  # +1 mid-January

    # station properties
    alt = np.round(rng.uniform(0.0, 1200.0, S), 1)
    if cfg.station_effects is not None:
        eff = np.asarray(cfg.station_effects, dtype=float)
        st_bias, st_scale = eff[:, 0], eff[:, 1]
    else:
        st_bias = rng.normal(0.0, cfg.station_bias_sd, S) if cfg.station_bias_sd > 0 else np.zeros(S)
        st_scale = np.exp(rng.normal(0.0, 0.15, S)) * (1.0 + alt / 3000.0)
    st_level = np.log(5.0) + 0.25 * alt / 1000.0 + rng.normal(0.0, 0.1, S)

    # daily weather per station: AR(1) log wind, cloud cover, wind direction
    phi, innov = 0.7, cfg.latent_sd
    eps = rng.normal(0.0, innov, (D, S))
    a = np.empty((D, S))
    a[0] = eps[0] / np.sqrt(1 - phi**2)
    for t in range(1, D):
        a[t] = phi * a[t - 1] + eps[t]
    log_w = st_level[None, :] + cfg.seasonal_amplitude * season[:, None] + a
    cloud = rng.beta(2.0, 2.0, (D, S))
    direction = rng.uniform(0.0, 2 * np.pi, (D, S))
    temp_anom = rng.normal(0.0, 2.0, (D, S))

    # broadcast to (day, station, lead)
    hour = (leads % 24).astype(float)
    diurnal = 1.0 + 0.2 * np.cos(2 * np.pi * (hour - 14.0) / 24.0)
    W = np.exp(log_w)[:, :, None]
    G = 1.4 * W * diurnal[None, None, :]
    elev = np.clip(np.sin(np.pi * (hour - 6.0) / 12.0), 0.0, None)[None, None, :] * (
        1.0 - 0.3 * season[:, None, None]
    )
    rad = 600.0 * elev * (1.0 - 0.75 * cloud[:, :, None]) - 80.0 * (1.0 - cloud[:, :, None])
    t2m = (
        10.0
        - 8.0 * season[:, None, None]
        + 4.0 * np.cos(2 * np.pi * (hour - 15.0) / 24.0)[None, None, :]
        - alt[None, :, None] / 150.0
        + temp_anom[:, :, None]
    )
    u10 = W * diurnal[None, None, :] * np.cos(direction)[:, :, None] + rng.normal(0.0, 0.5, (D, S, L))
    noise = rng.normal(0.0, 1.0, (D, S, L))

    lead_growth = 1.0 + leads / 48.0
    sigma = st_scale[None, :, None] * (0.35 + 0.1 * G) * lead_growth[None, None, :]
    mu = G.copy()
    ens_loc = mu.copy()
    if cfg.truth == "nonlinear":
        rad_z = (rad - 100.0) / 200.0
        h = cfg.planted_amplitude * np.tanh(2.0 * rad_z)
        mu = mu + h
        sigma = sigma * (1.0 + 0.25 * np.tanh(rad_z))
        # the ensemble does not see the radiation effect
        ens_loc = G

    shape = (D, S, L)
    y = _tl_draw(rng, mu, sigma, shape)
    if cfg.obs_resolution > 0:
        y = np.maximum(np.round(y / cfg.obs_resolution) * cfg.obs_resolution, cfg.obs_resolution)
    sub = np.repeat(np.array(cfg.sub_biases), N_MEMBERS // N_SUBENSEMBLES)
    loc = ens_loc[..., None] + st_bias[None, :, None, None] + sub[None, None, None, :]
    ens = _tl_draw(rng, loc, cfg.dispersion * sigma[..., None], shape + (N_MEMBERS,))
    ens = np.maximum(ens, 1e-3)

    ens_mean = ens.mean(axis=-1)
    ens_sdv = ensemble_sd(ens)
    yday = np.broadcast_to(np.cos(2 * np.pi * doy / 365.25)[:, None, None], shape)
    X = np.stack(
        [
            ens_mean,
            ens_sdv,
            u10,
            t2m,
            rad,
            yday,
            np.broadcast_to(alt[None, :, None], shape),
            np.broadcast_to(st_bias[None, :, None], shape),
            noise,
        ],
        axis=-1,
    )

    n = D * S * L
    station = np.broadcast_to(np.arange(1, S + 1)[None, :, None], shape).reshape(n)
    date = np.broadcast_to(days[:, None, None], shape).reshape(n)
    lead = np.broadcast_to(leads[None, None, :], shape).reshape(n)
    cases = CaseSet(
        station=station,
        date=date,
        lead=lead,
        obs=y.reshape(n),
        ens=ens.reshape(n, N_MEMBERS),
        X=X.reshape(n, len(PREDICTOR_NAMES)),
        predictor_names=PREDICTOR_NAMES,
    )
    return Scenario(cases, mu.reshape(n).copy(), sigma.reshape(n).copy(), cfg)


def seasonal_months(month):
    """Cyclic three-month window centred on ``month``."""
    if not 1 <= int(month) <= 12:
        raise ConfigError("month must lie in 1..12")
    m = int(month)
    return {(m - 2) % 12 + 1, m, m % 12 + 1}


def floor_spread(s, floor=1e-4):
    """Floor ensemble spread values before taking logarithms or dividing."""
    return np.maximum(np.asarray(s, dtype=float), floor)
