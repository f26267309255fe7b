"""Reference forecasts without postprocessing: the raw ensemble and an
extended probabilistic climatology (EPC).

The EPC forecast for a station, hour of day and month is the set of all past
observations at that station and hour from the month itself and the two
neighbouring months.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import CaseSet, seasonal_months
from .distributions import DiscreteForecast, EnsembleForecast
from .exceptions import DataError, ModelKeyError

__all__ = ["EpcModel", "fit_epc", "predict_epc", "raw_ensemble_forecast", "RawEnsemble"]


def _hour(lead):
    # all runs start at 00 UTC
    return np.asarray(lead) % 24


@dataclass(frozen=True)
class EpcModel:
    """Observation pools by ``(station, hour, month of observation)``.

    Pools for prediction are assembled on the fly from the three months of
    the seasonal window, so pool membership does not depend on the order in
    which the history was supplied.
    """

    pools: dict

    def pool(self, station, hour, month):
        vals = [self.pools.get((int(station), int(hour), m), ()) for m in sorted(seasonal_months(month))]
        out = np.sort(np.concatenate([np.asarray(v, dtype=float) for v in vals]))
        return out

    def empty_keys(self, stations, hours):
        """Keys whose three-month pool is empty."""
        return [(s, h, m) for s in stations for h in hours for m in range(1, 13) if self.pool(s, h, m).size == 0]

    def predict(self, cases):
        """Batch forecast as equally weighted point masses (pools differ in size).

        Shorter pools are padded with zero-probability points.
        """
        if len(cases) == 0:
            raise DataError("no cases to predict")
        keys = list(zip(cases.station.tolist(), _hour(cases.lead).tolist(), cases.month.tolist()))
        cache = {}
        for k in set(keys):
            p = self.pool(*k)
            if p.size == 0:
                raise ModelKeyError(f"no climatology for station {k[0]}, hour {k[1]}, month {k[2]}")
            cache[k] = p
        m = max(len(cache[k]) for k in cache)
        values = np.empty((len(keys), m))
        probs = np.zeros((len(keys), m))
        for i, k in enumerate(keys):
            p = cache[k]
            values[i, : len(p)] = p
            values[i, len(p):] = p[-1]
            probs[i, : len(p)] = 1.0 / len(p)
        return DiscreteForecast(values, probs)

    def to_dict(self):
        return {
            "method": "epc",
            "pools": [
                {"station": k[0], "hour": k[1], "month": k[2], "obs": list(map(float, v))}
                for k, v in sorted(self.pools.items())
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls({(p["station"], p["hour"], p["month"]): tuple(p["obs"]) for p in d["pools"]})


def fit_epc(history):
    """Collect past observations by station, hour of day and month.

    Parameters
    ----------
    history : CaseSet
        Past cases; only rows with an observation are used.

    Raises
    ------
    DataError
        No observations in the history.
    """
    ok = history.has_obs
    if not np.any(ok):
        raise DataError("empty observation history")
    st = history.station[ok]
    hr = _hour(history.lead[ok])
    mo = history.month[ok]
    y = history.obs[ok]
    order = np.lexsort((y, mo, hr, st))
    pools = {}
    keys = np.stack([st[order], hr[order], mo[order]], axis=1)
    y = y[order]
    bounds = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
    for chunk_keys, chunk in zip(np.split(keys, bounds), np.split(y, bounds)):
        k = tuple(int(v) for v in chunk_keys[0])
        pools[k] = tuple(chunk.tolist())
    return EpcModel(pools)


def predict_epc(model, station, date, lead_time):
    """Climatological ensemble for one station, date and lead time.

    Raises
    ------
    ModelKeyError
        The pool for the key is empty.
    """
    month = int(np.datetime64(date, "M").astype(int) % 12 + 1)
    hour = int(lead_time) % 24
    p = model.pool(station, hour, month)
    if p.size == 0:
        raise ModelKeyError(f"no climatology for station {station}, hour {hour}, month {month}")
    return EnsembleForecast(p)


def raw_ensemble_forecast(cases):
    """The unprocessed ensemble of one case or a whole ``CaseSet``."""
    if isinstance(cases, CaseSet):
        return EnsembleForecast(cases.ens)
    return EnsembleForecast(cases.ensemble)


class RawEnsemble:
    """Trivial model wrapper so the raw ensemble fits the common method interface."""

    def predict(self, cases):
        return raw_ensemble_forecast(cases)

    def to_dict(self):
        return {"method": "raw"}

    @classmethod
    def from_dict(cls, d):
        return cls()
