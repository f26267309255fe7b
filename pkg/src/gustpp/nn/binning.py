"""Bin edges for the histogram head.

Starting from one bin per distinct observed value, the bin with the fewest
observations is repeatedly merged with whichever neighbour holds fewer
observations, as long as the merged bin respects the width caps (first bin
at most 2 m/s, last at most 7 m/s, others at most 5 m/s).
"""

import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import DataError

__all__ = ["HenBinning", "build_hen_binning"]

log = logging.getLogger(__name__)

N_BINS = 20
CAPS = (2.0, 7.0, 5.0)  # first, last, interior


@dataclass(frozen=True)
class HenBinning:
    edges: np.ndarray
    counts: np.ndarray
    caps: tuple = CAPS

    @property
    def n_bins(self):
        return len(self.edges) - 1

    @property
    def widths(self):
        return np.diff(self.edges)

    def respects_caps(self, caps=None):
        first, last, inner = self.caps if caps is None else caps
        w = self.widths
        return bool(w[0] <= first + 1e-12 and w[-1] <= last + 1e-12 and np.all(w[1:-1] <= inner + 1e-12))


def _initial_edges(u):
    mid = 0.5 * (u[1:] + u[:-1])
    lo = max(0.0, u[0] - 0.5 * (u[1] - u[0]))
    hi = u[-1] + 0.5 * (u[-1] - u[-2])
    return np.concatenate([[lo], mid, [hi]])


def build_hen_binning(obs, n_bins=N_BINS, caps=CAPS):
    """Merge single-value bins down to ``n_bins`` bins.

    Parameters
    ----------
    obs : array_like
        Training observations.
    n_bins : int
    caps : (first, last, interior) maximal bin widths in m/s.

    Returns
    -------
    HenBinning

    Raises
    ------
    DataError
        Fewer than ``n_bins`` distinct observed values.

    Notes
    -----
    Ties between equally small bins go to the lower bin; ties between the two
    neighbours go to the left one. When no admissible merge exists the
    interior cap is widened by 1 m/s (with a warning) until one does.
    """
    y = np.asarray(obs, dtype=float)
    y = y[np.isfinite(y)]
    u, counts = np.unique(y, return_counts=True)
    if len(u) < n_bins:
        raise DataError(f"need at least {n_bins} distinct observations, got {len(u)}")
    edges = list(_initial_edges(u))
    counts = list(counts.astype(np.int64))
    first, last, inner = caps

    def cap_of(i, nb):
        # cap of the bin that starts at position i after a merge leaving nb bins
        if i == 0:
            return first
        if i == nb - 1:
            return last
        return inner

    while len(counts) > n_bins:
        nb = len(counts)
        merged = False
        for j in sorted(range(nb), key=lambda i: (counts[i], i)):
            nbrs = [i for i in (j - 1, j + 1) if 0 <= i < nb]
            nbrs.sort(key=lambda i: (counts[i], i))
            for nb_i in nbrs:
                lo = min(j, nb_i)
                width = edges[lo + 2] - edges[lo]
                if width <= cap_of(lo, nb - 1) + 1e-12:
                    counts[lo] += counts[lo + 1]
                    del counts[lo + 1]
                    del edges[lo + 1]
                    merged = True
                    break
            if merged:
                break
        if not merged:
            inner += 1.0
            log.warning("no admissible bin merge; relaxing the interior width cap to %.1f m/s", inner)
            if inner > edges[-1] - edges[0] + 1.0:
                first = last = inner
    return HenBinning(np.array(edges), np.array(counts), (first, last, inner))
