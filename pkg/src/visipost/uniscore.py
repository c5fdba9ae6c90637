"""Univariate verification of categorical visibility forecasts.

Scores are negatively oriented. CRPS is expressed in meters on the
category values; LogS in nats after the probability floor.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np

from .classifiers import P_MIN, pmf_floor
from .domain import build_scale
from .errors import InvalidInputError


@dataclass
class RankHistogram:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or len(self.counts) < 2:
            raise InvalidInputError("a rank histogram needs at least two bins")

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def ensemble_size(self):
        return len(self.counts) - 1

    @property
    def frequencies(self):
        return self.counts / self.total


@dataclass
class ScoreSeries:
    """Per-date mean scores in time order, the input of the block bootstrap."""

    dates: list
    values: np.ndarray
    score: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.dates) != len(self.values):
            raise InvalidInputError("dates and values differ in length")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("score series contains non-finite values")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise InvalidInputError("dates must be strictly increasing")


def crps_discrete(pmf, y, scale=None):
    """CRPS of categorical forecast(s) against observed category index(es).

    Evaluated as the sum over categories of squared differences between the
    forecast CDF and the observation step function, weighted by the gaps
    between consecutive category values. For a distribution supported on the
    scale this equals ``E|Y - y| - E|Y - Y'| / 2``.

    Parameters
    ----------
    pmf : array_like, shape (..., 84)
    y : int or array_like of int, broadcastable to ``pmf.shape[:-1]``
    scale : VisibilityScale, optional

    Returns
    -------
    float or ndarray
        Score in meters.
    """
    scale = scale or build_scale()
    p = np.asarray(pmf, dtype=float)
    y = np.asarray(y)
    cdf = np.cumsum(p, axis=-1)[..., :-1]
    widths = np.diff(scale.meters)
    step = (np.arange(len(widths)) >= y[..., None]).astype(float)
    out = np.sum((cdf - step) ** 2 * widths, axis=-1)
    return float(out) if out.ndim == 0 else out


def logs(pmf, y, p_min=P_MIN):
    """Logarithmic score ``-log p(y)`` of the floored and renormalised PMF."""
    p = pmf_floor(pmf, p_min)
    y = np.asarray(y)
    out = -np.log(np.take_along_axis(p, y[..., None], axis=-1)[..., 0])
    return float(out) if out.ndim == 0 else out


def skill_score(mean_score, mean_ref_score):
    """``1 - mean_score / mean_ref_score`` for negatively oriented scores."""
    if not mean_ref_score > 0:
        raise InvalidInputError("reference score must be positive")
    return 1.0 - mean_score / mean_ref_score


def verification_rank(ensemble, y, rng):
    """Rank (1..K+1) of ``y`` among the pooled members and ``y``, ties at random."""
    ens = np.asarray(ensemble, dtype=float).ravel()
    if ens.size < 1:
        raise InvalidInputError("ensemble must have at least one member")
    below = int(np.count_nonzero(ens < y))
    ties = int(np.count_nonzero(ens == y))
    return below + 1 + int(rng.integers(0, ties + 1))


def verification_ranks(ensembles, ys, rng):
    """Vectorised :func:`verification_rank` for ``(n, K)`` ensembles and ``(n,)`` observations."""
    ens = np.asarray(ensembles, dtype=float)
    ys = np.asarray(ys, dtype=float)[:, None]
    below = np.count_nonzero(ens < ys, axis=1)
    ties = np.count_nonzero(ens == ys, axis=1)
    return below + 1 + np.floor(rng.random(len(ens)) * (ties + 1)).astype(np.int64)


def rank_histogram(ranks, ensemble_size):
    ranks = np.asarray(ranks, dtype=np.int64)
    if np.any(ranks < 1) or np.any(ranks > ensemble_size + 1):
        raise InvalidInputError("ranks must lie in 1..K+1")
    return RankHistogram(np.bincount(ranks - 1, minlength=ensemble_size + 1))


def reliability_index(hist):
    """Sum of absolute deviations of rank frequencies from ``1/(K+1)``."""
    if hist.total <= 0:
        raise InvalidInputError("empty histogram")
    nbins = len(hist.counts)
    return float(np.sum(np.abs(hist.frequencies - 1.0 / nbins)))


def pairwise_mean(values):
    """Pairwise (cascade) summation mean, independent of worker scheduling."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan
    return float(np.add.reduce(v.ravel()) / v.size)


def write_score_rows(path, rows):
    """Rows of ``(model, lead_time_h, score, mean, n_cases)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "lead_time_h", "score", "mean", "n_cases"])
        for model, lead, score, mean, n in rows:
            w.writerow([model, lead, score, repr(float(mean)), n])


def write_histogram_rows(path, rows):
    """Rows of ``(model, kind, bin, count)``; bins are 1-based ranks."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "kind", "bin", "count"])
        for model, kind, hist in rows:
            for b, c in enumerate(hist.counts, start=1):
                w.writerow([model, kind, b, int(c)])
