"""Multivariate verification: energy and variogram scores, pre-rank histograms, bootstrap."""
import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .domain import haversine_km
from .errors import InvalidInputError
from .rng import random_ranks
from .uniscore import RankHistogram


class PreRankKind(str, Enum):
    AVERAGE = "average"
    BAND_DEPTH = "band_depth"
    ENERGY_SCORE = "energy_score"
    DEPENDENCE = "dependence"


def _check(sample, obs):
    # contiguous copies keep reduction order (and so the last bit) independent of memory layout
    sample = np.ascontiguousarray(sample, dtype=float)
    obs = np.ascontiguousarray(obs, dtype=float)
    if sample.ndim != 2 or obs.shape != (sample.shape[1],):
        raise InvalidInputError(f"sample {sample.shape} and observation {obs.shape} disagree")
    return sample, obs


def energy_score(sample, obs):
    """Ensemble energy score of a ``(K, D)`` sample at a ``(D,)`` observation."""
    sample, obs = _check(sample, obs)
    K = sample.shape[0]
    first = np.linalg.norm(sample - obs, axis=1).sum() / K
    diffs = sample[:, None, :] - sample[None, :, :]
    second = np.sqrt((diffs ** 2).sum(axis=2)).sum() / (2.0 * K * K)
    return float(first - second)


def variogram_score(sample, obs, weights=None, p=0.5):
    """Variogram score of order ``p``; ``weights`` default to all ones.

    Both orderings of each station pair enter the double sum.
    """
    sample, obs = _check(sample, obs)
    if p <= 0:
        raise InvalidInputError("order p must be positive")
    D = sample.shape[1]
    w = np.ones((D, D)) if weights is None else np.asarray(weights, dtype=float)
    vy = np.abs(obs[:, None] - obs[None, :]) ** p
    # averaging the member-wise differences keeps a perfect ensemble at exactly zero
    gap = (np.abs(sample[:, :, None] - sample[:, None, :]) ** p - vy).mean(axis=0)
    return float(np.sum(w * gap ** 2))


def dependence_weights(stations):
    """``exp(-distance / 100 km)`` for every station pair."""
    D = len(stations)
    w = np.ones((D, D))
    for i in range(D):
        for j in range(i + 1, D):
            w[i, j] = w[j, i] = math.exp(-haversine_km(stations[i], stations[j]) / 100.0)
    return w


def _loo_energy(pool):
    """Energy score of the other pool members evaluated at each pool vector."""
    n = pool.shape[0]
    K = n - 1
    dist = np.sqrt(((pool[:, None, :] - pool[None, :, :]) ** 2).sum(axis=2))
    row = dist.sum(axis=1)
    total = dist.sum()
    # sum over pairs among the others = total - 2 * row_i (diagonal is zero)
    return row / K - (total - 2.0 * row) / (2.0 * K * K)


def _loo_variogram(pool, weights, p=0.5):
    n = pool.shape[0]
    K = n - 1
    v = np.abs(pool[:, :, None] - pool[:, None, :]) ** p
    others = (v.sum(axis=0)[None, :, :] - v) / K
    return np.sum(weights[None, :, :] * (v - others) ** 2, axis=(1, 2))


def pre_rank_values(kind, pool, rng, weights=None):
    """Pre-rank function values for every vector of a ``(K+1, D)`` pool.

    Larger values mean more outlying, for every kind.
    """
    kind = PreRankKind(kind)
    if kind is PreRankKind.AVERAGE:
        return (random_ranks(pool, rng, axis=0) + 1).mean(axis=1)
    if kind is PreRankKind.BAND_DEPTH:
        n = pool.shape[0]
        r = random_ranks(pool, rng, axis=0) + 1
        depth = ((n - r) * (r - 1)).sum(axis=1)
        return -depth.astype(float)
    if kind is PreRankKind.ENERGY_SCORE:
        return _loo_energy(pool)
    if weights is None:
        raise InvalidInputError("dependence pre-ranks need a weight matrix")
    return _loo_variogram(pool, np.asarray(weights, dtype=float))


def pre_rank(kind, sample, obs, rng, weights=None):
    """Multivariate rank (1..K+1) of the observation within ``obs`` plus the members.

    Average: mean of coordinatewise ranks. BandDepth: ranked by descending
    band depth, so central observations fall in low bins. EnergyScore and
    Dependence: leave-one-out energy or variogram score of the remaining
    pool at each vector. Ties are broken at random throughout.
    """
    sample, obs = _check(sample, obs)
    kind = PreRankKind(kind)
    if kind is PreRankKind.DEPENDENCE and weights is None:
        raise InvalidInputError("dependence pre-ranks need a weight matrix")
    pool = np.vstack([obs[None, :], sample])
    values = pre_rank_values(kind, pool, rng, weights)
    v0 = values[0]
    below = int(np.count_nonzero(values[1:] < v0))
    ties = int(np.count_nonzero(values[1:] == v0))
    return below + 1 + int(rng.integers(0, ties + 1))


def histogram(kind, cases, rng, weights=None):
    """Histogram of pre-ranks over ``(sample, obs)`` cases."""
    cases = list(cases)
    if not cases:
        raise InvalidInputError("no cases")
    K = {np.shape(s)[0] for s, _ in cases}
    if len(K) != 1:
        raise InvalidInputError(f"cases mix ensemble sizes {sorted(K)}")
    K = K.pop()
    counts = np.zeros(K + 1, dtype=np.int64)
    for sample, obs in cases:
        counts[pre_rank(kind, sample, obs, rng, weights) - 1] += 1
    return RankHistogram(counts)


# --------------------------------------------------------------------------
# stationary bootstrap
# --------------------------------------------------------------------------

@dataclass
class BootstrapResult:
    lo: float
    hi: float
    estimate: float
    replicates: np.ndarray
    mean_block_length: float


def default_block_length(n):
    return float(math.ceil(n ** (1.0 / 3.0)))


def stationary_bootstrap_indices(n, B, mean_block_length, rng):
    """``(B, n)`` resampling indices with geometric block lengths and wrap-around."""
    if n < 2:
        raise InvalidInputError("series must contain at least two values")
    if mean_block_length < 1:
        raise InvalidInputError("mean block length must be at least 1")
    starts = rng.integers(0, n, size=(B, n))
    new_block = rng.random((B, n)) < 1.0 / mean_block_length
    new_block[:, 0] = True
    pos = np.arange(n)
    block_start = np.maximum.accumulate(np.where(new_block, pos, 0), axis=1)
    origin = np.take_along_axis(starts, block_start, axis=1)
    return (origin + pos - block_start) % n


def stationary_bootstrap_ci(series, B=2000, mean_block_length=None, seed=0, level=0.95,
                            reference=None):
    """Percentile interval from the stationary bootstrap.

    Parameters
    ----------
    series : array_like or ScoreSeries
        Time-ordered per-date values.
    B : int
        Number of replicates.
    mean_block_length : float, optional
        Expected block length; defaults to ``ceil(n ** (1/3))``.
    seed : int or numpy.random.Generator
    level : float
        Coverage of the interval.
    reference : array_like or ScoreSeries, optional
        Paired reference series. When given, the statistic is the skill
        score ``1 - mean(series)/mean(reference)`` computed on the same
        resampled indices; otherwise the mean.

    Returns
    -------
    BootstrapResult
    """
    x = np.asarray(getattr(series, "values", series), dtype=float)
    n = len(x)
    L = default_block_length(n) if mean_block_length is None else float(mean_block_length)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = stationary_bootstrap_indices(n, B, L, rng)
    if reference is None:
        reps = x[idx].mean(axis=1)
        estimate = float(x.mean())
    else:
        r = np.asarray(getattr(reference, "values", reference), dtype=float)
        if r.shape != x.shape:
            raise InvalidInputError("series and reference differ in length")
        reps = 1.0 - x[idx].mean(axis=1) / r[idx].mean(axis=1)
        estimate = float(1.0 - x.mean() / r.mean())
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(reps, [alpha, 1.0 - alpha])
    if np.all(x == x[0]) and reference is None:
        lo = hi = float(x[0])
    return BootstrapResult(float(lo), float(hi), estimate, reps, L)


REPORT_HEADER = ["model", "lead_time_h", "score", "mean", "ci_lo", "ci_hi",
                 "reference", "skill_vs", "skill_lo", "skill_hi"]


def write_report(path, rows):
    """Rows are dicts keyed by :data:`REPORT_HEADER`; missing skill fields stay blank."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for row in rows:
            w.writerow(["" if row.get(k) is None else
                        (repr(float(row[k])) if isinstance(row[k], (float, np.floating)) else row[k])
                        for k in REPORT_HEADER])
