"""Multivariate forecasts assembled from per-station calibrated samples.

Sample matrices are ``(K, D)`` arrays: rows are members, columns stations
in a fixed order. Each station's calibrated sample is a sorted column of
equidistant quantiles that gets reordered according to a dependence
template: the raw ensemble (ECC), historical observations (Schaake
shuffle), or nothing at all (naive, comonotone).
"""
import csv
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .classifiers import climatology_pmf
from .domain import as_date, build_scale, format_time
from .errors import DataError, InvalidInputError
from .rng import random_ranks


@dataclass
class DependenceTemplate:
    source: str
    values: np.ndarray
    dates: tuple = ()


def quantile_levels(K, rule="midpoint"):
    """``(j - 0.5)/K`` (``"midpoint"``) or ``j/(K + 1)`` (``"plotting"``) for j = 1..K."""
    j = np.arange(1, K + 1)
    if rule == "midpoint":
        return (j - 0.5) / K
    if rule == "plotting":
        return j / (K + 1)
    raise InvalidInputError(f"unknown quantile rule {rule!r}")


def equidistant_quantiles(pmf, K, scale=None, rule="midpoint"):
    """Generalised quantiles of a categorical forecast at equidistant levels.

    Returns, for each level, the smallest category value whose cumulative
    probability reaches the level. Accepts ``(..., 84)`` PMFs and returns
    ``(..., K)`` meters in nondecreasing order.
    """
    if K < 1:
        raise InvalidInputError("K must be at least 1")
    scale = scale or build_scale()
    p = np.asarray(pmf, dtype=float)
    cdf = np.cumsum(p, axis=-1)
    levels = quantile_levels(K, rule)
    flat = cdf.reshape(-1, cdf.shape[-1])
    idx = np.stack([np.searchsorted(row, levels, side="left") for row in flat])
    idx = np.minimum(idx, len(scale) - 1)
    return scale.meters[idx].reshape(p.shape[:-1] + (K,))


def reorder(sorted_samples, template, rng):
    """Arrange each sorted column by the rank order of the template column.

    Member ``k`` of station ``d`` receives the sample value whose rank equals
    the rank of ``template[k, d]`` within its column; template ties are
    broken at random.
    """
    samples = np.asarray(sorted_samples, dtype=float)
    template = np.asarray(template, dtype=float)
    if samples.shape != template.shape:
        raise InvalidInputError(f"sample shape {samples.shape} differs from template {template.shape}")
    if np.any(np.diff(samples, axis=0) < 0):
        raise InvalidInputError("samples must be sorted ascending within each column")
    ranks = random_ranks(template, rng, axis=0)
    return np.take_along_axis(samples, ranks, axis=0)


def ecc(sorted_samples, raw, rng):
    """Ensemble copula coupling with the raw ensemble ``(K, D)`` as template."""
    return reorder(sorted_samples, raw, rng)


def naive_multivariate(sorted_samples):
    """Sorted columns side by side: member ``k`` is the k-th quantile at every station."""
    samples = np.asarray(sorted_samples, dtype=float)
    if samples.ndim != 2:
        raise InvalidInputError("expected a (K, D) array")
    return samples.copy()


def _valid_time(day, hour):
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc) + timedelta(hours=hour)


def template_pool(dataset, station_ids, window_days, forecast_date, valid_hour):
    """Past dates whose observations at ``valid_hour`` exist at all stations."""
    fd = as_date(forecast_date)
    pool = []
    for i in range(window_days, 0, -1):
        day = fd - timedelta(days=i)
        t = _valid_time(day, valid_hour)
        if all(dataset.observation(s, t) is not None for s in station_ids):
            pool.append(day)
    return pool


def schaake_template(dataset, station_ids, window_days, forecast_date, valid_hour, K, rng):
    """Draw ``K`` distinct complete dates from the window and stack their observations."""
    pool = template_pool(dataset, station_ids, window_days, forecast_date, valid_hour)
    if len(pool) < K:
        raise DataError(f"Schaake shuffle needs {K} complete dates before {as_date(forecast_date)}, "
                        f"found {len(pool)} ({K - len(pool)} short)")
    chosen = sorted(rng.choice(len(pool), size=K, replace=False))
    dates = tuple(pool[i] for i in chosen)
    values = np.array([[dataset.scale[dataset.observation(s, _valid_time(d, valid_hour))]
                        for s in station_ids] for d in dates], dtype=float)
    return DependenceTemplate("HistoricalObservations", values, dates)


def schaake_shuffle(sorted_samples, dataset, station_ids, window_days, forecast_date, valid_hour,
                    K, rng, return_template=False):
    """Reorder calibrated samples by historical observation ranks.

    Template dates come from the ``window_days`` days before
    ``forecast_date``, matched on the forecast's valid hour of day.
    """
    samples = np.asarray(sorted_samples, dtype=float)
    if samples.shape != (K, len(station_ids)):
        raise InvalidInputError(f"expected samples of shape {(K, len(station_ids))}")
    template = schaake_template(dataset, station_ids, window_days, forecast_date, valid_hour, K, rng)
    out = reorder(samples, template.values, rng)
    return (out, template) if return_template else out


def climatology_window(dataset, station_id, forecast_date, valid_hour, window_days=30):
    """Observed category indices at ``valid_hour`` over the days before ``forecast_date``."""
    fd = as_date(forecast_date)
    out = []
    for i in range(window_days, 0, -1):
        obs = dataset.observation(station_id, _valid_time(fd - timedelta(days=i), valid_hour))
        if obs is not None:
            out.append(obs)
    if not out:
        raise DataError(f"no climatology observations for station {station_id} before {fd}")
    return out


def mv_climatology(dataset, station_ids, forecast_date, valid_hour, window_days=30, K=51,
                   rule="midpoint"):
    """Columns of equidistant quantiles of each station's recent climatology."""
    cols = [equidistant_quantiles(climatology_pmf(
        climatology_window(dataset, s, forecast_date, valid_hour, window_days)), K, dataset.scale, rule)
        for s in station_ids]
    return np.stack(cols, axis=1)


def write_mv_dump(path, blocks, station_ids):
    """Write ``(init_time, lead_time_h, sample)`` blocks as long-format CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["init_time", "lead_time_h", "member", "station_id", "value_m"])
        for init, lead, sample in blocks:
            t = format_time(init)
            for k in range(sample.shape[0]):
                for d, sid in enumerate(station_ids):
                    w.writerow([t, lead, k, sid, repr(float(sample[k, d]))])


def read_mv_dump(path):
    """Inverse of :func:`write_mv_dump`: dict ``(init_time, lead) -> (K, D)`` and station order."""
    from .domain import parse_time

    cells = {}
    stations = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            key = (parse_time(row["init_time"]), int(row["lead_time_h"]))
            sid = row["station_id"]
            if sid not in stations:
                stations.append(sid)
            cells.setdefault(key, {})[(int(row["member"]), sid)] = float(row["value_m"])
    out = {}
    for key, block in cells.items():
        K = 1 + max(m for m, _ in block)
        out[key] = np.array([[block[(k, s)] for s in stations] for k in range(K)])
    return out, stations
