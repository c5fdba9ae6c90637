"""Training-set assembly: rolling windows and local, regional or clustered station pooling."""
import csv
from dataclasses import dataclass
from datetime import timedelta

import numpy as np

from .domain import as_date, to_datetime
from .errors import DataError, InvalidInputError
from .rng import substream

# upper edges (inclusive) of the three visibility bands used to characterise stations
BAND_EDGES = (5000, 30000, 70000)


@dataclass(frozen=True)
class Local:
    name = "L"


@dataclass(frozen=True)
class Regional:
    name = "R"


@dataclass(frozen=True)
class SemiLocal:
    k: int = 4
    name = "C"

    def __post_init__(self):
        if self.k < 1:
            raise InvalidInputError("cluster count must be at least 1")


def parse_scheme(text):
    """``"L"``, ``"R"``, ``"C"`` (four clusters) or ``"C3"`` style strings."""
    text = text.strip().upper()
    if text == "L":
        return Local()
    if text == "R":
        return Regional()
    if text.startswith("C"):
        return SemiLocal(int(text[1:]) if len(text) > 1 else 4)
    raise InvalidInputError(f"unknown training scheme {text!r}")


@dataclass(frozen=True)
class RollingWindow:
    length_days: int = 350

    def __post_init__(self):
        if self.length_days < 1:
            raise InvalidInputError("window length must be at least one day")

    def dates(self, forecast_date):
        """Init dates in ``[forecast_date - length, forecast_date)``."""
        fd = as_date(forecast_date)
        return [fd - timedelta(days=i) for i in range(self.length_days, 0, -1)]


@dataclass
class ClusterAssignment:
    labels: dict
    centroids: np.ndarray

    def members(self, label):
        return sorted(s for s, c in self.labels.items() if c == label)


def band_frequencies(values_m):
    """Relative frequencies of visibilities in [0, 5000], (5000, 30000], (30000, 70000]."""
    v = np.asarray(values_m, dtype=float)
    if v.size == 0:
        raise DataError("no observations in the training window")
    counts = [np.count_nonzero(v <= BAND_EDGES[0]),
              np.count_nonzero((v > BAND_EDGES[0]) & (v <= BAND_EDGES[1])),
              np.count_nonzero(v > BAND_EDGES[1])]
    return np.array(counts, dtype=float) / v.size


def station_frequency_features(dataset, station_id, window, forecast_date, lead_time=None):
    """Band frequencies of a station's observations over the training window.

    With ``lead_time`` the observations verifying that lead's cases are
    used; otherwise all observations at 00 UTC on the window dates.
    """
    values = []
    for day in window.dates(forecast_date):
        if lead_time is None:
            obs = dataset.observation(station_id, to_datetime(day))
        else:
            case = dataset.case(station_id, day, lead_time)
            obs = None if case is None else case.observation
        if obs is not None:
            values.append(dataset.scale[obs])
    if not values:
        raise DataError(f"no observations for station {station_id} in the window before {forecast_date}")
    return band_frequencies(values)


def _sq_dist(points, centroids):
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _plus_plus_init(X, k, rng):
    """k distinct rows, each drawn with probability proportional to squared distance."""
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        avail = np.ones(n, dtype=bool)
        avail[chosen] = False
        w = np.where(avail, d2, 0.0)
        if w.sum() > 0:
            nxt = int(rng.choice(n, p=w / w.sum()))
        else:
            # remaining points coincide with chosen ones; take any unused row
            nxt = int(rng.choice(np.flatnonzero(avail)))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _lloyd(X, centroids, max_iter):
    n, k = len(X), len(centroids)
    labels = np.full(n, -1)
    history = []
    for _ in range(max_iter):
        d2 = _sq_dist(X, centroids)
        new = d2.argmin(axis=1)
        for c in range(k):
            if not np.any(new == c):
                far = int(d2[np.arange(n), new].argmax())
                centroids[c] = X[far]
                new[far] = c
                d2 = _sq_dist(X, centroids)
        history.append(float(d2[np.arange(n), new].sum()))
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centroids[c] = X[labels == c].mean(axis=0)
        history[-1] = float(_sq_dist(X, centroids)[np.arange(n), labels].sum())
    return labels, centroids, history


def kmeans(vectors, k, seed=0, max_iter=100, n_init=10, return_history=False):
    """Lloyd's algorithm with seeded k-means++ initialisation and restarts.

    Parameters
    ----------
    vectors : array_like, shape (n, p)
    k : int
    seed : int or numpy.random.Generator
    n_init : int
        Independent initialisations; the run with the smallest
        within-cluster sum of squares is kept.

    Returns
    -------
    labels : ndarray of int, shape (n,)
    centroids : ndarray, shape (k, p)
    history : list of float
        Within-cluster sum of squares after each assignment step of the
        kept run (only with ``return_history=True``).

    Notes
    -----
    Initial centroids are ``k`` distinct rows sampled with the k-means++
    weighting. An empty cluster is re-seeded at the point farthest from its
    current centroid. Labels are finally renumbered so centroids are in
    lexicographic order, which makes results comparable across dates.
    """
    X = np.asarray(vectors, dtype=float)
    n = len(X)
    if not 1 <= k <= n:
        raise InvalidInputError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n_init < 1:
        raise InvalidInputError("n_init must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(X, _plus_plus_init(X, k, rng), max_iter)
        if best is None or run[2][-1] < best[2][-1] - 1e-12:
            best = run
    labels, centroids, history = best
    order = np.lexsort(centroids.T[::-1])
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    labels = relabel[labels]
    centroids = centroids[order]
    if return_history:
        return labels, centroids, history
    return labels, centroids


def cluster_stations(dataset, window, forecast_date, lead_time, k, seed=0):
    """Cluster stations on their band frequencies within the current window."""
    ids = dataset.station_ids
    feats = np.array([station_frequency_features(dataset, s, window, forecast_date, lead_time)
                      for s in ids])
    rng = substream(seed, "kmeans", as_date(forecast_date).isoformat(), lead_time)
    labels, centroids = kmeans(feats, k, rng)
    return ClusterAssignment({s: int(c) for s, c in zip(ids, labels)}, centroids)


def training_stations(dataset, scheme, station_id, window, forecast_date, lead_time, seed=0,
                      clusters=None):
    """Stations whose cases are pooled to train the model for ``station_id``."""
    if isinstance(scheme, Local):
        return [station_id]
    if isinstance(scheme, Regional):
        return list(dataset.station_ids)
    if isinstance(scheme, SemiLocal):
        if clusters is None:
            clusters = cluster_stations(dataset, window, forecast_date, lead_time, scheme.k, seed)
        return clusters.members(clusters.labels[station_id])
    raise InvalidInputError(f"unknown scheme {scheme!r}")


def select_training(dataset, scheme, window, station_id, forecast_date, lead_time, seed=0,
                    clusters=None):
    """Training pairs ``(case, label)`` for one station, date and lead time.

    Only cases with the given lead time, an init date inside the window
    strictly before ``forecast_date``, and an observation are returned.
    """
    stations = training_stations(dataset, scheme, station_id, window, forecast_date, lead_time,
                                 seed, clusters)
    out = []
    for day in window.dates(forecast_date):
        for sid in stations:
            case = dataset.case(sid, day, lead_time)
            if case is not None and case.observation is not None:
                out.append((case, case.observation))
    if not out:
        raise DataError(f"empty training set: scheme {type(scheme).__name__}, "
                        f"date {as_date(forecast_date)}, lead {lead_time} h")
    return out


def write_cluster_dump(path, rows):
    """Rows of ``(forecast_date, lead_time_h, station_id, cluster)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["forecast_date", "lead_time_h", "station_id", "cluster"])
        for fd, lead, sid, c in rows:
            w.writerow([as_date(fd).isoformat(), lead, sid, c])
