"""Visibility scale, station and forecast records, and CSV ingestion.

Observations are held as category indices into the 84-value reporting
scale; forecasts keep raw meters because the classifier features are
computed on continuous values.
"""
import csv
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, InvalidInputError

N_CATEGORIES = 84
MAX_VISIBILITY = 70000
EARTH_RADIUS_KM = 6371.0
LEAD_TIMES = tuple(range(6, 121, 6))

FORECAST_HEADER = ["station_id", "init_time", "lead_time_h", "member_id", "value_m"]
AUX_HEADER = ["station_id", "init_time", "lead_time_h", "value_m"]
OBSERVATION_HEADER = ["station_id", "valid_time", "value_m"]
STATION_HEADER = ["station_id", "lat_deg", "lon_deg"]


class VisibilityScale:
    """Ordered reporting categories in meters.

    Indexing returns meters; ``values`` is the underlying read-only array.
    """

    def __init__(self, values):
        values = np.asarray(values, dtype=np.int64)
        if values.ndim != 1 or len(values) != N_CATEGORIES:
            raise InvalidInputError(f"scale must have {N_CATEGORIES} entries")
        if np.any(np.diff(values) <= 0):
            raise InvalidInputError("scale must be strictly increasing")
        values.setflags(write=False)
        self.values = values

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]

    def __iter__(self):
        return iter(self.values.tolist())

    def __eq__(self, other):
        return isinstance(other, VisibilityScale) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self):
        return f"VisibilityScale({self.values[0]}..{self.values[-1]}, n={len(self)})"

    @property
    def meters(self):
        return self.values.astype(float)


def build_scale():
    """Return the 84-category scale: 0-5000 by 100, 6-30 km by 1 km, 35-70 km by 5 km."""
    values = np.concatenate([
        np.arange(0, 5001, 100),
        np.arange(6000, 30001, 1000),
        np.arange(35000, 70001, 5000),
    ])
    return VisibilityScale(values)


def discretize(value, scale=None):
    """Map meters to the index of the largest category not exceeding ``value``.

    Accepts scalars or arrays. Values above the top category clamp to the last
    index.

    Raises
    ------
    InvalidInputError
        For negative or non-finite values.
    """
    if scale is None:
        scale = build_scale()
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidInputError(f"visibility must be finite and nonnegative, got {value!r}")
    idx = np.searchsorted(scale.values, arr, side="right") - 1
    if idx.ndim == 0:
        return int(idx)
    return idx.astype(np.int64)


@dataclass(frozen=True)
class Station:
    id: str
    latitude: float
    longitude: float

    def __post_init__(self):
        if not (abs(self.latitude) <= 90 and abs(self.longitude) <= 180):
            raise InvalidInputError(f"invalid coordinates for station {self.id!r}")


def haversine_km(a, b):
    """Great-circle distance between two stations (sphere of radius 6371 km)."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.latitude, a.longitude, b.latitude, b.longitude))
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class EnsembleForecast:
    control: float
    exchangeable: tuple

    def __post_init__(self):
        members = (self.control,) + tuple(self.exchangeable)
        if not all(math.isfinite(v) and v >= 0 for v in members):
            raise InvalidInputError("ensemble values must be finite and nonnegative")

    @property
    def size(self):
        return 1 + len(self.exchangeable)

    def members(self):
        """All members as an array, control first."""
        return np.array((self.control,) + tuple(self.exchangeable), dtype=float)


@dataclass(frozen=True)
class ForecastCase:
    station_id: str
    init_time: datetime
    lead_time: int
    ensemble: EnsembleForecast
    aux_forecast: Optional[float] = None
    observation: Optional[int] = None

    def __post_init__(self):
        if self.lead_time not in LEAD_TIMES:
            raise InvalidInputError(f"lead time {self.lead_time} h is not in 6..120 step 6")
        if self.observation is not None and not 0 <= self.observation < N_CATEGORIES:
            raise InvalidInputError(f"observation index {self.observation} out of range")

    @property
    def valid_time(self):
        return self.init_time + timedelta(hours=self.lead_time)

    @property
    def key(self):
        return (self.station_id, self.init_time, self.lead_time)


@dataclass
class Dataset:
    """Immutable container joining stations, forecast cases and observations.

    ``cases`` maps ``(station_id, init_time, lead_time)`` to a
    :class:`ForecastCase`; ``observations`` maps ``(station_id, valid_time)``
    to a category index.
    """

    scale: VisibilityScale
    stations: tuple
    cases: dict
    observations: dict
    load_report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.stations = tuple(self.stations)
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate station ids")
        known = set(ids)
        for key, case in self.cases.items():
            if case.station_id not in known:
                raise DataError(f"case references unknown station {case.station_id!r}")
            if key != case.key:
                raise DataError(f"case stored under mismatching key {key}")
        self._station_index = {sid: i for i, sid in enumerate(ids)}

    @property
    def station_ids(self):
        return tuple(s.id for s in self.stations)

    def station(self, station_id):
        return self.stations[self._station_index[station_id]]

    def lead_times(self):
        return sorted({k[2] for k in self.cases})

    def init_dates(self):
        return sorted({k[1].date() for k in self.cases})

    def case(self, station_id, init_date, lead_time):
        """Case for a station, an init date (00 UTC) and a lead time, or ``None``."""
        return self.cases.get((station_id, to_datetime(init_date), lead_time))

    def observation(self, station_id, valid_time):
        return self.observations.get((station_id, valid_time))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.scale == other.scale and self.stations == other.stations
                and self.cases == other.cases and self.observations == other.observations)


def to_datetime(day):
    """00 UTC timestamp for a date (datetimes pass through)."""
    if isinstance(day, datetime):
        return day
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc)


def parse_time(text):
    """Parse an ISO-8601 timestamp and normalise it to UTC."""
    t = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def format_time(t):
    return t.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def format_value(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def _rows(path, header):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError("empty file", path=path, line=1) from None
        if [h.strip() for h in first] != header:
            raise DataError(f"expected header {','.join(header)}", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", path=path, line=lineno)
            yield lineno, dict(zip(header, (c.strip() for c in row)))


def _convert(path, lineno, column, text, kind):
    try:
        if kind == "time":
            return parse_time(text)
        if kind == "int":
            return int(text)
        value = float(text)
        if not math.isfinite(value):
            raise ValueError(text)
        return value
    except ValueError:
        raise DataError(f"cannot parse {text!r}", path=path, line=lineno, column=column) from None


def ingest_csv(forecast_path, observation_path, station_path, aux_path=None,
               scale=None, ensemble_size=51):
    """Read the CSV files and join them into a :class:`Dataset`.

    Parameters
    ----------
    forecast_path, observation_path, station_path : path-like
        Files with the ``forecasts.csv``, ``observations.csv`` and
        ``stations.csv`` headers.
    aux_path : path-like, optional
        Auxiliary deterministic forecast (``aux.csv``).
    ensemble_size : int
        Members per case including the control run.

    Returns
    -------
    Dataset
        Cases whose valid time has no observation keep ``observation=None``.
        ``load_report`` counts observations clamped above the scale.

    Raises
    ------
    DataError
        On malformed rows (with file, line and column), duplicate keys,
        unknown stations, or incomplete ensembles.
    """
    scale = scale or build_scale()
    report = {"observations_clamped": 0, "forecast_values_above_scale": 0}

    stations = []
    for lineno, row in _rows(station_path, STATION_HEADER):
        lat = _convert(station_path, lineno, "lat_deg", row["lat_deg"], "float")
        lon = _convert(station_path, lineno, "lon_deg", row["lon_deg"], "float")
        if not row["station_id"]:
            raise DataError("empty station id", path=station_path, line=lineno, column="station_id")
        try:
            stations.append(Station(row["station_id"], lat, lon))
        except InvalidInputError as exc:
            raise DataError(str(exc), path=station_path, line=lineno) from None
    known = {s.id for s in stations}
    if len(known) != len(stations):
        raise DataError("duplicate station id", path=station_path)

    def check_station(path, lineno, sid):
        if sid not in known:
            raise DataError(f"unknown station {sid!r}", path=path, line=lineno, column="station_id")

    def check_lead(path, lineno, lead):
        if lead not in LEAD_TIMES:
            raise DataError(f"lead time {lead} not in 6..120 step 6", path=path, line=lineno,
                            column="lead_time_h")

    def check_value(path, lineno, value):
        if value < 0:
            raise DataError("negative visibility", path=path, line=lineno, column="value_m")

    members = {}
    for lineno, row in _rows(forecast_path, FORECAST_HEADER):
        sid = row["station_id"]
        check_station(forecast_path, lineno, sid)
        init = _convert(forecast_path, lineno, "init_time", row["init_time"], "time")
        lead = _convert(forecast_path, lineno, "lead_time_h", row["lead_time_h"], "int")
        check_lead(forecast_path, lineno, lead)
        member = _convert(forecast_path, lineno, "member_id", row["member_id"], "int")
        if not 0 <= member < ensemble_size:
            raise DataError(f"member_id {member} outside 0..{ensemble_size - 1}",
                            path=forecast_path, line=lineno, column="member_id")
        value = _convert(forecast_path, lineno, "value_m", row["value_m"], "float")
        check_value(forecast_path, lineno, value)
        if value > MAX_VISIBILITY:
            report["forecast_values_above_scale"] += 1
        slot = members.setdefault((sid, init, lead), [None] * ensemble_size)
        if slot[member] is not None:
            raise DataError(f"duplicate member {member} for {sid} {format_time(init)} +{lead}h",
                            path=forecast_path, line=lineno)
        slot[member] = value

    aux = {}
    if aux_path is not None:
        for lineno, row in _rows(aux_path, AUX_HEADER):
            sid = row["station_id"]
            check_station(aux_path, lineno, sid)
            init = _convert(aux_path, lineno, "init_time", row["init_time"], "time")
            lead = _convert(aux_path, lineno, "lead_time_h", row["lead_time_h"], "int")
            check_lead(aux_path, lineno, lead)
            value = _convert(aux_path, lineno, "value_m", row["value_m"], "float")
            check_value(aux_path, lineno, value)
            if (sid, init, lead) in aux:
                raise DataError("duplicate (station, init, lead) key", path=aux_path, line=lineno)
            aux[(sid, init, lead)] = value

    observations = {}
    for lineno, row in _rows(observation_path, OBSERVATION_HEADER):
        sid = row["station_id"]
        check_station(observation_path, lineno, sid)
        valid = _convert(observation_path, lineno, "valid_time", row["valid_time"], "time")
        value = _convert(observation_path, lineno, "value_m", row["value_m"], "float")
        check_value(observation_path, lineno, value)
        if value > MAX_VISIBILITY:
            report["observations_clamped"] += 1
        if (sid, valid) in observations:
            raise DataError("duplicate (station, valid_time) key", path=observation_path, line=lineno)
        observations[(sid, valid)] = discretize(value, scale)

    cases = {}
    for key in sorted(members):
        slot = members[key]
        missing = [i for i, v in enumerate(slot) if v is None]
        if missing:
            raise DataError(f"incomplete ensemble for {key[0]} {format_time(key[1])} +{key[2]}h: "
                            f"missing members {missing}", path=forecast_path)
        sid, init, lead = key
        cases[key] = ForecastCase(
            station_id=sid, init_time=init, lead_time=lead,
            ensemble=EnsembleForecast(slot[0], tuple(slot[1:])),
            aux_forecast=aux.get(key),
            observation=observations.get((sid, init + timedelta(hours=lead))),
        )
    return Dataset(scale=scale, stations=tuple(stations), cases=cases,
                   observations=observations, load_report=report)


def write_csv(dataset, directory):
    """Write ``dataset`` as forecasts/aux/observations/stations CSV files.

    Observations are written as the meter value of their category, which
    :func:`ingest_csv` maps back to the same index. Returns the four paths.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {name: directory / f"{name}.csv" for name in ("forecasts", "aux", "observations", "stations")}

    with open(paths["stations"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATION_HEADER)
        for s in dataset.stations:
            w.writerow([s.id, repr(float(s.latitude)), repr(float(s.longitude))])

    with open(paths["forecasts"], "w", newline="", encoding="utf-8") as fh, \
            open(paths["aux"], "w", newline="", encoding="utf-8") as fa:
        w = csv.writer(fh, lineterminator="\n")
        wa = csv.writer(fa, lineterminator="\n")
        w.writerow(FORECAST_HEADER)
        wa.writerow(AUX_HEADER)
        for key in sorted(dataset.cases):
            case = dataset.cases[key]
            t = format_time(case.init_time)
            for m, v in enumerate((case.ensemble.control,) + tuple(case.ensemble.exchangeable)):
                w.writerow([case.station_id, t, case.lead_time, m, format_value(v)])
            if case.aux_forecast is not None:
                wa.writerow([case.station_id, t, case.lead_time, format_value(case.aux_forecast)])

    with open(paths["observations"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVATION_HEADER)
        for (sid, valid) in sorted(dataset.observations):
            w.writerow([sid, format_time(valid), int(dataset.scale[dataset.observations[(sid, valid)]])])
    return paths


def load_directory(directory, ensemble_size=51):
    """Ingest a directory written by :func:`write_csv` (``aux.csv`` optional)."""
    directory = Path(directory)
    aux = directory / "aux.csv"
    return ingest_csv(directory / "forecasts.csv", directory / "observations.csv",
                      directory / "stations.csv", aux_path=aux if aux.exists() else None,
                      ensemble_size=ensemble_size)


def day_of_year(day):
    if isinstance(day, datetime):
        day = day.date()
    return day.timetuple().tm_yday


def as_date(day):
    if isinstance(day, datetime):
        return day.date()
    if isinstance(day, date):
        return day
    return date.fromisoformat(str(day))
