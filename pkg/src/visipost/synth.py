"""Seeded synthetic visibility data with known calibration properties.

A latent Gaussian field with exponential spatial covariance and AR(1)
persistence plays the truth. For every init date and lead time the
ensemble sees a noisy version of the truth (less informative at longer
leads); given that information the truth and calibrated members are
exchangeable, so ``dispersion=1, bias=0`` yields a calibrated raw
ensemble. The auxiliary forecast is the truth plus independent noise.
Latent values map to meters through ``70000 * Phi(z) ** gamma``.
"""
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone

import numpy as np
from scipy.special import ndtr

from .domain import (LEAD_TIMES, MAX_VISIBILITY, Dataset, EnsembleForecast, ForecastCase, Station,
                     build_scale, discretize, haversine_km)
from .errors import InvalidInputError


@dataclass(frozen=True)
class SynthConfig:
    n_stations: int = 10
    n_days: int = 550
    lead_times: tuple = (6, 48, 120)
    correlation_length_km: float = 300.0
    persistence: float = 0.8
    ensemble_bias: float = 0.4
    dispersion: float = 0.6
    aux_skill: float = 0.8
    ensemble_size: int = 51
    gamma: float = 2.0
    start_date: str = "2020-01-01"
    lat_range: tuple = (47.0, 55.0)
    lon_range: tuple = (6.0, 20.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_stations < 2:
            raise InvalidInputError("need at least two stations")
        if self.n_days < 40:
            raise InvalidInputError("need at least 40 days")
        if not self.lead_times or any(l not in LEAD_TIMES for l in self.lead_times):
            raise InvalidInputError("lead times must be a nonempty subset of 6..120 step 6")
        if not 0 <= self.persistence < 1:
            raise InvalidInputError("persistence must lie in [0, 1)")
        if self.dispersion <= 0:
            raise InvalidInputError("dispersion factor must be positive")
        if not 0 <= self.aux_skill <= 1:
            raise InvalidInputError("aux skill must lie in [0, 1]")
        if self.correlation_length_km <= 0 or self.ensemble_size < 2:
            raise InvalidInputError("invalid correlation length or ensemble size")


@dataclass
class SynthResult:
    dataset: Dataset
    times: list
    latent_truth: np.ndarray
    extras: dict = field(default_factory=dict)


def unpredictable_fraction(lead_hours):
    """Standard deviation share of the truth the ensemble cannot see; grows with sqrt(lead)."""
    return min(0.95, 0.3 + 0.05 * np.sqrt(lead_hours))


def to_meters(z, gamma):
    return MAX_VISIBILITY * ndtr(z) ** gamma


def simulate(config=SynthConfig()):
    """Generate the dataset together with the latent truth field."""
    rng = np.random.default_rng(config.seed)
    scale = build_scale()
    D, K = config.n_stations, config.ensemble_size
    lats = rng.uniform(*config.lat_range, size=D)
    lons = rng.uniform(*config.lon_range, size=D)
    stations = tuple(Station(f"S{i + 1:02d}", round(float(a), 4), round(float(b), 4))
                     for i, (a, b) in enumerate(zip(lats, lons)))
    dist = np.array([[haversine_km(a, b) for b in stations] for a in stations])
    chol = np.linalg.cholesky(np.exp(-dist / config.correlation_length_km) + 1e-10 * np.eye(D))

    start = datetime.combine(date.fromisoformat(config.start_date), datetime.min.time(), timezone.utc)
    n_steps = config.n_days * 4 + max(config.lead_times) // 6 + 1
    phi = config.persistence ** 0.25  # per 6-hour step
    z = np.empty((n_steps, D))
    z[0] = chol @ rng.standard_normal(D)
    innov = np.sqrt(1 - phi ** 2)
    for t in range(1, n_steps):
        z[t] = phi * z[t - 1] + innov * (chol @ rng.standard_normal(D))
    times = [start + timedelta(hours=6 * t) for t in range(n_steps)]

    truth_idx = discretize(to_meters(z, config.gamma), scale)
    observations = {(s.id, times[t]): int(truth_idx[t, d])
                    for t in range(n_steps) for d, s in enumerate(stations)}

    cases = {}
    for day in range(config.n_days):
        init = start + timedelta(days=day)
        for lead in config.lead_times:
            v = day * 4 + lead // 6
            s = unpredictable_fraction(lead)
            a = np.sqrt(1 - s * s)
            seen = a * z[v] + s * (chol @ rng.standard_normal(D))
            eta = (chol @ rng.standard_normal((D, K))).T
            members = config.ensemble_bias + a * seen + config.dispersion * s * eta
            members_m = np.floor(to_meters(members, config.gamma))
            aux_latent = config.aux_skill * z[v] + np.sqrt(1 - config.aux_skill ** 2) * rng.standard_normal(D)
            aux_m = np.floor(to_meters(aux_latent, config.gamma))
            for d, st in enumerate(stations):
                col = members_m[:, d]
                case = ForecastCase(
                    station_id=st.id, init_time=init, lead_time=lead,
                    ensemble=EnsembleForecast(float(col[0]), tuple(float(x) for x in col[1:])),
                    aux_forecast=float(aux_m[d]),
                    observation=observations[(st.id, times[v])],
                )
                cases[case.key] = case
    ds = Dataset(scale=scale, stations=stations, cases=cases, observations=observations,
                 load_report={"source": "synthetic"})
    return SynthResult(ds, times, z, {"distance_km": dist})


def generate(config=SynthConfig()):
    """Synthetic :class:`~visipost.domain.Dataset`, fully determined by ``config.seed``."""
    return simulate(config).dataset
