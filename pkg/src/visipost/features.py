"""Classifier inputs built from an ensemble forecast and the optional auxiliary forecast."""
import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .domain import day_of_year
from .errors import InvalidInputError, MissingCovariateError

BASE_NAMES = ("ctrl_norm", "ens_mean_norm", "ens_var", "p1", "p2", "p3", "beta1", "beta2")
AUX_NAMES = ("ctrl_norm", "ens_mean_norm", "aux_norm", "ens_var", "p1", "p2", "p3", "beta1", "beta2")
# coefficients forced nonnegative in POLR
NONNEGATIVE = frozenset({"ctrl_norm", "ens_mean_norm", "aux_norm"})


@dataclass(frozen=True)
class FeatureConfig:
    norm_denominator: float = 70000.0
    t1: float = 1000.0
    t2: float = 2000.0
    t3: float = 30000.0
    include_aux: bool = False

    def __post_init__(self):
        if not 0 < self.t1 < self.t2 < self.t3 < self.norm_denominator:
            raise InvalidInputError("thresholds must satisfy 0 < t1 < t2 < t3 < norm_denominator")

    @property
    def names(self):
        return AUX_NAMES if self.include_aux else BASE_NAMES

    def constraint_mask(self):
        return np.array([n in NONNEGATIVE for n in self.names])


@dataclass(frozen=True)
class FeatureVector:
    ctrl_norm: float
    ens_mean_norm: float
    ens_var: float
    p1: float
    p2: float
    p3: float
    beta1: float
    beta2: float
    aux_norm: Optional[float] = None

    def as_array(self):
        names = AUX_NAMES if self.aux_norm is not None else BASE_NAMES
        return np.array([getattr(self, n) for n in names])


def annual_basis(day):
    """Seasonal harmonics ``(sin(2*pi*d/365), cos(2*pi*d/365))`` for day of year ``d``."""
    if isinstance(day, bool) or int(day) != day or not 1 <= day <= 366:
        raise InvalidInputError(f"day of year must be an integer in 1..366, got {day!r}")
    angle = 2.0 * math.pi * int(day) / 365.0
    return math.sin(angle), math.cos(angle)


def _row(members, control, aux, doy, config):
    """Feature row from raw member values (control first)."""
    denom = config.norm_denominator
    norm = np.clip(members / denom, 0.0, 1.0)
    ctrl = min(max(control / denom, 0.0), 1.0)
    ens_mean = float(np.mean(norm[1:]))
    ens_var = float(np.var(norm, ddof=1))
    k = len(members)
    p1 = np.count_nonzero(members <= config.t1) / k
    p2 = np.count_nonzero((members > config.t1) & (members <= config.t2)) / k
    p3 = np.count_nonzero(members > config.t3) / k
    b1, b2 = annual_basis(doy)
    row = [ctrl, ens_mean, ens_var, p1, p2, p3, b1, b2]
    if config.include_aux:
        row.insert(2, min(max(aux / denom, 0.0), 1.0))
    return row


def build_features(case, config=FeatureConfig()):
    """Feature vector for one :class:`~visipost.domain.ForecastCase`.

    Proportions count all members including the control run; the variance is
    the unbiased sample variance of the normalized members; the seasonal
    terms use the day of year of the initialization date.
    """
    if config.include_aux and case.aux_forecast is None:
        raise MissingCovariateError(
            f"auxiliary forecast missing for {case.station_id} {case.init_time} +{case.lead_time}h")
    members = case.ensemble.members()
    row = _row(members, case.ensemble.control, case.aux_forecast, day_of_year(case.init_time), config)
    values = dict(zip(config.names, row))
    return FeatureVector(**{f.name: values.get(f.name) for f in fields(FeatureVector)})


def feature_matrix(cases, config=FeatureConfig()):
    """Stack feature rows for many cases into an ``(n, M)`` array."""
    rows = []
    for case in cases:
        if config.include_aux and case.aux_forecast is None:
            raise MissingCovariateError(
                f"auxiliary forecast missing for {case.station_id} {case.init_time} +{case.lead_time}h")
        rows.append(_row(case.ensemble.members(), case.ensemble.control, case.aux_forecast,
                         day_of_year(case.init_time), config))
    return np.array(rows, dtype=float).reshape(len(rows), len(config.names))
