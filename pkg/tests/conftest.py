from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from visipost.domain import Dataset, EnsembleForecast, ForecastCase, Station, build_scale


def utc(y, m, d, h=0):
    return datetime(y, m, d, h, tzinfo=timezone.utc)


def make_case(members, station_id="A", init=None, lead=6, aux=None, observation=None):
    """Case whose first member is the control run."""
    members = [float(v) for v in members]
    return ForecastCase(station_id=station_id, init_time=init or utc(2021, 1, 1), lead_time=lead,
                        ensemble=EnsembleForecast(members[0], tuple(members[1:])),
                        aux_forecast=aux, observation=observation)


def grid_dataset(obs_fn, n_days=40, stations=("A", "B", "C"), leads=(6,), ensemble_size=51, start=None,
                 hours=(0, 6, 12, 18)):
    """Small complete dataset: ``obs_fn(day, hour, station_index) -> category index``.

    Every ensemble member equals the observation's meter value at valid time.
    """
    scale = build_scale()
    start = start or utc(2021, 1, 1)
    sts = tuple(Station(s, 50.0 + i, 10.0 + 0.5 * i) for i, s in enumerate(stations))
    obs = {}
    for day in range(n_days + 6):
        for h in hours:
            t = start + timedelta(days=day, hours=h)
            for i, s in enumerate(stations):
                obs[(s, t)] = int(obs_fn(day, h, i))
    cases = {}
    for day in range(n_days):
        init = start + timedelta(days=day)
        for lead in leads:
            for s in stations:
                o = obs.get((s, init + timedelta(hours=lead)))
                v = scale[o] if o is not None else 1000
                c = make_case([v] * ensemble_size, s, init, lead, aux=float(v), observation=o)
                cases[c.key] = c
    return Dataset(scale=scale, stations=sts, cases=cases, observations=obs)


@pytest.fixture
def scale():
    return build_scale()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)
