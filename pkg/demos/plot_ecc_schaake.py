"""
Restoring spatial dependence
============================

Univariate quantiles from a calibrated PMF carry no information about
how stations vary together. Ensemble copula coupling borrows the rank
order of the raw members, the Schaake shuffle borrows it from past
observations. Energy and variogram scores show the difference.
"""

import numpy as np

from visipost import classifiers as clf
from visipost.domain import discretize
from visipost.mvconstruct import ecc, equidistant_quantiles, naive_multivariate, schaake_shuffle
from visipost.mvscore import energy_score, variogram_score
from visipost.synth import SynthConfig, generate

ds = generate(SynthConfig(n_stations=5, n_days=200, lead_times=(6,), dispersion=1.0, ensemble_bias=0.0,
                          seed=2))
ids = ds.station_ids
K = 51
rng = np.random.default_rng(0)

totals = {"naive": [0.0, 0.0], "ECC": [0.0, 0.0], "SSh": [0.0, 0.0]}
days = ds.init_dates()[100:]
for day in days:
    cases = [ds.case(s, day, 6) for s in ids]
    raw = np.stack([c.ensemble.members() for c in cases], axis=1)
    obs = ds.scale.meters[[c.observation for c in cases]]
    # here the marginal PMF is simply the discretized raw ensemble
    pmfs = np.array([clf.ensemble_pmf(discretize(raw[:, d], ds.scale)) for d in range(len(ids))])
    sorted_s = equidistant_quantiles(pmfs, K, ds.scale).T
    samples = {
        "naive": naive_multivariate(sorted_s),
        "ECC": ecc(sorted_s, raw, rng),
        "SSh": schaake_shuffle(sorted_s, ds, ids, 100, day, 6, K, rng),
    }
    for name, s in samples.items():
        totals[name][0] += energy_score(s, obs)
        totals[name][1] += variogram_score(s, obs)

for name, (es, vs) in totals.items():
    print(f"{name:6s} ES {es / len(days):9.1f}   VS {vs / len(days):9.1f}")
