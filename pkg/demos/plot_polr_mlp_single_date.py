"""
Calibrating one forecast date
=============================

Fit the ordinal logistic model and the softmax network on a rolling
window of synthetic cases, then compare their CRPS with the raw ensemble
at the same station.
"""

import numpy as np

from visipost import classifiers as clf
from visipost.domain import discretize
from visipost.features import FeatureConfig, feature_matrix
from visipost.synth import SynthConfig, generate
from visipost.training import Local, RollingWindow, select_training
from visipost.uniscore import crps_discrete

# a modest synthetic network: 6 stations, 420 days, one lead time
ds = generate(SynthConfig(n_stations=6, n_days=420, lead_times=(24,), seed=7))
station = ds.station_ids[0]
days = ds.init_dates()

# training pairs from the 350 days before the forecast date
cfg = FeatureConfig(include_aux=True)
window = RollingWindow(350)
scores = {"raw": [], "POLR": [], "MLP": []}
for day in days[350:380]:
    pairs = select_training(ds, Local(), window, station, day, 24)
    X = feature_matrix([c for c, _ in pairs], cfg)
    y = np.array([lab for _, lab in pairs])
    polr = clf.polr_fit(X, y, mask=cfg.constraint_mask())
    mlp = clf.mlp_fit(X, y, hidden=(32, 16), opts=clf.TrainOptions(max_iter=100, seed=1))

    case = ds.case(station, day, 24)
    x = feature_matrix([case], cfg)
    raw = clf.ensemble_pmf(discretize(case.ensemble.members(), ds.scale))
    for name, p in (("raw", raw), ("POLR", clf.predict(polr, x)[0]), ("MLP", clf.predict(mlp, x)[0])):
        scores[name].append(crps_discrete(p, case.observation, ds.scale))

# mean CRPS in meters over 30 forecast dates
for name, vals in scores.items():
    print(f"{name:5s} CRPS {np.mean(vals):8.1f} m")

# POLR coefficients: control, ensemble mean and aux forecast stay nonnegative
print({k: round(float(v), 4) for k, v in zip(cfg.names, polr.coefficients)})
