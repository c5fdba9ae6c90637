"""
Rank histograms and the reliability index
=========================================

A calibrated ensemble gives flat verification-rank histograms. Shrinking
the spread (dispersion factor 0.5) piles observations into the outer bins.
"""

import numpy as np

from visipost.domain import discretize
from visipost.mvscore import PreRankKind, dependence_weights, histogram
from visipost.synth import SynthConfig, generate
from visipost.uniscore import rank_histogram, reliability_index, verification_rank


def text_histogram(counts, width=40):
    # merge 52 bins into 13 for display
    merged = counts.reshape(13, 4).sum(axis=1)
    for c in merged:
        print("  " + "#" * int(width * c / merged.max()))


for dispersion in (1.0, 0.5):
    ds = generate(SynthConfig(n_stations=3, n_days=2000, lead_times=(6,), dispersion=dispersion,
                              ensemble_bias=0.0, seed=4))
    rng = np.random.default_rng(0)
    ranks, cases = [], []
    for day in ds.init_dates():
        cs = [ds.case(s, day, 6) for s in ds.station_ids]
        members = ds.scale.meters[discretize(np.stack([c.ensemble.members() for c in cs], axis=1))]
        obs = ds.scale.meters[[c.observation for c in cs]]
        ranks.append(verification_rank(members[:, 0], obs[0], rng))
        cases.append((members, obs))
    h = rank_histogram(ranks, 51)
    print(f"dispersion {dispersion}: univariate RI = {reliability_index(h):.3f}")
    text_histogram(h.counts)
    w = dependence_weights(ds.stations)
    for kind in PreRankKind:
        print(f"  {kind.value:13s} RI = {reliability_index(histogram(kind, cases, rng, w)):.3f}")
