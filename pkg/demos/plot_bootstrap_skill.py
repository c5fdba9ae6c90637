"""
Confidence bounds for a skill score
===================================

Per-date scores are autocorrelated, so the interval comes from the
stationary bootstrap: blocks of geometric length are resampled with
wrap-around and the forecast and reference series share the indices.
"""

import numpy as np

from visipost.mvscore import default_block_length, stationary_bootstrap_ci

rng = np.random.default_rng(3)
n = 365
# AR(1) daily scores for a reference and a forecast that is 4% better on average
noise = np.zeros(n)
for t in range(1, n):
    noise[t] = 0.7 * noise[t - 1] + rng.normal()
reference = 10000 + 800 * noise + rng.normal(0, 300, n)
forecast = 0.96 * reference + rng.normal(0, 200, n)

L = default_block_length(n)
mean_ci = stationary_bootstrap_ci(forecast, B=2000, seed=1)
skill = stationary_bootstrap_ci(forecast, B=2000, seed=1, reference=reference)
print(f"mean block length {L:.0f}")
print(f"forecast mean {forecast.mean():.1f}  95% [{mean_ci.lo:.1f}, {mean_ci.hi:.1f}]")
print(f"skill {skill.estimate:.4f}  95% [{skill.lo:.4f}, {skill.hi:.4f}]")
