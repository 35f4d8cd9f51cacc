"""
Particle filter against the Kalman filter
=========================================

On a linear-Gaussian model the Kalman filter is exact, so the SIR filter
with known dynamics should agree with it up to Monte-Carlo error.
"""

import math

import numpy as np

from online_gpssm.particle_filter import KnownDynamics, MeasurementModel, ParticleSet, ess, filter_step

rng = np.random.default_rng(2)
a, q, r = 0.9, 0.5, 0.2
x, zs = 0.0, []
for _ in range(30):
    x = a * x + math.sqrt(q) * rng.standard_normal()
    zs.append(x + math.sqrt(r) * rng.standard_normal())

###############################################################################
# A scalar Kalman filter in a few lines.
m, p = 0.0, 1.0
kalman = []
for z in zs:
    m, p = a * m, a * a * p + q
    k = p / (p + r)
    m, p = m + k * (z - m), (1 - k) * p
    kalman.append((m, p))

###############################################################################
# The particle filter, reporting the error in Monte-Carlo standard errors.
ps = ParticleSet.from_states(rng.standard_normal(5000))
dyn, mm = KnownDynamics(lambda s: a * s, q), MeasurementModel(r)
for t, z in enumerate(zs):
    out = filter_step(ps, z, dyn, mm, rng)
    km, kv = kalman[t]
    se = math.sqrt(kv / ess(out.weighted))
    if t % 5 == 0:
        print(f"t={t:2d}  PF={out.estimate:+.4f}  KF={km:+.4f}  error/se={(out.estimate - km) / se:+.2f}")
    ps = out.particles
