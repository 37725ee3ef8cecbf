"""
Closed-form bond flux and the predicted profile
===============================================

The flux between two sites held at their own equilibrium laws has a
closed form.  We check it against quadrature and Monte Carlo, then use it
to predict the temperature profile of a chain from its two anchor sites.
"""

import numpy as np

from heatchain import RateKind, stats

rng = np.random.default_rng(3)
for kind in (RateKind.SUM_SQRT, RateKind.HARMONIC_SQRT):
    T, U = 1.2, 1.7
    closed = stats.theoretical_flux(kind, T, U)
    quad = stats.flux_quadrature(kind, T, U)
    mc, se = stats.flux_monte_carlo(kind, T, U, 1_000_000, rng)
    print(f"{kind.label}: closed {closed:.8f}  quad {quad:.8f}  MC {mc:.5f} +- {se:.5f}")

# equal flux through every bond fixes the interior temperatures once the
# two ends are pinned
prof = stats.predicted_profile(RateKind.SUM_SQRT, 1.0, 2.0, n=8)
print("flux through each bond:", round(prof.flux, 6))
print("interior temperatures:", np.round(prof.temperatures, 4))
# the profile is not linear: compare with straight interpolation
print("linear guess:         ", np.round(np.linspace(1, 2, 10)[1:-1], 4))
