"""
A single chain between two baths
================================

Build a short chain, run it, and read off the conductance and the
energy profile.
"""

import numpy as np

from heatchain import (BathSpec, FluxLedger, RateKind, RateSpec, RunConfig, Topology,
                       conductivity_estimate, run, time_average_profile)

# twelve sites, cold bath on the left and hot bath on the right
top = Topology.chain(12)
baths = BathSpec(T_left=1.0, T_right=2.0)
spec = RateSpec(RateKind.SUM_SQRT)

# the first tenth of the run is discarded as burn-in
cfg = RunConfig(top, spec, baths, T_end=2e4, burn_in=2e3, seed=1)
report = run(cfg)
print(f"{report.events} events, {report.events_per_second:.3g} events/s")

# heat flows right to left, so the flux comes out positive here
est = conductivity_estimate(FluxLedger.from_report(report), baths, top)
print(f"kappa = {est.kappa:.4f} +- {est.kappa_se:.4f}")
print(f"q     = {est.q:.5f} +- {est.q_se:.5f}")

# mean energy per site, time averaged after burn-in
prof = time_average_profile(report)
for site, (m, s) in enumerate(zip(prof.mean, prof.se), start=1):
    print(f"site {site:2d}  {m:.3f} +- {s:.3f}")

# with these baths the bulk should rise monotonically from left to right
print("monotone bulk:", bool(np.all(np.diff(prof.mean[2:-2]) > 0)))
