"""
Conductance against chain length
================================

q should fall off like 1/N for both rate kinds, with the harmonic rate
conducting less.  Short runs, so the fit is rough.
"""

from heatchain import experiments
from heatchain.experiments import ExperimentConfig

Ns = [6, 10, 14, 18, 22]
for kind in ("sum-sqrt", "harmonic-sqrt"):
    doc = experiments.recipe("conductivity-1d", model={"rate": kind}, topology={"N": Ns},
                             run={"T_end": 4e4, "burn_in": 4e3, "seed": 7})
    res = experiments.conductivity_1d(ExperimentConfig.from_dict(doc))
    print(kind)
    for row in res.rows:
        N, q, se = row[1], row[5], row[6]
        # N * q is flat when q ~ 1/N
        print(f"  N={N:3d}  q={q:.5f} +- {se:.5f}  N*q={N * q:.4f}")
    fit = res.summary["fit"]
    print(f"  q ~ {fit['slope']:.4f} / N,  R^2 = {fit['r2']:.4f}")
