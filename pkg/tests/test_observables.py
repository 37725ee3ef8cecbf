import math
import random

import numpy as np
import pytest

from heatchain.engine import EventRecord, RunConfig, run
from heatchain.model import AnalysisError, BathSpec, RateKind, RateSpec, Topology
from heatchain.observables import (FluxLedger, SampleMatrix, SkeletonSampler, bond_flux_profile,
                                   conductivity_estimate, energy_profile, flux_of_event,
                                   skeleton_sample, time_average_profile)

SUM = RateSpec(RateKind.SUM_SQRT)
HARM = RateSpec(RateKind.HARMONIC_SQRT)
BATHS = BathSpec(1.0, 2.0)


def _rec(kind, before, after, bond=0, t=1.0):
    sites = (0, 1) if len(before) == 2 else (0,)
    return EventRecord(t, bond, kind, sites, tuple(before), tuple(after))


def test_flux_of_event_examples():
    assert flux_of_event(_rec("interior", (1, 3), (1, 3))) == 0
    assert flux_of_event(_rec("interior", (1, 3), (3, 1))) == 2
    assert flux_of_event(_rec("left-bath", (2.0,), (1.5,))) == 0.5
    assert flux_of_event(_rec("right-bath", (2.0,), (2.5,))) == 0.5
    assert flux_of_event(_rec("vertical", (1, 3), (3, 1))) == 0


def test_single_event_ledger_arithmetic():
    top = Topology.chain(1)
    ledger = FluxLedger.empty(top, 0.0, 1.0, n_batches=1)
    ledger.on_event(_rec("right-bath", (1.0,), (2.0,), bond=1, t=0.5))
    est = conductivity_estimate(ledger, BATHS, top)
    assert est.kappa == 1.0 and est.q == 0.5
    assert est.q == est.kappa / (top.N + 1)
    with pytest.raises(AnalysisError):
        conductivity_estimate(ledger, BathSpec(1.0, 1.0), top)


def test_ledger_ignores_events_outside_window():
    ledger = FluxLedger.empty(Topology.chain(2), 10.0, 20.0, n_batches=2)
    ledger.on_event(_rec("left-bath", (2.0,), (1.0,), t=10.0))
    ledger.on_event(_rec("left-bath", (2.0,), (1.0,), t=20.5))
    assert ledger.events == 0
    ledger.on_event(_rec("left-bath", (2.0,), (1.0,), t=15.0))
    ledger.on_event(_rec("left-bath", (2.0,), (1.0,), t=15.0 + 1e-9))
    assert ledger.batch_counts[:, 1].tolist() == [1, 1]


def test_zero_event_ledger_profile():
    ledger = FluxLedger.empty(Topology.chain(4), 0.0, 5.0)
    means, _ = bond_flux_profile(ledger)
    assert np.all(means == 0) and means.size == 5


def _chain_run(spec, T_end, seed, N=10, burn=None, baths=BATHS, trajectory=0):
    burn = T_end / 10 if burn is None else burn
    return run(RunConfig(Topology.chain(N), spec, baths, T_end=T_end, burn_in=burn,
                         seed=seed, trajectory=trajectory))


def test_stationary_bond_fluxes_agree():
    rep = _chain_run(SUM, 4e4, 31)
    means, se = bond_flux_profile(FluxLedger.from_report(rep))
    centre = np.average(means, weights=1 / se ** 2)
    assert np.all(np.abs(means - centre) <= 3 * se + 1e-12)
    assert np.all(means > 0)


def test_bath_fluxes_balance_harmonic():
    rep = _chain_run(HARM, 2e5, 32)
    means, se = bond_flux_profile(FluxLedger.from_report(rep))
    assert abs(means[0] - means[-1]) <= 3 * math.hypot(se[0], se[-1])


def test_per_bond_sum_matches_total():
    ledger = FluxLedger.from_report(_chain_run(SUM, 3e3, 33))
    assert ledger.total_flux() == pytest.approx(ledger.batch_flux.sum(), rel=1e-12)
    counts = ledger.event_counts()
    assert counts["left-bath"] > 0 and counts["vertical"] == 0
    assert sum(counts.values()) == ledger.events


class _Events:
    def __init__(self):
        self.events = []

    def on_event(self, record):
        self.events.append(record)


def _mirror(record, N):
    """The same event seen through the reflection i -> N-1-i with swapped baths."""
    swap = {"left-bath": "right-bath", "right-bath": "left-bath"}
    if record.kind in swap:
        bond = 0 if record.kind == "right-bath" else N
        return EventRecord(record.time, bond, swap[record.kind], (N - 1 - record.sites[0],),
                           record.energy_before, record.energy_after)
    a, b = record.sites
    return EventRecord(record.time, N - 1 - a, record.kind, (N - 1 - b, N - 1 - a),
                       record.energy_before[::-1], record.energy_after[::-1])


def test_mirrored_trajectory_negates_flux():
    N = 7
    top = Topology.chain(N)
    rec = _Events()
    run(RunConfig(top, SUM, BATHS, T_end=2000.0, seed=3), [rec])
    fwd = FluxLedger.empty(top, 0.0, 2000.0)
    mir = FluxLedger.empty(top, 0.0, 2000.0)
    for e in rec.events:
        fwd.on_event(e)
        mir.on_event(_mirror(e, N))
    # equal up to rounding in the pair split (s - p s) - y versus x - p s
    np.testing.assert_allclose(mir.batch_flux[:, ::-1], -fwd.batch_flux, rtol=0, atol=1e-9)
    a = conductivity_estimate(fwd, BATHS, top)
    b = conductivity_estimate(mir, BATHS.swapped(), top)
    assert mir.total_flux() == pytest.approx(-fwd.total_flux(), rel=1e-12)
    assert b.kappa == pytest.approx(a.kappa, rel=1e-12) and a.kappa > 0


def test_bath_swap_keeps_kappa_and_negates_flux():
    top = Topology.chain(10)
    fwd = FluxLedger.from_report(_chain_run(SUM, 1e5, 40))
    rev = FluxLedger.from_report(_chain_run(SUM, 1e5, 41, baths=BATHS.swapped()))
    assert fwd.total_flux() > 0 > rev.total_flux()
    a = conductivity_estimate(fwd, BATHS, top)
    b = conductivity_estimate(rev, BATHS.swapped(), top)
    assert abs(a.kappa - b.kappa) <= 3 * math.hypot(a.kappa_se, b.kappa_se)


def test_two_run_lengths_agree():
    top = Topology.chain(20)
    short = conductivity_estimate(FluxLedger.from_report(_chain_run(SUM, 2e4, 50, N=20)), BATHS, top)
    long = conductivity_estimate(FluxLedger.from_report(_chain_run(SUM, 2e5, 51, N=20)), BATHS, top)
    assert abs(short.q - long.q) <= 3 * math.hypot(short.q_se, long.q_se)
    assert long.q_se < short.q_se


def test_merge_is_order_independent():
    reps = [_chain_run(SUM, 2e3, 60, trajectory=k) for k in range(5)]
    ledgers = [FluxLedger.from_report(r) for r in reps]
    ref = ledgers[0]
    for led in ledgers[1:]:
        ref = ref.merge(led)
    rng = random.Random(1)
    for _ in range(5):
        order = ledgers[:]
        rng.shuffle(order)
        out = order[0]
        for led in order[1:]:
            out = out.merge(led)
        np.testing.assert_array_equal(out.batch_flux, ref.batch_flux)
        assert out.keys == ref.keys
        assert conductivity_estimate(out, BATHS, Topology.chain(10)) == \
            conductivity_estimate(ref, BATHS, Topology.chain(10))
    with pytest.raises(AnalysisError):
        ledgers[0].merge(ledgers[0])


def test_skeleton_rows_and_constant_stream():
    cfg = RunConfig(Topology.chain(3), SUM, BATHS, T_end=10.0, seed=1)
    m = skeleton_sample(cfg, 2.0, [0, 2])
    assert m.rows == 5
    sampler = SkeletonSampler([0], 1.0)
    for k in range(1, 6):
        sampler.on_tick(float(k), np.array([0.7, 1.0]))
    mat = sampler.matrix()
    assert np.all(mat.values == 0.7)
    prof = energy_profile(mat)
    assert prof.mean[0] == pytest.approx(0.7, rel=1e-15) and prof.se[0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(AnalysisError):
        energy_profile(SampleMatrix(np.array([0]), 1.0, 0.0, np.zeros((0, 1))))


def test_skeleton_mean_matches_time_average():
    top = Topology.chain(40)
    cfg = RunConfig(top, SUM, BATHS, T_end=4.4e4, burn_in=4e3, seed=70, h=2.0,
                    sample_sites=list(range(40)))
    rep = run(cfg)
    skel = energy_profile(SampleMatrix.from_report(rep))
    tavg = time_average_profile(rep)
    c = 19
    assert abs(skel.mean[c] - tavg.mean[c]) <= 3 * math.hypot(skel.se[c], tavg.se[c])
    # the bulk profile rises from the cold side to the hot side
    assert tavg.mean[5] < tavg.mean[20] < tavg.mean[35]
