import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatchain.model import (BathSpec, DomainError, RateKind, RateSpec, SystemState, Topology,
                             apply_boundary_exchange, apply_pair_exchange, boundary_rate,
                             generator_drift_linear, pair_rate)

SUM = RateSpec(RateKind.SUM_SQRT)
HARM = RateSpec(RateKind.HARMONIC_SQRT)
energy = st.floats(min_value=0.0, max_value=1e6, allow_nan=False)
fraction = st.floats(min_value=1e-12, max_value=1 - 1e-12)


def test_pair_rate_examples():
    assert pair_rate(SUM, 1, 3) == 2.0
    assert pair_rate(HARM, 0, 5) == 0.0
    assert pair_rate(RateSpec("capped-min-sqrt", cap=1.0), 4, 9) == 1.0
    assert pair_rate(HARM, 0, 0) == 0.0


def test_boundary_rate_examples():
    assert boundary_rate(SUM, 1.0, 3.0) == 2.0
    assert boundary_rate(HARM, 1.0, 1.0) == pytest.approx(math.sqrt(0.5), rel=1e-15)
    assert boundary_rate(HARM, 1.0, 0.0) == 0.0


def test_rate_domain_errors():
    with pytest.raises(DomainError):
        pair_rate(SUM, -1.0, 2.0)
    with pytest.raises(DomainError):
        boundary_rate(SUM, 0.0, 1.0)
    with pytest.raises(DomainError):
        RateSpec("capped-min-sqrt")
    with pytest.raises(DomainError):
        RateSpec(RateKind.SUM_SQRT, cap=-1.0)
    with pytest.raises(DomainError):
        RateSpec("no-such-rate")


def test_rate_kind_parsing():
    assert RateKind.parse("harmonic_sqrt") is RateKind.HARMONIC_SQRT
    assert RateKind.parse("R1") is RateKind.SUM_SQRT
    assert RateKind.parse(2) is RateKind.CAPPED_MIN_SQRT
    assert RateKind.SUM_SQRT.label == "sum-sqrt"


@given(energy, energy, st.sampled_from(list(RateKind)))
def test_rate_symmetric_and_nonnegative(x, y, kind):
    spec = RateSpec(kind, cap=2.5 if kind is RateKind.CAPPED_MIN_SQRT else None)
    r = pair_rate(spec, x, y)
    assert r >= 0.0
    assert r == pair_rate(spec, y, x)


@given(energy, energy, st.floats(min_value=1e-3, max_value=10))
def test_cap_bounds_every_kind(x, y, cap):
    for kind in RateKind:
        assert pair_rate(RateSpec(kind, cap=cap), x, y) <= cap


def test_pair_exchange_examples():
    assert apply_pair_exchange(2, 2, 0.5) == (2, 2)
    assert apply_pair_exchange(1, 3, 0.25) == (1, 3)
    x, y = apply_pair_exchange(5, 0, 0.1)
    assert x == pytest.approx(0.5, abs=1e-15) and y == pytest.approx(4.5, abs=1e-15)
    for p in (0.0, 1.0, -0.5):
        with pytest.raises(DomainError):
            apply_pair_exchange(1, 1, p)


@given(energy, energy, fraction)
def test_pair_exchange_conserves(x, y, p):
    a, b = apply_pair_exchange(x, y, p)
    assert a >= 0 and b >= 0
    assert abs((a + b) - (x + y)) <= math.ulp(x + y)


def test_boundary_exchange_examples():
    assert apply_boundary_exchange(1, 1, 0.5) == 1
    assert apply_boundary_exchange(0, 2, 0.75) == 1.5
    assert apply_boundary_exchange(3, 0, 1 / 3) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(DomainError):
        apply_boundary_exchange(1, 1, 1.0)
    with pytest.raises(DomainError):
        apply_boundary_exchange(-1, 1, 0.5)


def test_bond_counts():
    assert Topology.chain(5).count_bonds() == {"interior": 4, "left-bath": 1,
                                               "right-bath": 1, "vertical": 0}
    lat = Topology.lattice(3, 4).count_bonds()
    assert lat == {"interior": 3 * 3, "left-bath": 3, "right-bath": 3, "vertical": 2 * 4}
    assert Topology.ring(6).count_bonds() == {"interior": 6, "left-bath": 0,
                                              "right-bath": 0, "vertical": 0}
    with pytest.raises(DomainError):
        Topology.ring(1)
    with pytest.raises(DomainError):
        Topology("chain", 4, 2)


@given(st.integers(1, 6), st.integers(2, 8))
def test_lattice_incidence(M, N):
    top = Topology.lattice(M, N)
    table = top.bonds()
    for s in range(top.n_sites):
        inc = [b for b in table.incident[s] if b >= 0]
        expect = [b for b in range(table.n_bonds) if s in (table.site_a[b], table.site_b[b])]
        assert sorted(inc) == expect
        assert len(inc) <= 4


def test_state_validation():
    top = Topology.chain(3)
    with pytest.raises(DomainError):
        SystemState(top, [1.0, -0.1, 1.0])
    with pytest.raises(DomainError):
        SystemState(top, [1.0, 1.0])
    assert SystemState.uniform(top, 2.0).total_energy == 6.0


def test_generator_single_site_at_bath_temperature():
    for spec in (SUM, HARM, RateSpec("capped-min-sqrt", cap=0.7)):
        state = SystemState(Topology.chain(1), [1.5])
        assert generator_drift_linear([1.0], state, BathSpec(1.5, 1.5), spec) == 0.0


def test_generator_total_energy_sees_only_baths():
    state = SystemState(Topology.chain(2), [0.4, 2.5])
    baths = BathSpec(1.0, 2.0)
    drift = generator_drift_linear([1.0, 1.0], state, baths, SUM)
    bath_only = (boundary_rate(SUM, 1.0, 0.4) * (1.0 - 0.4) / 2
                 + boundary_rate(SUM, 2.0, 2.5) * (2.0 - 2.5) / 2)
    assert drift == pytest.approx(bath_only, rel=1e-14)


def test_generator_hand_value():
    # N=3, E=(1,2,3), c=(1,0,0): left bath and bond (1,2) move E_1
    state = SystemState(Topology.chain(3), [1.0, 2.0, 3.0])
    drift = generator_drift_linear([1, 0, 0], state, BathSpec(1.0, 2.0), SUM)
    expect = math.sqrt(2.0) * (1.0 - 1.0) / 2 + math.sqrt(3.0) * (3.0 / 2 - 1.0)
    assert drift == pytest.approx(expect, rel=1e-14)
    with pytest.raises(DomainError):
        generator_drift_linear([1, 0], state, BathSpec(1.0, 2.0), SUM)
