"""Exact event-driven simulation of the energy-exchange jump process.

Scheduling is the direct method: the waiting time to the next event is
exponential with the total clock rate, and the firing bond is picked with
probability proportional to its rate by descending a binary sum tree.  All
clocks are exponential and rates only change at events, so redrawing after
each event is exact.  Per-event cost is ``O(log B)`` for ``B`` bonds.

The hot loop lives in one compiled kernel (``_advance``).  It accumulates the
standard run products (per-bond fluxes, event counts, time integrals,
skeleton samples, streaming marginal statistics) and can optionally stop
after every event or skeleton tick so that Python observers see each
``EventRecord``.  Both modes run the same compiled code, so a run with
observers attached is bit-identical to one without.
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

from .model import (BOND_KIND_NAMES, INTERIOR, LEFT_BATH, RIGHT_BATH, VERTICAL,
                    BathSpec, BondTable, DomainError, RateSpec, SystemState,
                    Topology, rate_value)
from .rng import RngStream, derive_stream


class DeadlockError(RuntimeError):
    """Every clock rate is zero, so no further event can occur."""


class ObserverError(RuntimeError):
    """An observer callback raised; the run was aborted."""


# ---------------------------------------------------------------------------
# compiled primitives

@njit(cache=True, nogil=True)
def _uniform_open(gen):
    u = gen.random()
    while u <= 0.0:
        u = gen.random()
    return u


@njit(cache=True, nogil=True)
def _bond_rate(bond, E, site_a, site_b, bkind, bath_T, rkind, rcap):
    k = bkind[bond]
    if k == 1:
        return rate_value(rkind, rcap, bath_T[0], E[site_a[bond]])
    if k == 2:
        return rate_value(rkind, rcap, E[site_a[bond]], bath_T[1])
    return rate_value(rkind, rcap, E[site_a[bond]], E[site_b[bond]])


@njit(cache=True, nogil=True)
def _tree_set(tree, cap, bond, value):
    i = cap + bond
    tree[i] = value
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@njit(cache=True, nogil=True)
def _tree_fill(tree, cap, rates):
    tree[:] = 0.0
    for b in range(rates.shape[0]):
        tree[cap + b] = rates[b]
    for i in range(cap - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@njit(cache=True, nogil=True)
def _tree_pick(tree, cap, target):
    i = 1
    while i < cap:
        left = tree[2 * i]
        if target < left or tree[2 * i + 1] <= 0.0:
            i = 2 * i
        else:
            target -= left
            i = 2 * i + 1
    return i - cap


@njit(cache=True, nogil=True)
def _draw_next(tree, cap, gen):
    total = tree[1]
    dt = -math.log(_uniform_open(gen)) / total
    bond = _tree_pick(tree, cap, gen.random() * total)
    return dt, bond


@njit(cache=True, nogil=True)
def _refresh_site(s, skip, E, tree, cap, site_a, site_b, bkind, incident, bath_T, rkind, rcap):
    for j in range(incident.shape[1]):
        b = incident[s, j]
        if b < 0:
            break
        if b != skip:
            _tree_set(tree, cap, b, _bond_rate(b, E, site_a, site_b, bkind, bath_T, rkind, rcap))


@njit(cache=True, nogil=True)
def _fire(bond, E, tree, cap, site_a, site_b, bkind, incident, bath_T, rkind, rcap, gen, rec):
    """Apply one exchange on ``bond``; rec <- (a, b, Ea, Eb, Ea', Eb').  Returns flux."""
    k = bkind[bond]
    a = site_a[bond]
    if k == 1 or k == 2:
        T = bath_T[0] if k == 1 else bath_T[1]
        x = -T * math.log(_uniform_open(gen))
        p = _uniform_open(gen)
        before = E[a]
        after = p * (before + x)
        E[a] = after
        _refresh_site(a, -1, E, tree, cap, site_a, site_b, bkind, incident, bath_T, rkind, rcap)
        rec[0] = a
        rec[1] = -1
        rec[2] = before
        rec[3] = np.nan
        rec[4] = after
        rec[5] = np.nan
        return before - after if k == 1 else after - before
    b = site_b[bond]
    p = _uniform_open(gen)
    ea = E[a]
    eb = E[b]
    s = ea + eb
    na = p * s
    E[a] = na
    E[b] = s - na
    _refresh_site(a, -1, E, tree, cap, site_a, site_b, bkind, incident, bath_T, rkind, rcap)
    _refresh_site(b, bond, E, tree, cap, site_a, site_b, bkind, incident, bath_T, rkind, rcap)
    rec[0] = a
    rec[1] = b
    rec[2] = ea
    rec[3] = eb
    rec[4] = na
    rec[5] = s - na
    return 0.0 if k == 3 else na - ea


@njit(cache=True, nogil=True)
def _record_tick(t, E, sample_sites, samples, row, marg_sites, marg_edges, marg_counts, marg_stats):
    if row < samples.shape[0]:
        for j in range(sample_sites.shape[0]):
            samples[row, j] = E[sample_sites[j]]
    nb = marg_counts.shape[1]
    for j in range(marg_sites.shape[0]):
        x = E[marg_sites[j]]
        idx = np.searchsorted(marg_edges, x, side="right") - 1
        if idx >= nb:
            idx = nb - 1
        if idx >= 0:
            marg_counts[j, idx] += 1
        marg_stats[j, 0] += 1.0
        marg_stats[j, 1] += x
        marg_stats[j, 2] += x * x
        if x > 0.0:
            marg_stats[j, 3] += math.log(x)
        else:
            marg_stats[j, 4] += 1.0


@njit(cache=True, nogil=True)
def _advance(E, tree, cap, clock, pend_bond, t_stop,
             site_a, site_b, bkind, incident, bath_T, rkind, rcap, gen,
             observe, flux, counts, acc, integ, last_touch,
             tick, tick_origin, h, sample_sites, samples,
             marg_sites, marg_edges, marg_counts, marg_stats,
             stop_on_event, stop_on_tick, rec):
    """Advance until the next event would fall after ``t_stop``.

    clock = [last event time, pending event time, integral mark, has pending].
    tick = [next tick number (1-based), number of ticks].
    Returns (code, events fired): code 0 = reached t_stop, 1 = stopped after
    an event, 2 = stopped at a tick, -1 = deadlock.
    """
    fired = 0
    while True:
        if clock[3] == 0.0:
            if tree[1] <= 0.0:
                return -1, fired
            dt, bond = _draw_next(tree, cap, gen)
            clock[1] = clock[0] + dt
            pend_bond[0] = bond
            clock[3] = 1.0
        t_next = clock[1]
        # skeleton ticks strictly before the pending event
        while tick[0] <= tick[1]:
            t_tick = tick_origin + tick[0] * h
            if t_tick >= t_next or t_tick > t_stop:
                break
            _record_tick(t_tick, E, sample_sites, samples, tick[0] - 1,
                         marg_sites, marg_edges, marg_counts, marg_stats)
            tick[0] += 1
            if stop_on_tick:
                rec[7] = t_tick
                return 2, fired
        if t_next > t_stop:
            break
        bond = pend_bond[0]
        if observe:
            acc[0] += tree[1] * (t_next - clock[2])
            clock[2] = t_next
            a = site_a[bond]
            integ[a] += E[a] * (t_next - last_touch[a])
            last_touch[a] = t_next
            b = site_b[bond]
            if b >= 0:
                integ[b] += E[b] * (t_next - last_touch[b])
                last_touch[b] = t_next
        J = _fire(bond, E, tree, cap, site_a, site_b, bkind, incident, bath_T, rkind, rcap, gen, rec)
        clock[0] = t_next
        clock[3] = 0.0
        fired += 1
        if observe:
            flux[bond] += J
            counts[bkind[bond]] += 1
        if stop_on_event:
            rec[6] = bond
            rec[7] = t_next
            return 1, fired
    if observe:
        acc[0] += tree[1] * (t_stop - clock[2])
        clock[2] = t_stop
        for s in range(E.shape[0]):
            integ[s] += E[s] * (t_stop - last_touch[s])
            last_touch[s] = t_stop
    return 0, fired


# ---------------------------------------------------------------------------
# clock table

class ClockTable:
    """Per-bond exponential clock rates with a binary sum tree over them.

    Leaf ``cap + b`` holds the rate of bond ``b``; every internal node is the
    sum of its two children and is recomputed (never incremented) whenever a
    leaf changes, so ``total_rate`` carries no accumulated drift.
    """

    def __init__(self, topology: Topology, spec: RateSpec, baths: Optional[BathSpec],
                 energies: np.ndarray):
        if topology.has_baths and baths is None:
            raise DomainError("bath temperatures required for a topology with baths")
        self.topology = topology
        self.spec = spec
        self.baths = baths
        self.bonds: BondTable = topology.bonds()
        n = self.bonds.n_bonds
        self.cap = 1 << max(0, (n - 1).bit_length())
        self.tree = np.zeros(2 * self.cap, dtype=np.float64)
        self.bath_T = np.array([baths.T_left, baths.T_right] if baths else [1.0, 1.0])
        self.rkind = int(spec.kind)
        self.rcap = spec.cap_value
        self.rebuild(energies)

    @property
    def n_bonds(self) -> int:
        return self.bonds.n_bonds

    @property
    def rates(self) -> np.ndarray:
        return self.tree[self.cap:self.cap + self.n_bonds]

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    def rate_of(self, bond: int, energies: np.ndarray) -> float:
        b = self.bonds
        return float(_bond_rate(bond, energies, b.site_a, b.site_b, b.kind,
                                self.bath_T, self.rkind, self.rcap))

    def fresh_rates(self, energies: np.ndarray) -> np.ndarray:
        return np.array([self.rate_of(b, energies) for b in range(self.n_bonds)])

    def rebuild(self, energies: np.ndarray) -> None:
        _tree_fill(self.tree, self.cap, self.fresh_rates(np.asarray(energies, dtype=np.float64)))

    def pick(self, u: float) -> int:
        """Bond whose cumulative-rate interval contains ``u * total_rate``."""
        return int(_tree_pick(self.tree, self.cap, u * self.tree[1]))

    def kind_of(self, bond: int) -> str:
        return BOND_KIND_NAMES[int(self.bonds.kind[bond])]


def build_clock_set(state: SystemState, spec: RateSpec, baths: Optional[BathSpec]) -> ClockTable:
    return ClockTable(state.topology, spec, baths, state.energies)


def next_event(clocks: ClockTable, rng: RngStream) -> tuple[float, int]:
    """Waiting time and firing bond of the next exchange."""
    if clocks.total_rate <= 0.0:
        raise DeadlockError("total clock rate is zero")
    dt, bond = _draw_next(clocks.tree, clocks.cap, rng.generator)
    return float(dt), int(bond)


@dataclass(frozen=True)
class EventRecord:
    time: float
    bond: int
    kind: str
    sites: tuple
    energy_before: tuple
    energy_after: tuple

    @classmethod
    def _from_buffer(cls, rec: np.ndarray, bond: int, kind: str, t: float) -> "EventRecord":
        a, b = int(rec[0]), int(rec[1])
        if b < 0:
            return cls(t, bond, kind, (a,), (float(rec[2]),), (float(rec[4]),))
        return cls(t, bond, kind, (a, b), (float(rec[2]), float(rec[3])),
                   (float(rec[4]), float(rec[5])))


def apply_event(state: SystemState, clocks: ClockTable, bond: int, rng: RngStream,
                dt: float = 0.0) -> EventRecord:
    """Fire ``bond``: redistribute energy, refresh incident clocks, advance time."""
    if not 0 <= bond < clocks.n_bonds:
        raise DomainError(f"no bond {bond}")
    b = clocks.bonds
    rec = np.zeros(8)
    _fire(bond, state.energies, clocks.tree, clocks.cap, b.site_a, b.site_b, b.kind,
          b.incident, clocks.bath_T, clocks.rkind, clocks.rcap, rng.generator, rec)
    state.time += dt
    return EventRecord._from_buffer(rec, bond, clocks.kind_of(bond), state.time)


# ---------------------------------------------------------------------------
# runs

@dataclass
class RunConfig:
    topology: Topology
    rate: RateSpec
    baths: Optional[BathSpec]
    T_end: float
    burn_in: float = 0.0
    seed: int = 0
    h: Optional[float] = None
    sample_sites: Optional[Sequence[int]] = None
    max_samples: Optional[int] = None
    trajectory: int = 0
    initial: Optional[Sequence[float]] = None
    n_batches: int = 20
    marginal_sites: Optional[Sequence[int]] = None
    marginal_edges: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not (self.burn_in >= 0 and self.T_end >= self.burn_in):
            raise DomainError(f"need T_end >= burn_in >= 0, got {self.T_end}, {self.burn_in}")
        if self.h is not None and not self.h > 0:
            raise DomainError(f"skeleton period must be positive, got {self.h}")
        if self.n_batches < 1:
            raise DomainError("n_batches must be >= 1")
        if self.topology.has_baths and self.baths is None:
            raise DomainError("bath temperatures required for a topology with baths")
        n = self.topology.n_sites
        for name in ("sample_sites", "marginal_sites"):
            sites = getattr(self, name)
            if sites is not None and any(not 0 <= s < n for s in sites):
                raise DomainError(f"{name} out of range for {n} sites")
        if (self.sample_sites or self.marginal_sites) and self.h is None:
            raise DomainError("sampling sites given without a skeleton period h")
        if self.marginal_sites is not None and self.marginal_edges is None:
            raise DomainError("marginal_sites requires marginal_edges")

    def initial_state(self) -> SystemState:
        if self.initial is not None:
            return SystemState(self.topology, np.array(self.initial, dtype=np.float64))
        level = 1.0 if self.baths is None else 0.5 * (self.baths.T_left + self.baths.T_right)
        return SystemState.uniform(self.topology, level)

    @property
    def span(self) -> float:
        return self.T_end - self.burn_in

    @property
    def n_ticks(self) -> int:
        if self.h is None:
            return 0
        # guard against 10/2 -> 4.999... style truncation
        return int(math.floor(self.span / self.h * (1 + 1e-12)))

    def batch_edges(self) -> np.ndarray:
        return self.burn_in + self.span * np.arange(self.n_batches + 1) / self.n_batches


@dataclass
class RunReport:
    """Everything a run produces; fluxes are split by time batch."""

    config: RunConfig
    final_state: SystemState
    events: int
    observed_events: int
    batch_edges: np.ndarray
    batch_flux: np.ndarray      # (n_batches, n_bonds)
    batch_counts: np.ndarray    # (n_batches, 4) by bond kind
    rate_integral: float        # integral of the total rate over the observed window
    energy_integral: np.ndarray  # (n_batches, n_sites) integral of energy per batch
    bond_kind: np.ndarray
    sample_sites: np.ndarray
    samples: np.ndarray         # (rows, len(sample_sites))
    marginal_sites: np.ndarray
    marginal_edges: np.ndarray
    marginal_counts: np.ndarray
    marginal_stats: np.ndarray  # (sites, 5): n, sum x, sum x^2, sum log x, zeros
    wall_time: float

    @property
    def span(self) -> float:
        return self.config.span

    @property
    def events_per_second(self) -> float:
        return self.events / self.wall_time if self.wall_time > 0 else math.inf


class Simulation:
    """Mutable simulation state plus the arrays the compiled kernel writes into."""

    def __init__(self, config: RunConfig, stream: Optional[RngStream] = None):
        self.config = config
        self.state = config.initial_state()
        self.stream = stream or derive_stream(config.seed, config.trajectory)
        self.clocks = build_clock_set(self.state, config.rate, config.baths)
        top = config.topology
        self.clock = np.array([self.state.time, 0.0, 0.0, 0.0])
        self.pend_bond = np.zeros(1, dtype=np.int64)
        self.rec = np.zeros(8)
        self.events = 0
        self.observed_events = 0
        nb = config.n_batches
        self.batch_flux = np.zeros((nb, self.clocks.n_bonds))
        self.batch_counts = np.zeros((nb, 4), dtype=np.int64)
        self.acc = np.zeros(1)
        self.integ = np.zeros((nb, top.n_sites))
        self.last_touch = np.full(top.n_sites, config.burn_in)
        self.tick = np.array([1, config.n_ticks], dtype=np.int64)
        self.sample_sites = np.array(config.sample_sites or [], dtype=np.int64)
        rows = config.n_ticks if config.sample_sites else 0
        if config.max_samples is not None:
            rows = min(rows, config.max_samples)
        self.samples = np.zeros((rows, len(self.sample_sites)))
        self.marg_sites = np.array(config.marginal_sites or [], dtype=np.int64)
        edges = config.marginal_edges if config.marginal_edges is not None else [0.0, math.inf]
        self.marg_edges = np.asarray(edges, dtype=np.float64)
        if np.any(np.diff(self.marg_edges) <= 0):
            raise DomainError("marginal edges must be strictly increasing")
        self.marg_counts = np.zeros((len(self.marg_sites), len(self.marg_edges) - 1), dtype=np.int64)
        self.marg_stats = np.zeros((len(self.marg_sites), 5))

    def _call(self, t_stop, observe, row, stop_on_event, stop_on_tick):
        b = self.clocks.bonds
        code, fired = _advance(
            self.state.energies, self.clocks.tree, self.clocks.cap, self.clock, self.pend_bond,
            float(t_stop), b.site_a, b.site_b, b.kind, b.incident, self.clocks.bath_T,
            self.clocks.rkind, self.clocks.rcap, self.stream.generator,
            observe, self.batch_flux[row], self.batch_counts[row], self.acc, self.integ[row],
            self.last_touch, self.tick, float(self.config.burn_in),
            float(self.config.h or 1.0), self.sample_sites, self.samples,
            self.marg_sites, self.marg_edges, self.marg_counts, self.marg_stats,
            stop_on_event, stop_on_tick, self.rec)
        self.events += fired
        if observe:
            self.observed_events += fired
        if code == -1:
            raise DeadlockError(
                f"all clock rates vanished at t={self.clock[0]:.6g} "
                f"(energies min={self.state.energies.min():.3g})")
        return code

    def advance(self, t_stop: float, observe: bool = True, row: int = 0,
                observers: Sequence = ()) -> None:
        """Run until ``t_stop``; if observers are given, deliver every event and tick."""
        if not observers:
            self._call(t_stop, observe, row, False, False)
        else:
            on_event = [o.on_event for o in observers if hasattr(o, "on_event")]
            on_tick = [o.on_tick for o in observers if hasattr(o, "on_tick")]
            while True:
                code = self._call(t_stop, observe, row, True, bool(on_tick))
                if code == 0:
                    break
                try:
                    if code == 1:
                        bond = int(self.rec[6])
                        record = EventRecord._from_buffer(
                            self.rec, bond, self.clocks.kind_of(bond), float(self.rec[7]))
                        for cb in on_event:
                            cb(record)
                    else:
                        t_tick = float(self.rec[7])
                        for cb in on_tick:
                            cb(t_tick, self.state.energies.copy())
                except Exception as exc:
                    raise ObserverError(
                        f"observer failed at t={self.rec[7]:.9g}: {exc!r}") from exc
        self.state.time = max(self.state.time, float(t_stop))

    def report(self, wall_time: float = 0.0) -> RunReport:
        return RunReport(
            config=self.config, final_state=self.state.copy(), events=self.events,
            observed_events=self.observed_events, batch_edges=self.config.batch_edges(),
            batch_flux=self.batch_flux.copy(), batch_counts=self.batch_counts.copy(),
            rate_integral=float(self.acc[0]), energy_integral=self.integ.copy(),
            bond_kind=self.clocks.bonds.kind.copy(), sample_sites=self.sample_sites.copy(),
            samples=self.samples, marginal_sites=self.marg_sites.copy(),
            marginal_edges=self.marg_edges.copy(), marginal_counts=self.marg_counts.copy(),
            marginal_stats=self.marg_stats.copy(), wall_time=wall_time)


def run(config: RunConfig, observers: Iterable = (), stream: Optional[RngStream] = None) -> RunReport:
    """Simulate ``config`` to ``T_end``.

    Observers are objects with an ``on_event(record)`` and/or
    ``on_tick(time, energies)`` method.  They see events after the burn-in
    and skeleton ticks at ``burn_in + k h``.  Attaching observers switches the
    kernel to single-step mode; results are unchanged, only slower.
    """
    observers = list(observers)
    started = _time.perf_counter()
    sim = Simulation(config, stream)
    if config.burn_in > 0:
        sim.advance(config.burn_in, observe=False)
    sim.clock[2] = config.burn_in
    edges = config.batch_edges()
    if config.span > 0:
        for row in range(config.n_batches):
            sim.advance(edges[row + 1], observe=True, row=row, observers=observers)
    return sim.report(_time.perf_counter() - started)


def short_time_increments(state: SystemState, spec: RateSpec, baths: Optional[BathSpec],
                          coeffs: Sequence[float], h: float, replicas: int,
                          stream: RngStream) -> tuple[float, float]:
    """Mean and standard error of ``f(state at h) - f(state)`` for linear ``f``.

    Each replica restarts from ``state`` and is simulated exactly up to time
    ``h``; the returned mean divided by ``h`` estimates the generator drift.
    """
    clocks = build_clock_set(state, spec, baths)
    b = clocks.bonds
    c = np.asarray(coeffs, dtype=np.float64)
    s1, s2 = _replicate(state.energies.astype(np.float64), clocks.tree.copy(), clocks.cap,
                        b.site_a, b.site_b, b.kind, b.incident, clocks.bath_T, clocks.rkind,
                        clocks.rcap, stream.generator, c, float(h), int(replicas))
    mean = s1 / replicas
    var = max(s2 / replicas - mean * mean, 0.0)
    return mean, math.sqrt(var / replicas)


@njit(cache=True, nogil=True)
def _replicate(E0, tree0, cap, site_a, site_b, bkind, incident, bath_T, rkind, rcap,
               gen, coeffs, h, replicas):
    E = E0.copy()
    tree = tree0.copy()
    rec = np.zeros(8)
    f0 = 0.0
    for i in range(E0.shape[0]):
        f0 += coeffs[i] * E0[i]
    s1 = 0.0
    s2 = 0.0
    for _ in range(replicas):
        t = 0.0
        dirty = False
        while tree[1] > 0.0:
            dt, bond = _draw_next(tree, cap, gen)
            t += dt
            if t > h:
                break
            _fire(bond, E, tree, cap, site_a, site_b, bkind, incident, bath_T, rkind, rcap, gen, rec)
            dirty = True
        if dirty:
            f = 0.0
            for i in range(E.shape[0]):
                f += coeffs[i] * E[i]
            d = f - f0
            s1 += d
            s2 += d * d
            E[:] = E0
            tree[:] = tree0
    return s1, s2
