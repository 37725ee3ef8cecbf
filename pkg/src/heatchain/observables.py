"""Measured quantities: signed fluxes, conductivity and conductance,
bond-resolved flux profiles, skeleton samples and energy profiles.

Sign convention: a flux is positive when energy moves from right to left.
With ``T_right > T_left`` the steady-state flux, and hence ``kappa``, is
positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import EventRecord, RunConfig, RunReport, run
from .model import (INTERIOR, LEFT_BATH, RIGHT_BATH, VERTICAL, AnalysisError, BathSpec,
                    DomainError, Topology)

_KIND_CODES = {"interior": INTERIOR, "left-bath": LEFT_BATH,
               "right-bath": RIGHT_BATH, "vertical": VERTICAL}


def flux_of_event(record: EventRecord) -> float:
    """Right-to-left energy flux carried by one exchange event."""
    kind = record.kind
    if kind == "vertical":
        return 0.0
    before, after = record.energy_before[0], record.energy_after[0]
    if kind == "left-bath":
        return before - after
    # interior: gain of the left site; right bath: gain of the end site
    return after - before


def _batch_se(values: np.ndarray, weights: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        return math.nan
    w = weights / weights.sum()
    mean = float(np.dot(w, values))
    return math.sqrt(n / (n - 1) * float(np.sum(w * w * (values - mean) ** 2)))


@dataclass
class FluxLedger:
    """Per-batch, per-bond accumulated fluxes.

    Each row is one time batch of one trajectory.  ``keys`` labels rows by
    ``(trajectory, batch)``; merging sorts by key so the result does not
    depend on the order trajectories finished in.
    """

    bond_kind: np.ndarray
    batch_flux: np.ndarray
    batch_counts: np.ndarray
    batch_span: np.ndarray
    keys: list = field(default_factory=list)
    _edges: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, topology: Topology, burn_in: float, T_end: float, n_batches: int = 20,
              trajectory: int = 0) -> "FluxLedger":
        """Streaming ledger; feed it via ``on_event`` (it is a run observer)."""
        kinds = topology.bonds().kind
        edges = burn_in + (T_end - burn_in) * np.arange(n_batches + 1) / n_batches
        return cls(kinds, np.zeros((n_batches, len(kinds))), np.zeros((n_batches, 4), dtype=np.int64),
                   np.diff(edges), [(trajectory, j) for j in range(n_batches)], edges)

    @classmethod
    def from_report(cls, report: RunReport) -> "FluxLedger":
        traj = report.config.trajectory
        nb = report.batch_flux.shape[0]
        return cls(report.bond_kind.copy(), report.batch_flux.copy(), report.batch_counts.copy(),
                   np.diff(report.batch_edges), [(traj, j) for j in range(nb)],
                   report.batch_edges.copy())

    def on_event(self, record: EventRecord) -> None:
        edges = self._edges
        if record.time <= edges[0] or record.time > edges[-1]:
            return
        # batch j holds events with edges[j] < t <= edges[j+1]
        row = int(np.searchsorted(edges, record.time, side="left")) - 1
        self.batch_flux[row, record.bond] += flux_of_event(record)
        self.batch_counts[row, _KIND_CODES[record.kind]] += 1

    @property
    def span(self) -> float:
        return float(self.batch_span.sum())

    @property
    def n_batches(self) -> int:
        return len(self.batch_span)

    @property
    def horizontal(self) -> np.ndarray:
        return self.bond_kind != VERTICAL

    def total_flux(self) -> float:
        return float(self.batch_flux[:, self.horizontal].sum())

    def event_counts(self) -> dict:
        totals = self.batch_counts.sum(axis=0)
        return {"interior": int(totals[INTERIOR]), "left-bath": int(totals[LEFT_BATH]),
                "right-bath": int(totals[RIGHT_BATH]), "vertical": int(totals[VERTICAL])}

    @property
    def events(self) -> int:
        return int(self.batch_counts.sum())

    def merge(self, other: "FluxLedger") -> "FluxLedger":
        if not np.array_equal(self.bond_kind, other.bond_kind):
            raise AnalysisError("cannot merge ledgers of different topologies")
        keys = list(self.keys) + list(other.keys)
        if len(set(keys)) != len(keys):
            raise AnalysisError("duplicate (trajectory, batch) keys in merge")
        order = sorted(range(len(keys)), key=keys.__getitem__)
        flux = np.concatenate([self.batch_flux, other.batch_flux])[order]
        counts = np.concatenate([self.batch_counts, other.batch_counts])[order]
        span = np.concatenate([self.batch_span, other.batch_span])[order]
        return FluxLedger(self.bond_kind.copy(), flux, counts, span, [keys[i] for i in order])


@dataclass(frozen=True)
class ConductivityEstimate:
    kappa: float
    q: float
    kappa_se: float
    q_se: float
    N: int
    M: int
    span: float
    seed: Optional[int] = None
    events: int = 0

    @property
    def stderr(self) -> float:
        return self.q_se


def conductivity_estimate(ledger: FluxLedger, baths: BathSpec, topology: Topology,
                          seed: Optional[int] = None) -> ConductivityEstimate:
    """Direct steady-state flux estimator of ``kappa`` and ``q = kappa / (N + 1)``.

    ``kappa = sum(J) / (M * T_span * (T_right - T_left))`` over every
    horizontal and bath event; errors come from batch means.
    """
    gradient = baths.T_right - baths.T_left
    if gradient == 0:
        raise AnalysisError("equal bath temperatures: conductivity undefined")
    if not ledger.span > 0:
        raise AnalysisError("ledger covers no time")
    M, N = topology.M, topology.N
    norm = M * gradient
    per_batch = ledger.batch_flux[:, ledger.horizontal].sum(axis=1) / (ledger.batch_span * norm)
    kappa = ledger.total_flux() / (ledger.span * norm)
    kappa_se = _batch_se(per_batch, ledger.batch_span)
    return ConductivityEstimate(kappa, kappa / (N + 1), kappa_se, kappa_se / (N + 1),
                                N, M, ledger.span, seed, ledger.events)


def bond_flux_profile(ledger: FluxLedger) -> tuple[np.ndarray, np.ndarray]:
    """Time-averaged flux of every bond, with batch-means standard errors."""
    if not ledger.span > 0:
        raise AnalysisError("ledger covers no time")
    means = ledger.batch_flux.sum(axis=0) / ledger.span
    per_batch = ledger.batch_flux / ledger.batch_span[:, None]
    se = np.array([_batch_se(per_batch[:, b], ledger.batch_span)
                   for b in range(per_batch.shape[1])])
    return means, se


@dataclass
class SampleMatrix:
    """Energies of selected sites at the skeleton times ``origin + k h``, k >= 1."""

    sites: np.ndarray
    h: float
    origin: float
    values: np.ndarray

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    def column(self, site: int) -> np.ndarray:
        idx = np.flatnonzero(self.sites == site)
        if idx.size == 0:
            raise KeyError(f"site {site} was not sampled")
        return self.values[:, idx[0]]

    @classmethod
    def from_report(cls, report: RunReport) -> "SampleMatrix":
        return cls(report.sample_sites.copy(), float(report.config.h or math.nan),
                   report.config.burn_in, report.samples)


class SkeletonSampler:
    """Run observer that stores the energies of ``sites`` at every tick."""

    def __init__(self, sites: Sequence[int], h: float, origin: float = 0.0):
        self.sites = np.asarray(sites, dtype=np.int64)
        self.h = h
        self.origin = origin
        self.times: list = []
        self._rows: list = []

    def on_tick(self, time: float, energies: np.ndarray) -> None:
        self.times.append(time)
        self._rows.append(energies[self.sites])

    def matrix(self) -> SampleMatrix:
        values = np.array(self._rows).reshape(len(self._rows), len(self.sites))
        return SampleMatrix(self.sites, self.h, self.origin, values)


def skeleton_sample(config: RunConfig, h: float, sites: Sequence[int]) -> SampleMatrix:
    """Run ``config`` and return the time-``h`` skeleton of the given sites."""
    cfg = RunConfig(**{**config.__dict__, "h": h, "sample_sites": list(sites)})
    return SampleMatrix.from_report(run(cfg))


@dataclass(frozen=True)
class EnergyProfile:
    sites: np.ndarray
    mean: np.ndarray
    se: np.ndarray


def energy_profile(samples: SampleMatrix, n_batches: int = 20) -> EnergyProfile:
    """Column means of a sample matrix; errors from contiguous batch means."""
    values = samples.values
    if values.shape[0] == 0:
        raise AnalysisError("empty sample matrix")
    mean = values.mean(axis=0)
    nb = min(n_batches, values.shape[0])
    if nb < 2:
        se = np.full(values.shape[1], math.nan)
    else:
        usable = values[: (values.shape[0] // nb) * nb]
        batch = usable.reshape(nb, -1, values.shape[1]).mean(axis=1)
        se = batch.std(axis=0, ddof=1) / math.sqrt(nb)
    return EnergyProfile(samples.sites.copy(), mean, se)


def time_average_profile(report: RunReport) -> EnergyProfile:
    """Per-site time average of the energy, with batch-means errors."""
    if not report.span > 0:
        raise AnalysisError("run has no observed window")
    spans = np.diff(report.batch_edges)
    per_batch = report.energy_integral / spans[:, None]
    mean = report.energy_integral.sum(axis=0) / report.span
    se = np.array([_batch_se(per_batch[:, s], spans) for s in range(per_batch.shape[1])])
    return EnergyProfile(np.arange(per_batch.shape[1]), mean, se)
