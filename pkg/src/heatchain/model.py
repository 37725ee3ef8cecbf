"""Model definitions: rate functions, exchange kernels, topologies and the
closed-form generator drift of linear observables.

Everything here is a pure function of its inputs.  The scalar kernels that
the simulation loop needs (``rate_value``) are numba-compiled so the engine
can call them from inside its event loop.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit


class DomainError(ValueError):
    """An argument lies outside the domain of a model operation."""


class AnalysisError(RuntimeError):
    """An estimator or test cannot be formed from the data it was given."""


class RateKind(enum.IntEnum):
    SUM_SQRT = 0
    HARMONIC_SQRT = 1
    CAPPED_MIN_SQRT = 2

    @classmethod
    def parse(cls, value) -> "RateKind":
        if isinstance(value, RateKind):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return cls(int(value))
        key = str(value).strip().lower().replace("_", "-")
        try:
            return _KIND_NAMES[key]
        except KeyError:
            raise DomainError(f"unknown rate kind {value!r}") from None

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]


_KIND_LABELS = {
    RateKind.SUM_SQRT: "sum-sqrt",
    RateKind.HARMONIC_SQRT: "harmonic-sqrt",
    RateKind.CAPPED_MIN_SQRT: "capped-min-sqrt",
}
_KIND_NAMES = {v: k for k, v in _KIND_LABELS.items()}
_KIND_NAMES.update({"sumsqrt": RateKind.SUM_SQRT, "r1": RateKind.SUM_SQRT,
                    "harmonicsqrt": RateKind.HARMONIC_SQRT, "r2": RateKind.HARMONIC_SQRT,
                    "cappedminsqrt": RateKind.CAPPED_MIN_SQRT})


@dataclass(frozen=True)
class RateSpec:
    """Which exchange-rate function to use.

    ``cap`` is required for the capped min form and optional for the other
    two, where it truncates the rate at ``cap`` (the bounded-rate variant
    used by the law-of-large-numbers argument for the flux estimator).
    """

    kind: RateKind = RateKind.SUM_SQRT
    cap: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RateKind.parse(self.kind))
        if self.cap is not None:
            if not (self.cap > 0 and math.isfinite(self.cap)):
                raise DomainError(f"rate cap must be positive and finite, got {self.cap}")
            object.__setattr__(self, "cap", float(self.cap))
        elif self.kind is RateKind.CAPPED_MIN_SQRT:
            raise DomainError("capped-min-sqrt rate requires a cap")

    @property
    def cap_value(self) -> float:
        """Cap as a float, ``inf`` when uncapped (the form the kernels take)."""
        return math.inf if self.cap is None else self.cap


@dataclass(frozen=True)
class BathSpec:
    T_left: float
    T_right: float

    def __post_init__(self):
        for name in ("T_left", "T_right"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be positive, got {value}")

    def swapped(self) -> "BathSpec":
        return BathSpec(self.T_right, self.T_left)


@njit(cache=True, nogil=True)
def rate_value(kind, cap, x, y):
    if kind == 0:
        r = math.sqrt(x + y)
    elif kind == 1:
        s = x + y
        r = 0.0 if s <= 0.0 else math.sqrt(x * y / s)
    else:
        r = math.sqrt(min(x, y))
    return r if r < cap else cap


def pair_rate(spec: RateSpec, x: float, y: float) -> float:
    """Clock rate of an exchange between two sites with energies ``x`` and ``y``."""
    if x < 0 or y < 0:
        raise DomainError(f"energies must be non-negative, got ({x}, {y})")
    return float(rate_value(int(spec.kind), spec.cap_value, float(x), float(y)))


def boundary_rate(spec: RateSpec, T_bath: float, e: float) -> float:
    """Clock rate of a bath exchange; the bath temperature stands in for an energy."""
    if not T_bath > 0:
        raise DomainError(f"bath temperature must be positive, got {T_bath}")
    if e < 0:
        raise DomainError(f"energy must be non-negative, got {e}")
    return float(rate_value(int(spec.kind), spec.cap_value, float(T_bath), float(e)))


def _check_fraction(p):
    if not 0.0 < p < 1.0:
        raise DomainError(f"redistribution fraction must lie in (0, 1), got {p}")


def apply_pair_exchange(x: float, y: float, p: float) -> tuple[float, float]:
    """Random-halves redistribution of a pooled pair energy."""
    if x < 0 or y < 0:
        raise DomainError(f"energies must be non-negative, got ({x}, {y})")
    _check_fraction(p)
    s = x + y
    new_x = p * s
    return new_x, s - new_x


def apply_boundary_exchange(e: float, drawn: float, p: float) -> float:
    """New energy of an end site after mixing with a bath draw ``drawn``."""
    if e < 0 or drawn < 0:
        raise DomainError(f"energies must be non-negative, got ({e}, {drawn})")
    _check_fraction(p)
    return p * (e + drawn)


# Bond kinds as stored in the compiled topology arrays.
INTERIOR, LEFT_BATH, RIGHT_BATH, VERTICAL = 0, 1, 2, 3
BOND_KIND_NAMES = ("interior", "left-bath", "right-bath", "vertical")


@dataclass(frozen=True)
class Topology:
    """Site/bond layout.

    Sites are numbered row-major (``row * N + column``).  Bond order is fixed
    and part of the public contract: for every row the left-bath bond, the
    ``N - 1`` horizontal bonds from left to right, then the right-bath bond;
    after all rows, the vertical bonds row by row.  A ring has ``N``
    horizontal bonds ``(i, i+1 mod N)`` and no baths.
    """

    kind: str
    N: int
    M: int = 1

    def __post_init__(self):
        if self.kind not in ("chain", "lattice", "ring"):
            raise DomainError(f"unknown topology kind {self.kind!r}")
        if self.N < 2 and self.kind != "chain":
            raise DomainError(f"N must be >= 2, got {self.N}")
        if self.N < 1:
            raise DomainError(f"N must be >= 1, got {self.N}")
        if self.M < 1 or (self.kind != "lattice" and self.M != 1):
            raise DomainError(f"invalid row count M={self.M} for {self.kind}")

    @classmethod
    def chain(cls, N: int) -> "Topology":
        return cls("chain", N, 1)

    @classmethod
    def lattice(cls, M: int, N: int) -> "Topology":
        return cls("lattice", N, M)

    @classmethod
    def ring(cls, N: int) -> "Topology":
        return cls("ring", N, 1)

    @property
    def n_sites(self) -> int:
        return self.M * self.N

    @property
    def has_baths(self) -> bool:
        return self.kind != "ring"

    @property
    def rows(self) -> int:
        return self.M

    def site(self, row: int, col: int) -> int:
        return row * self.N + col

    def bonds(self) -> "BondTable":
        return _build_bonds(self)

    def count_bonds(self) -> dict:
        kinds = self.bonds().kind
        return {name: int(np.sum(kinds == k)) for k, name in enumerate(BOND_KIND_NAMES)}


@dataclass(frozen=True)
class BondTable:
    """Flat arrays describing every bond; ``site_b`` is -1 for bath bonds."""

    site_a: np.ndarray
    site_b: np.ndarray
    kind: np.ndarray
    incident: np.ndarray  # (n_sites, max_degree), padded with -1

    @property
    def n_bonds(self) -> int:
        return len(self.kind)


def _build_bonds(top: Topology) -> BondTable:
    a, b, k = [], [], []
    N = top.N
    if top.kind == "ring":
        for i in range(N):
            a.append(i)
            b.append((i + 1) % N)
            k.append(INTERIOR)
    else:
        for r in range(top.M):
            a.append(top.site(r, 0)); b.append(-1); k.append(LEFT_BATH)
            for c in range(N - 1):
                a.append(top.site(r, c)); b.append(top.site(r, c + 1)); k.append(INTERIOR)
            a.append(top.site(r, N - 1)); b.append(-1); k.append(RIGHT_BATH)
        for r in range(top.M - 1):
            for c in range(N):
                a.append(top.site(r, c)); b.append(top.site(r + 1, c)); k.append(VERTICAL)
    site_a = np.array(a, dtype=np.int64)
    site_b = np.array(b, dtype=np.int64)
    kind = np.array(k, dtype=np.int64)
    touching = [[] for _ in range(top.n_sites)]
    for bond, (s, t) in enumerate(zip(a, b)):
        touching[s].append(bond)
        if t >= 0 and t != s:
            touching[t].append(bond)
    width = max(len(t) for t in touching)
    incident = np.full((top.n_sites, width), -1, dtype=np.int64)
    for s, bonds in enumerate(touching):
        incident[s, :len(bonds)] = bonds
    return BondTable(site_a, site_b, kind, incident)


@dataclass
class SystemState:
    topology: Topology
    energies: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.energies = np.array(self.energies, dtype=np.float64)
        if self.energies.shape != (self.topology.n_sites,):
            raise DomainError(
                f"expected {self.topology.n_sites} energies, got shape {self.energies.shape}")
        if np.any(self.energies < 0) or not np.all(np.isfinite(self.energies)):
            raise DomainError("energies must be finite and non-negative")
        if self.time < 0:
            raise DomainError("time must be non-negative")

    @classmethod
    def uniform(cls, topology: Topology, energy: float) -> "SystemState":
        return cls(topology, np.full(topology.n_sites, float(energy)))

    def copy(self) -> "SystemState":
        return SystemState(self.topology, self.energies.copy(), self.time)

    @property
    def total_energy(self) -> float:
        return float(self.energies.sum())


def generator_drift_linear(coeffs: Sequence[float], state: SystemState,
                           baths: Optional[BathSpec], spec: RateSpec) -> float:
    """Generator applied to ``f(E) = sum(c * E)``, evaluated in closed form.

    A pair exchange moves the pair to its mean split, so each bond contributes
    ``R * ((c_a + c_b) * S / 2 - c_a E_a - c_b E_b)``.  A bath exchange sends
    ``E`` to ``p (E + x)`` with mean ``(E + T) / 2``.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    E = state.energies
    if c.shape != E.shape:
        raise DomainError(f"need one coefficient per site ({E.size}), got {c.size}")
    top = state.topology
    if top.has_baths and baths is None:
        raise DomainError("bath temperatures required for a topology with baths")
    table = top.bonds()
    drift = 0.0
    for a, b, kind in zip(table.site_a, table.site_b, table.kind):
        if kind == LEFT_BATH or kind == RIGHT_BATH:
            T = baths.T_left if kind == LEFT_BATH else baths.T_right
            drift += boundary_rate(spec, T, E[a]) * c[a] * ((E[a] + T) / 2 - E[a])
        else:
            s = E[a] + E[b]
            drift += pair_rate(spec, E[a], E[b]) * ((c[a] + c[b]) * s / 2 - c[a] * E[a] - c[b] * E[b])
    return float(drift)
