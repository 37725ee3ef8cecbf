"""Analysis mathematics for thermal-equilibrium and LTE checks.

Gamma distributions are parametrized by shape ``alpha`` and scale ``theta``
(mean ``alpha * theta``).  The equilibrium marginal of the sum-sqrt model is
exponential with mean ``T`` (shape 1, scale ``T``); that of the
harmonic-sqrt model is shape 1/2, scale ``T`` (mean ``T / 2``).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize, special

from .model import AnalysisError, DomainError, RateKind

SQRT_PI = math.sqrt(math.pi)

# bins used for single-site goodness of fit: [0, 0.2), ..., [5.8, 6.0), [6.0, inf)
GOF_EDGES = np.append(np.round(np.arange(0.0, 6.0 + 1e-9, 0.2), 10), np.inf)
# bins used for the nearest-neighbour independence table: 0, 0.1, ..., 1.6, inf
INDEPENDENCE_EDGES = np.append(np.round(np.arange(0.0, 1.6 + 1e-9, 0.1), 10), np.inf)


class FitError(AnalysisError):
    """Maximum-likelihood fitting failed on degenerate data."""


class QuadratureError(AnalysisError):
    """Adaptive quadrature did not reach its tolerance."""


def _kind(kind) -> RateKind:
    kind = RateKind.parse(kind)
    if kind is RateKind.CAPPED_MIN_SQRT:
        raise DomainError("closed-form equilibrium results exist only for sum-sqrt and harmonic-sqrt")
    return kind


def _check_temps(*temps):
    for T in temps:
        if not (T > 0 and math.isfinite(T)):
            raise DomainError(f"temperatures must be positive, got {T}")


# ---------------------------------------------------------------------------
# equilibrium fluxes

def theoretical_flux(kind, T: float, T_hat: float) -> float:
    """Mean right-to-left flux across a bond whose two sites carry independent
    equilibrium marginals at temperatures ``T`` (left) and ``T_hat`` (right)."""
    kind = _kind(kind)
    _check_temps(T, T_hat)
    a, b = math.sqrt(T), math.sqrt(T_hat)
    if kind is RateKind.SUM_SQRT:
        poly = 3 * T * T + 9 * T * a * b + 11 * T * T_hat + 9 * a * b * T_hat + 3 * T_hat * T_hat
        return SQRT_PI * poly / (8 * (a + b) ** 3) * (T_hat - T)
    return a * b * (T + 3 * a * b + T_hat) / (4 * SQRT_PI * (a + b) ** 3) * (T_hat - T)


def equilibrium_shape(kind) -> float:
    return 1.0 if _kind(kind) is RateKind.SUM_SQRT else 0.5


def flux_quadrature(kind, T: float, T_hat: float, epsrel: float = 1e-10) -> float:
    """The same mean flux by adaptive 2-D quadrature of its defining integral.

    Coordinates ``v = x + y`` and ``u = y - x = v cos(2 phi)`` (so
    ``x = v sin^2 phi``, ``y = v cos^2 phi``) absorb the ``x^{-1/2}``,
    ``y^{-1/2}`` singularities of the shape-1/2 densities into the Jacobian
    ``2 v sin(phi) cos(phi)``.
    """
    kind = _kind(kind)
    _check_temps(T, T_hat)

    if kind is RateKind.SUM_SQRT:
        def integrand(phi, v):
            s, c = math.sin(phi), math.cos(phi)
            x, y = v * s * s, v * c * c
            dens = math.exp(-x / T - y / T_hat) / (T * T_hat)
            return 0.5 * (y - x) * math.sqrt(v) * dens * 2 * v * s * c
    else:
        norm = 2.0 / (math.pi * math.sqrt(T * T_hat))
        def integrand(phi, v):
            s, c = math.sin(phi), math.cos(phi)
            x, y = v * s * s, v * c * c
            # rate sqrt(xy/v) = sqrt(v) s c; density product times Jacobian is smooth
            return 0.5 * (y - x) * math.sqrt(v) * s * c * norm * math.exp(-x / T - y / T_hat)

    scale = max(T, T_hat)
    total, err = 0.0, 0.0
    # split the radial range so the exponential tail is resolved
    cuts = [0.0, 2 * scale, 8 * scale, 30 * scale, 80 * scale, math.inf]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                val, e = integrate.dblquad(integrand, lo, hi, 0.0, math.pi / 2,
                                           epsabs=1e-15, epsrel=epsrel)
                total += val
                err += e
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from exc
    return total


def flux_monte_carlo(kind, T: float, T_hat: float, draws: int,
                     rng: np.random.Generator, chunk: int = 1_000_000) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``(y - x) / 2 * R(x, y)``."""
    kind = _kind(kind)
    shape = equilibrium_shape(kind)
    s1 = s2 = 0.0
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        x = rng.gamma(shape, T, n)
        y = rng.gamma(shape, T_hat, n)
        if kind is RateKind.SUM_SQRT:
            r = np.sqrt(x + y)
        else:
            r = np.sqrt(x * y / (x + y))
        vals = 0.5 * (y - x) * r
        s1 += vals.sum()
        s2 += np.dot(vals, vals)
        done += n
    mean = s1 / draws
    return mean, math.sqrt(max(s2 / draws - mean * mean, 0.0) / draws)


# ---------------------------------------------------------------------------
# invariance of the product measure

def equilibrium_density(kind, T: float, e: float) -> float:
    kind = _kind(kind)
    if kind is RateKind.SUM_SQRT:
        return math.exp(-e / T) / T
    return math.exp(-e / T) / math.sqrt(math.pi * T * e)


def pair_balance_residual(kind, T: float, e_left: float, e_right: float,
                          T_right: Optional[float] = None) -> float:
    """Inflow minus outflow density at ``(e_left, e_right)`` for one bond.

    Outflow is ``R(a, b) rho(a) rho(b)``.  Inflow integrates over all pre-states
    with the same pair sum ``S``: ``int_0^S R(x, S-x) rho(x) rho(S-x) dx / S``.
    Passing ``T_right`` weights the right site with a different temperature,
    which is not stationary and gives a non-zero residual.
    """
    kind = _kind(kind)
    T_r = T if T_right is None else T_right
    _check_temps(T, T_r)
    if not (e_left > 0 and e_right > 0):
        raise DomainError("energies must be positive")
    S = e_left + e_right
    rate = (lambda x, y: math.sqrt(x + y)) if kind is RateKind.SUM_SQRT \
        else (lambda x, y: math.sqrt(x * y / (x + y)))

    if kind is RateKind.SUM_SQRT:
        def inflow(x):
            return rate(x, S - x) * equilibrium_density(kind, T, x) * equilibrium_density(kind, T_r, S - x)
        lo, hi = 0.0, S
    else:
        # x = S sin^2 t removes the endpoint singularities; dx = 2 S sin t cos t dt
        def inflow(t):
            s, c = math.sin(t), math.cos(t)
            x, y = S * s * s, S * c * c
            # rate sqrt(S) s c times densities 1/(pi sqrt(T T_r) S s c) times Jacobian
            return 2 * math.sqrt(S) * s * c * math.exp(-x / T - y / T_r) / (math.pi * math.sqrt(T * T_r))
        lo, hi = 0.0, math.pi / 2
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, _ = integrate.quad(inflow, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from exc
    enter = value / S
    leave = rate(e_left, e_right) * equilibrium_density(kind, T, e_left) \
        * equilibrium_density(kind, T_r, e_right)
    return enter - leave


def ring_marginal_law(kind, n_sites: int) -> tuple[float, float]:
    """Beta parameters of ``E_i / S`` on an isolated ring in equilibrium.

    The product measure conditioned on its sum is Dirichlet with the marginal
    shape in every coordinate, so one coordinate is Beta(a, (n - 1) a).
    """
    a = equilibrium_shape(kind)
    return a, (n_sites - 1) * a


# ---------------------------------------------------------------------------
# Gamma fitting

@dataclass(frozen=True)
class GammaFit:
    alpha: float
    theta: float
    n: int = 0
    iterations: int = 0

    @property
    def mean(self) -> float:
        return self.alpha * self.theta

    def cdf(self, x):
        return special.gammainc(self.alpha, np.asarray(x, dtype=np.float64) / self.theta)

    def loglik_stats(self, n: int, mean: float, mean_log: float) -> float:
        a, t = self.alpha, self.theta
        return n * ((a - 1) * mean_log - mean / t - special.gammaln(a) - a * math.log(t))


@dataclass(frozen=True)
class SampleStats:
    """Sufficient statistics of a positive sample for Gamma fitting."""

    n: int
    mean: float
    mean_sq: float
    mean_log: float

    @classmethod
    def of(cls, samples) -> "SampleStats":
        x = np.asarray(samples, dtype=np.float64).ravel()
        if np.any(x <= 0) or not np.all(np.isfinite(x)):
            raise DomainError("Gamma fitting needs finite, strictly positive samples")
        return cls(x.size, float(x.mean()), float(np.mean(x * x)), float(np.mean(np.log(x))))

    @property
    def variance(self) -> float:
        return max(self.mean_sq - self.mean * self.mean, 0.0)


def gamma_mle(samples=None, *, stats: Optional[SampleStats] = None, min_samples: int = 100,
              tol: float = 1e-8, max_iter: int = 100) -> GammaFit:
    """Maximum-likelihood shape and scale.

    Newton iteration on ``log(a) - digamma(a) = log(mean) - mean(log x)``,
    started from the moment estimate ``mean^2 / variance``; the scale is then
    ``mean / a``.  Either raw ``samples`` or precomputed ``stats``.
    """
    st = stats if stats is not None else SampleStats.of(samples)
    if st.n < min_samples:
        raise FitError(f"need at least {min_samples} samples, got {st.n}")
    s = math.log(st.mean) - st.mean_log
    var = st.variance
    if not (s > 1e-14 and var > 0):
        raise FitError("samples have (numerically) zero spread")
    a = st.mean * st.mean / var
    for it in range(1, max_iter + 1):
        f = math.log(a) - special.digamma(a) - s
        fp = 1.0 / a - special.polygamma(1, a)
        step = f / fp
        new = a - step
        if new <= 0:
            new = a / 2
        if abs(new - a) <= tol * new:
            a = new
            break
        a = new
    else:
        raise FitError(f"Newton iteration did not converge (alpha={a})")
    return GammaFit(float(a), float(st.mean / a), st.n, it)


# ---------------------------------------------------------------------------
# chi-square machinery

def chi2_cdf(x: float, dof: float) -> float:
    return float(special.gammainc(dof / 2.0, max(x, 0.0) / 2.0))


def chi2_quantile(dof: int, q: float, tol: float = 1e-10) -> float:
    """Inverse chi-square CDF by bracketing root-finding on the regularized
    lower incomplete gamma function."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {q}")
    if dof < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {dof}")
    hi = max(1.0, float(dof))
    while chi2_cdf(hi, dof) < q:
        hi *= 2.0
    return optimize.brentq(lambda x: chi2_cdf(x, dof) - q, 0.0, hi, xtol=tol, maxiter=500)


def wilson_hilferty_quantile(dof: int, q: float) -> float:
    z = math.sqrt(2) * special.erfinv(2 * q - 1)
    c = 2.0 / (9.0 * dof)
    return dof * (1 - c + z * math.sqrt(c)) ** 3


@dataclass
class ChiSquareReport:
    statistic: float
    dof: int
    threshold: float
    passed: bool
    counts: np.ndarray
    expected: np.ndarray
    level: float = 0.95
    merged: bool = False
    secondary_dof: Optional[int] = None
    secondary_threshold: Optional[float] = None

    @property
    def pass_(self) -> bool:
        return self.passed


def merge_sparse_bins(expected: np.ndarray, minimum: float = 5.0) -> list:
    """Group adjacent bins left to right until each group's expectation is at
    least ``minimum``; a short trailing group joins its predecessor."""
    groups, current, acc = [], [], 0.0
    for i, e in enumerate(expected):
        current.append(i)
        acc += e
        if acc >= minimum:
            groups.append(current)
            current, acc = [], 0.0
    if current:
        if not groups:
            raise AnalysisError("total expected count below the minimum per bin")
        groups[-1].extend(current)
    return groups


def bin_counts(samples, edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.float64)
    x = np.asarray(samples, dtype=np.float64).ravel()
    idx = np.searchsorted(edges, x, side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 2)
    return np.bincount(idx[x >= edges[0]], minlength=len(edges) - 1)


def _check_edges(edges):
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 3 or np.any(np.diff(edges) <= 0):
        raise DomainError("edges must be strictly increasing with at least two bins")
    if not np.isinf(edges[-1]):
        raise DomainError("last edge must be +inf")
    return edges


def chisq_gof_counts(counts, probs, level: float = 0.95, fitted_params: int = 0,
                     min_expected: float = 5.0) -> ChiSquareReport:
    """Pearson goodness of fit of bin ``counts`` against bin probabilities.

    Degrees of freedom are ``bins - 1`` (after merging sparse bins); when
    ``fitted_params`` is given, the ``bins - 1 - fitted_params`` threshold is
    reported alongside as the secondary column.
    """
    counts = np.asarray(counts, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    n = counts.sum()
    expected = n * probs
    groups = merge_sparse_bins(expected, min_expected)
    if len(groups) < 2:
        raise AnalysisError("fewer than two bins remain after merging")
    obs_g = np.array([counts[g].sum() for g in groups])
    exp_g = np.array([expected[g].sum() for g in groups])
    stat = float(np.sum((obs_g - exp_g) ** 2 / exp_g))
    dof = len(groups) - 1
    thr = chi2_quantile(dof, level)
    sec_dof = dof - fitted_params if fitted_params else None
    sec_thr = chi2_quantile(sec_dof, level) if sec_dof and sec_dof >= 1 else None
    return ChiSquareReport(stat, dof, thr, stat < thr, obs_g, exp_g, level,
                           len(groups) != len(counts), sec_dof, sec_thr)


def chisq_gof(samples, fit: GammaFit, edges=GOF_EDGES, level: float = 0.95,
              fitted_params: int = 2) -> ChiSquareReport:
    edges = _check_edges(edges)
    return chisq_gof_counts(bin_counts(samples, edges), np.diff(fit.cdf(edges)),
                            level, fitted_params)


def _group_marginal(counts: np.ndarray, minimum: float) -> list:
    return merge_sparse_bins(counts, minimum)


def independence_table(left, right, edges=INDEPENDENCE_EDGES) -> np.ndarray:
    edges = _check_edges(edges)
    nb = len(edges) - 1
    i = np.clip(np.searchsorted(edges, np.asarray(left, dtype=np.float64), side="right") - 1, 0, nb - 1)
    j = np.clip(np.searchsorted(edges, np.asarray(right, dtype=np.float64), side="right") - 1, 0, nb - 1)
    return np.bincount(i * nb + j, minlength=nb * nb).reshape(nb, nb)


def independence_chisq_table(table, level: float = 0.95, min_expected: float = 5.0) -> ChiSquareReport:
    """Pearson independence statistic of a contingency table.

    Sparse marginal bins are merged with neighbours until every cell has an
    expected count of at least ``min_expected`` (row and column totals at
    least ``sqrt(min_expected * n)``); degrees of freedom follow the merged
    shape.
    """
    table = np.asarray(table, dtype=np.float64)
    n = table.sum()
    if n <= 0:
        raise AnalysisError("empty table")
    floor = math.sqrt(min_expected * n)
    rows = _group_marginal(table.sum(axis=1), floor)
    cols = _group_marginal(table.sum(axis=0), floor)
    merged = np.array([[table[np.ix_(r, c)].sum() for c in cols] for r in rows])
    if merged.shape[0] < 2 or merged.shape[1] < 2:
        raise AnalysisError("fewer than two categories remain after merging")
    o_i = merged.sum(axis=1)
    o_j = merged.sum(axis=0)
    expected = np.outer(o_i, o_j) / n
    stat = float(np.sum((merged - expected) ** 2 / expected))
    dof = (merged.shape[0] - 1) * (merged.shape[1] - 1)
    thr = chi2_quantile(dof, level)
    return ChiSquareReport(stat, dof, thr, stat < thr, merged, expected, level,
                           merged.shape != table.shape)


def independence_chisq(left, right, edges=INDEPENDENCE_EDGES, level: float = 0.95,
                       min_samples: int = 0) -> ChiSquareReport:
    if len(left) != len(right):
        raise DomainError("paired samples must have equal length")
    if len(left) < min_samples:
        raise AnalysisError(f"need at least {min_samples} pairs, got {len(left)}")
    return independence_chisq_table(independence_table(left, right, edges), level)


@dataclass(frozen=True)
class Extrapolation:
    intercept: float
    slope: float
    intercept_ci: tuple
    sqrt_threshold: float
    passed: bool


def extrapolate_chisq(points: Sequence[tuple], threshold: Optional[float] = None,
                      dof: int = 256, level: float = 0.95, ci_level: float = 0.95) -> Extrapolation:
    """Least-squares line of ``sqrt(chi2_N)`` against ``1/N``; the intercept
    estimates the infinite-chain score and is compared with ``sqrt(threshold)``."""
    pts = sorted((float(N), float(c)) for N, c in points)
    if len({N for N, _ in pts}) < 3:
        raise AnalysisError("need at least three distinct chain lengths")
    x = np.array([1.0 / N for N, _ in pts])
    y = np.sqrt([c for _, c in pts])
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof_fit = len(x) - 2
    if dof_fit > 0:
        s2 = float(resid @ resid) / dof_fit
        cov = s2 * np.linalg.inv(A.T @ A)
        half = float(special.stdtrit(dof_fit, 0.5 + ci_level / 2)) * math.sqrt(cov[0, 0])
    else:
        half = math.nan
    thr = chi2_quantile(dof, level) if threshold is None else threshold
    intercept = float(coef[0])
    return Extrapolation(intercept, float(coef[1]), (intercept - half, intercept + half),
                         math.sqrt(thr), intercept < math.sqrt(thr))


# ---------------------------------------------------------------------------
# constant-flux profile prediction

@dataclass(frozen=True)
class TemperatureProfile:
    kind: RateKind
    temperatures: np.ndarray  # interior sites only
    flux: float

    @property
    def mean_energy(self) -> np.ndarray:
        return self.temperatures * equilibrium_shape(self.kind)


def temperature_from_mean(kind, mean_energy: float) -> float:
    return mean_energy / equilibrium_shape(kind)


def _next_temperature(kind, T: float, J: float, rtol: float) -> float:
    """Unique ``T' >= T`` with ``theoretical_flux(T, T') = J`` (``J >= 0``)."""
    if J == 0:
        return T
    lo, hi = T, 2 * T
    while theoretical_flux(kind, T, hi) < J:
        lo, hi = hi, 2 * hi
        if hi > 1e12 * T:
            return math.inf
    return optimize.brentq(lambda u: theoretical_flux(kind, T, u) - J, lo, hi,
                           xtol=1e-300, rtol=rtol, maxiter=500)


def _shoot(kind, T_first: float, J: float, steps: int, rtol: float) -> list:
    temps = [T_first]
    for _ in range(steps):
        nxt = _next_temperature(kind, temps[-1], J, rtol)
        temps.append(nxt)
        if not math.isfinite(nxt):
            temps.extend([math.inf] * (steps + 1 - len(temps)))
            break
    return temps


def predicted_profile(kind, T_left_anchor: float, T_right_anchor: float, n: int,
                      rtol: float = 1e-10, anchor_rtol: float = 1e-8) -> TemperatureProfile:
    """Interior temperatures between two anchors carrying one common flux.

    Anchors are temperature parameters (convert mean energies with
    ``temperature_from_mean``).  Shooting: for a trial flux ``J`` each next
    temperature is the root of ``theoretical_flux(T_i, T_{i+1}) = J``;
    ``J`` is bisected until the ``n + 1``-th step lands on the right anchor.
    A decreasing profile is solved mirrored.
    """
    kind = _kind(kind)
    _check_temps(T_left_anchor, T_right_anchor)
    if n < 0:
        raise DomainError("number of interior sites must be non-negative")
    if T_left_anchor == T_right_anchor:
        return TemperatureProfile(kind, np.full(n, float(T_left_anchor)), 0.0)
    if T_left_anchor > T_right_anchor:
        mirror = predicted_profile(kind, T_right_anchor, T_left_anchor, n, rtol, anchor_rtol)
        return TemperatureProfile(kind, mirror.temperatures[::-1].copy(), -mirror.flux)

    lo, hi = 0.0, theoretical_flux(kind, T_left_anchor, T_right_anchor)

    def landing(J):
        return _shoot(kind, T_left_anchor, J, n + 1, rtol)[-1]

    if not landing(hi) >= T_right_anchor:
        raise AnalysisError(
            f"flux bracket [0, {hi:.6g}] does not reach the right anchor "
            f"(landing {landing(hi):.6g} < {T_right_anchor:.6g})")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        end = landing(mid)
        if end >= T_right_anchor:
            hi = mid
        else:
            lo = mid
        if abs(end - T_right_anchor) <= anchor_rtol * T_right_anchor and hi - lo <= 1e-12 * hi:
            break
    J = 0.5 * (lo + hi)
    temps = _shoot(kind, T_left_anchor, J, n + 1, rtol)
    if abs(temps[-1] - T_right_anchor) > anchor_rtol * T_right_anchor:
        raise AnalysisError(f"shooting missed the right anchor: {temps[-1]} vs {T_right_anchor}")
    return TemperatureProfile(kind, np.array(temps[1:-1]), J)


@dataclass(frozen=True)
class OriginFit:
    slope: float
    r2: float
    r2_uncentered: float


def origin_fit(x, y) -> OriginFit:
    """Least-squares line ``y = slope * x`` through the origin.

    ``r2`` is the centered coefficient ``1 - SS_res / sum((y - mean y)^2)``;
    the uncentered form, which is always larger, is kept for reference.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or x.shape != y.shape:
        raise AnalysisError("need at least two paired points")
    slope = float(x @ y / (x @ x))
    ss_res = float(np.sum((y - slope * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    return OriginFit(slope, r2, 1.0 - ss_res / float(y @ y))
