import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize
from scipy import stats as sps

from heatchain import stats
from heatchain.model import AnalysisError, DomainError, RateKind

SUM, HARM = RateKind.SUM_SQRT, RateKind.HARMONIC_SQRT
temp = st.floats(min_value=0.05, max_value=20.0)


@given(temp, temp, st.sampled_from([SUM, HARM]))
def test_flux_antisymmetric(T, U, kind):
    assert stats.theoretical_flux(kind, T, U) == pytest.approx(-stats.theoretical_flux(kind, U, T),
                                                               rel=1e-12, abs=1e-300)
    assert stats.theoretical_flux(kind, T, T) == 0.0


def test_flux_domain():
    with pytest.raises(DomainError):
        stats.theoretical_flux(SUM, 0.0, 1.0)
    with pytest.raises(DomainError):
        stats.theoretical_flux(RateKind.CAPPED_MIN_SQRT, 1.0, 2.0)


def _plain_quadrature(kind, T, U):
    """Direct (x, y) double integral, a route independent of the polar split."""
    a = stats.equilibrium_shape(kind)

    def f(y, x):
        r = math.sqrt(x + y) if kind is SUM else math.sqrt(x * y / (x + y))
        return 0.5 * (y - x) * r * sps.gamma.pdf(x, a, scale=T) * sps.gamma.pdf(y, a, scale=U)

    if kind is SUM:
        val, _ = integrate.dblquad(f, 0, 60 * T, 0, 60 * U, epsrel=1e-10)
        return val
    # x = s^2, y = t^2 removes the inverse square-root singularities
    g = lambda t, s: f(t * t, s * s) * 4 * s * t
    val, _ = integrate.dblquad(g, 0, math.sqrt(60 * T), 0, math.sqrt(60 * U), epsrel=1e-10)
    return val


@pytest.mark.parametrize("kind", [SUM, HARM])
def test_flux_three_routes(kind):
    closed = stats.theoretical_flux(kind, 1.0, 2.0)
    if kind is SUM:
        assert closed == pytest.approx(1.1838, abs=1e-4)
    assert stats.flux_quadrature(kind, 1.0, 2.0) == pytest.approx(closed, rel=1e-6)
    assert _plain_quadrature(kind, 1.0, 2.0) == pytest.approx(closed, rel=1e-6)
    mean, se = stats.flux_monte_carlo(kind, 1.0, 2.0, 10_000_000, np.random.default_rng(7))
    assert abs(mean - closed) <= 3 * se


def test_flux_quadrature_random_pairs():
    rng = np.random.default_rng(2)
    for T, U in rng.uniform(0.5, 4.0, size=(5, 2)):
        for kind in (SUM, HARM):
            assert stats.flux_quadrature(kind, T, U) == pytest.approx(
                stats.theoretical_flux(kind, T, U), rel=1e-6)


def test_balance_examples():
    assert abs(stats.pair_balance_residual(SUM, 1.0, 0.7, 1.9)) <= 1e-8
    assert abs(stats.pair_balance_residual(HARM, 2.0, 0.3, 0.4)) <= 1e-8
    # wrong stationary weights (means 1 and 2) are visibly unbalanced
    assert abs(stats.pair_balance_residual(SUM, 1.0, 0.7, 1.9, T_right=2.0)) > 1e-3
    assert abs(stats.pair_balance_residual(HARM, 1.0, 0.7, 1.9, T_right=2.0)) > 1e-3


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 8.0), st.floats(0.01, 8.0), st.sampled_from([0.5, 1.0, 2.0]),
       st.sampled_from([SUM, HARM]))
def test_balance_vanishes(a, b, T, kind):
    assert abs(stats.pair_balance_residual(kind, T, a, b)) <= 1e-8


def test_ring_law_matches_conditioned_product():
    # oracle: draw the product measure and normalize by the sum
    rng = np.random.default_rng(4)
    for kind in (SUM, HARM):
        shape = stats.equilibrium_shape(kind)
        g = rng.gamma(shape, 1.7, size=(200_000, 8))
        frac = g[:, 0] / g.sum(axis=1)
        a, b = stats.ring_marginal_law(kind, 8)
        assert sps.kstest(frac, sps.beta(a, b).cdf).pvalue > 0.01


def test_gamma_mle_examples():
    rng = np.random.default_rng(10)
    fit = stats.gamma_mle(rng.exponential(1.0, 1_000_000))
    assert 0.99 <= fit.alpha <= 1.01 and 0.98 <= fit.theta <= 1.02
    fit = stats.gamma_mle(rng.gamma(0.5, 2.0, 1_000_000))
    assert 0.495 <= fit.alpha <= 0.505 and 1.96 <= fit.theta <= 2.04
    assert fit.mean == pytest.approx(fit.alpha * fit.theta)


def test_gamma_mle_matches_scipy():
    x = np.random.default_rng(11).gamma(2.3, 0.7, 50_000)
    ours = stats.gamma_mle(x)
    a, _, scale = sps.gamma.fit(x, floc=0)
    assert ours.alpha == pytest.approx(a, rel=1e-5)
    assert ours.theta == pytest.approx(scale, rel=1e-5)


def test_gamma_mle_errors_and_likelihood():
    with pytest.raises(stats.FitError):
        stats.gamma_mle(np.full(500, 2.0))
    with pytest.raises(DomainError):
        stats.gamma_mle(np.r_[np.ones(200), -1.0])
    with pytest.raises(stats.FitError):
        stats.gamma_mle(np.arange(1.0, 10.0))
    x = np.random.default_rng(12).gamma(0.8, 1.5, 10_000)
    fit = stats.gamma_mle(x)
    s = stats.SampleStats.of(x)
    a0 = s.mean ** 2 / s.variance
    assert fit.loglik_stats(s.n, s.mean, s.mean_log) >= \
        stats.GammaFit(a0, s.mean / a0, s.n, 0).loglik_stats(s.n, s.mean, s.mean_log)


def test_gamma_mle_error_shrinks():
    rng = np.random.default_rng(13)
    errs = []
    for n in (10_000, 100_000, 1_000_000):
        errs.append(np.mean([abs(stats.gamma_mle(rng.gamma(0.5, 2.0, n)).alpha - 0.5)
                             for _ in range(8)]))
    assert errs[0] > errs[1] > errs[2]
    # roughly 1/sqrt(n): a factor ~3.2 per decade
    assert 1.5 < errs[0] / errs[1] < 7 and 1.5 < errs[1] / errs[2] < 7


def _bisect_quantile(dof, q):
    lo, hi = 0.0, 10.0 * dof + 100
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if sps.chi2.cdf(mid, dof) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("dof,approx", [(1, 3.8415), (30, 43.773), (256, 294.32)])
def test_chi2_quantile(dof, approx):
    ours = stats.chi2_quantile(dof, 0.95)
    assert ours == pytest.approx(_bisect_quantile(dof, 0.95), abs=1e-8)
    assert ours == pytest.approx(sps.chi2.ppf(0.95, dof), abs=1e-8)
    assert ours == pytest.approx(approx, abs=1e-3)
    if dof >= 30:
        assert abs(ours - stats.wilson_hilferty_quantile(dof, 0.95)) < 0.5


def test_chi2_quantile_domain():
    for q in (0.0, 1.0, -0.1):
        with pytest.raises(DomainError):
            stats.chi2_quantile(5, q)
    with pytest.raises(DomainError):
        stats.chi2_quantile(0, 0.5)


def test_gof_perfect_counts():
    fit = stats.GammaFit(1.0, 1.0, 0, 0)
    probs = np.diff(fit.cdf(stats.GOF_EDGES))
    rep = stats.chisq_gof_counts(probs * 1e6, probs)
    assert rep.statistic == pytest.approx(0.0, abs=1e-9) and rep.passed
    assert rep.dof == 30 and rep.threshold == pytest.approx(43.773, abs=1e-3)


def test_gof_merges_sparse_tail():
    fit = stats.GammaFit(1.0, 0.5, 0, 0)
    probs = np.diff(fit.cdf(stats.GOF_EDGES))
    rep = stats.chisq_gof_counts(np.round(probs * 1000), probs)
    assert rep.merged and rep.dof < 30
    assert np.all(rep.expected >= 5)
    assert stats.merge_sparse_bins(np.array([10, 1, 1, 10, 2])) == [[0], [1, 2, 3, 4]]


def test_gof_power_and_calibration():
    rng = np.random.default_rng(14)
    x = rng.gamma(0.5, 2.0, 1_000_000)
    wrong = stats.GammaFit(1.0, 1.0, 0, 0)
    assert stats.chisq_gof(x, wrong).statistic > 1e4
    passes = 0
    for _ in range(100):
        y = rng.gamma(1.0, 1.0, 1_000_000)
        passes += stats.chisq_gof(y, stats.gamma_mle(y)).passed
    assert passes >= 90


def test_independence_examples():
    rng = np.random.default_rng(15)
    oi = np.array([30, 50, 20])
    oj = np.array([40, 60])
    table = np.outer(oi, oj) * 100 / 100.0
    assert stats.independence_chisq_table(table).statistic == pytest.approx(0.0, abs=1e-9)
    x = rng.exponential(0.6, 200_000)
    rep = stats.independence_chisq(x, x)
    assert rep.statistic > 100 * rep.threshold
    with pytest.raises(AnalysisError):
        stats.independence_chisq(x[:10], x[:10], min_samples=100_000)


def test_independence_calibration():
    rng = np.random.default_rng(16)
    passes = 0
    for _ in range(50):
        a = rng.gamma(0.5, 1.2, 1_000_000)
        b = rng.gamma(0.5, 1.6, 1_000_000)
        passes += stats.independence_chisq(a, b).passed
    assert passes >= 45


def test_independence_table_matches_histogram2d():
    rng = np.random.default_rng(17)
    a, b = rng.exponential(0.5, 10_000), rng.exponential(0.7, 10_000)
    edges = stats.INDEPENDENCE_EDGES
    ref, _, _ = np.histogram2d(np.minimum(a, 100), np.minimum(b, 100),
                               bins=[np.r_[edges[:-1], 101], np.r_[edges[:-1], 101]])
    np.testing.assert_array_equal(stats.independence_table(a, b), ref)


def test_extrapolation():
    pts = [(10, (3 + 20 / 10) ** 2), (20, (3 + 20 / 20) ** 2), (40, (3 + 20 / 40) ** 2)]
    ex = stats.extrapolate_chisq(pts)
    assert ex.intercept == pytest.approx(3.0, abs=1e-12) and ex.slope == pytest.approx(20.0)
    assert ex.passed and ex.sqrt_threshold == pytest.approx(math.sqrt(294.3207), abs=1e-4)
    const = stats.extrapolate_chisq([(10, 49.0), (20, 49.0), (30, 49.0), (60, 49.0)])
    assert const.intercept == pytest.approx(7.0, abs=1e-12)
    with pytest.raises(AnalysisError):
        stats.extrapolate_chisq([(10, 1.0), (20, 2.0)])


def test_extrapolation_ci_covers_truth():
    rng = np.random.default_rng(18)
    Ns = np.array([20, 40, 60, 80, 120, 160])
    covered = 0
    for _ in range(200):
        y = 12.0 + 150.0 / Ns + rng.normal(0, 0.3, Ns.size)
        lo, hi = stats.extrapolate_chisq(list(zip(Ns, y ** 2))).intercept_ci
        covered += lo <= 12.0 <= hi
    assert covered >= 180


def test_origin_fit():
    fit = stats.origin_fit([1, 2, 3], [2, 4, 6])
    assert fit.slope == 2.0 and fit.r2 == 1.0
    assert stats.origin_fit([1, 2, 3], [2, 4.5, 6]).r2 < 1.0


def test_profile_flat_and_single_site():
    flat = stats.predicted_profile(SUM, 1.3, 1.3, 5)
    assert flat.flux == 0 and np.all(flat.temperatures == 1.3)
    one = stats.predicted_profile(SUM, 1.0, 2.0, 1)
    J = lambda T: stats.theoretical_flux(SUM, 1.0, T) - stats.theoretical_flux(SUM, T, 2.0)
    T2 = optimize.brentq(J, 1.0, 2.0, xtol=1e-14)
    assert one.temperatures[0] == pytest.approx(T2, rel=1e-8)
    assert one.flux == pytest.approx(stats.theoretical_flux(SUM, 1.0, T2), rel=1e-7)


def test_profile_mean_energy_conversion():
    prof = stats.predicted_profile(HARM, 1.0, 2.0, 3)
    np.testing.assert_allclose(prof.mean_energy, prof.temperatures / 2)
    assert stats.temperature_from_mean(HARM, 0.6) == 1.2
    assert stats.temperature_from_mean(SUM, 0.6) == 0.6


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.integers(1, 30), st.sampled_from([SUM, HARM]))
def test_profile_monotone_with_constant_flux(a, b, n, kind):
    prof = stats.predicted_profile(kind, a, b, n)
    T = np.r_[a, prof.temperatures, b]
    d = np.diff(T)
    if a == b:
        assert np.all(d == 0)
        return
    assert np.all(d > 0) if b > a else np.all(d < 0)
    fluxes = [stats.theoretical_flux(kind, T[i], T[i + 1]) for i in range(n + 1)]
    np.testing.assert_allclose(fluxes, prof.flux, rtol=1e-6)
