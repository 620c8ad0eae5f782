"""M-estimation, the G(c) variance factor, and the nu calculus."""

import numpy as np
import pytest

from mmdesign.exceptions import DegenerateDenominator, RankDeficient
from mmdesign.mestimate import (
    MAD_NORMAL_CONSTANT,
    C1Report,
    PsiSpec,
    c1_diagnostics,
    c2_diagnostic,
    fit,
    g_factor,
    nu_analysis,
    nu_calculus,
    sigma_m_squared,
)
from mmdesign.model import Design, DesignSpace, ModelSpec

from _oracles import adaptive_simpson, huber_location_mc

ALL_FAMILIES = [
    PsiSpec.huber(),
    PsiSpec.smoothed_huber(),
    PsiSpec.tanh_sign(),
    PsiSpec.identity(),
]

# Monte Carlo variance (times sample size) of the huber(1.345) location
# estimate on standard normal samples, from the vectorized IRLS oracle.
HUBER_LOCATION_MC_VALUE = 1.056717141507671


def _normal_pdf(u):
    return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)


def _noisy_instance(seed=17, n=60, degree=2, sd=0.3):
    model = ModelSpec.polynomial(degree)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    theta = np.array([1.0, -2.0, 0.5][: degree + 1])
    f = model.evaluate(x)
    y = f @ theta + sd * rng.standard_normal(n)
    return model, x, f, y, theta


# --------------------------------------------------------------------------
# score families


def test_psi_spec_rejects_bad_inputs():
    with pytest.raises(ValueError):
        PsiSpec("tukey", 1.0)
    with pytest.raises(ValueError):
        PsiSpec("huber", 0.0)
    with pytest.raises(ValueError):
        PsiSpec("huber", -1.0)
    with pytest.raises(ValueError):
        PsiSpec("huber", np.inf)


@pytest.mark.parametrize("spec", ALL_FAMILIES, ids=lambda s: s.family)
def test_psi_is_exactly_odd(spec):
    x = np.linspace(-10.0 * spec.tuning, 10.0 * spec.tuning, 4001)
    assert np.array_equal(spec.psi(-x), -spec.psi(x))


@pytest.mark.parametrize("spec", ALL_FAMILIES, ids=lambda s: s.family)
def test_psi_is_weakly_increasing_with_nonnegative_slope(spec):
    x = np.linspace(-10.0 * spec.tuning, 10.0 * spec.tuning, 4001)
    assert np.all(np.diff(spec.psi(x)) >= 0.0)
    assert np.all(spec.dpsi(x) >= 0.0)


@pytest.mark.parametrize("spec", ALL_FAMILIES, ids=lambda s: s.family)
def test_dpsi_matches_finite_differences(spec):
    x = np.linspace(-8.0, 8.0, 2001)
    if spec.family == "huber":
        # skip a neighbourhood of the kinks where no derivative exists
        keep = np.minimum(np.abs(x - spec.tuning), np.abs(x + spec.tuning)) > 1e-3
        x = x[keep]
    h = 1e-6
    fd = (spec.psi(x + h) - spec.psi(x - h)) / (2.0 * h)
    np.testing.assert_allclose(spec.dpsi(x), fd, atol=1e-8)


@pytest.mark.parametrize(
    "spec", [s for s in ALL_FAMILIES if s.twice_differentiable], ids=lambda s: s.family
)
def test_d2psi_matches_finite_differences_for_smooth_families(spec):
    x = np.linspace(-8.0, 8.0, 2001)
    h = 1e-6
    fd = (spec.dpsi(x + h) - spec.dpsi(x - h)) / (2.0 * h)
    np.testing.assert_allclose(spec.d2psi(x), fd, atol=1e-8)


def test_huber_is_flagged_not_twice_differentiable():
    assert not PsiSpec.huber().twice_differentiable
    assert PsiSpec.smoothed_huber().twice_differentiable
    assert PsiSpec.tanh_sign().twice_differentiable
    assert PsiSpec.identity().twice_differentiable


def test_smoothed_huber_is_bounded_by_its_tuning():
    spec = PsiSpec.smoothed_huber(1.345)
    x = np.linspace(-1e6, 1e6, 101)
    assert np.all(np.abs(spec.psi(x)) <= 1.345)
    assert abs(spec.psi(1e12)) == pytest.approx(1.345, rel=1e-9)


# --------------------------------------------------------------------------
# fitting


def test_identity_fit_equals_normal_equations():
    model, x, f, y, _ = _noisy_instance()
    res = fit(x, y, model, PsiSpec.identity())
    theta_ls = np.linalg.solve(f.T @ f, f.T @ y)
    assert res.converged
    np.testing.assert_allclose(res.theta_hat, theta_ls, rtol=0, atol=1e-10)


def test_huber_resists_a_gross_outlier():
    model, x, f, y, theta = _noisy_instance()
    y = y.copy()
    y[7] += 50.0
    res = fit(x, y, model, PsiSpec.huber(1.345))
    theta_ls = np.linalg.solve(f.T @ f, f.T @ y)
    assert res.converged
    assert np.linalg.norm(res.theta_hat - theta) < 0.25
    assert np.linalg.norm(res.theta_hat - theta) < 0.2 * np.linalg.norm(theta_ls - theta)


@pytest.mark.parametrize("spec", ALL_FAMILIES, ids=lambda s: s.family)
def test_estimating_equation_is_solved_at_convergence(spec):
    model, x, f, y, _ = _noisy_instance(seed=23)
    y = y.copy()
    y[3] -= 12.0
    res = fit(x, y, model, spec)
    assert res.converged
    assert res.eq_norm <= 1e-8 * np.sqrt(y.size)
    # the reported equation norm is recomputed from the reported solution
    u = res.final_residuals / res.sigma_hat
    assert res.eq_norm == pytest.approx(
        float(np.linalg.norm(f.T @ spec.psi(u))), rel=1e-12
    )


def test_sign_flip_equivariance_is_exact():
    model, x, _, y, _ = _noisy_instance(seed=29)
    y = y.copy()
    y[11] += 30.0
    res_pos = fit(x, y, model, PsiSpec.huber(1.345))
    res_neg = fit(x, -y, model, PsiSpec.huber(1.345))
    assert np.array_equal(res_neg.theta_hat, -res_pos.theta_hat)
    assert res_neg.sigma_hat == res_pos.sigma_hat


@pytest.mark.parametrize("seed,a", [(31, -2.5), (37, 0.04)])
def test_location_scale_equivariance(seed, a):
    model, x, f, y, _ = _noisy_instance(seed=seed)
    b = np.array([0.7, -0.3, 1.1])
    base = fit(x, y, model, PsiSpec.huber(1.345))
    moved = fit(x, a * y + f @ b, model, PsiSpec.huber(1.345))
    # the two runs stop at different iterates, so agreement is limited by the
    # parameter stopping tolerance, not machine precision
    np.testing.assert_allclose(
        moved.theta_hat, a * base.theta_hat + b, rtol=1e-8, atol=1e-10
    )
    assert moved.sigma_hat == pytest.approx(abs(a) * base.sigma_hat, rel=1e-7)


def test_exact_fit_collapses_scale_and_is_flagged():
    model, x, f, _, theta = _noisy_instance()
    y = f @ theta
    res = fit(x, y, model, PsiSpec.huber(1.345))
    assert res.scale_collapsed
    assert res.converged
    assert res.sigma_hat == 0.0
    np.testing.assert_allclose(res.theta_hat, theta, rtol=0, atol=1e-12)
    assert np.all(np.isnan(res.weights))


def test_constant_response_collapses_without_dividing_by_zero():
    model, x, _, _, _ = _noisy_instance()
    res = fit(x, np.zeros(x.shape[0]), model, PsiSpec.smoothed_huber())
    assert res.scale_collapsed
    assert res.sigma_hat == 0.0
    np.testing.assert_allclose(res.theta_hat, 0.0, atol=1e-14)


def test_all_observations_at_one_site_raises_rank_deficient():
    x = np.zeros((10, 1))
    y = np.arange(10.0)
    with pytest.raises(RankDeficient):
        fit(x, y, ModelSpec.polynomial(1), PsiSpec.huber())


def test_fit_rejects_mismatched_and_underdetermined_input():
    model, x, _, y, _ = _noisy_instance()
    with pytest.raises(ValueError):
        fit(x, y[:-1], model, PsiSpec.identity())
    with pytest.raises(ValueError):
        fit(x[:2], y[:2], model, PsiSpec.identity())


def test_budget_exhaustion_is_flagged_not_raised():
    model, x, _, y, _ = _noisy_instance(seed=23)
    y = y.copy()
    y[3] -= 12.0
    res = fit(x, y, model, PsiSpec.tanh_sign(), max_iters=1)
    assert not res.converged
    assert res.iterations == 1
    assert np.all(np.isfinite(res.theta_hat))
    assert res.sigma_hat > 0.0


def test_replicated_sites_are_accepted_as_rows():
    model = ModelSpec.polynomial(1)
    x = np.array([[-1.0]] * 5 + [[1.0]] * 5)
    rng = np.random.default_rng(41)
    y = 2.0 - 3.0 * x[:, 0] + 0.1 * rng.standard_normal(10)
    res = fit(x, y, model, PsiSpec.huber())
    assert res.converged
    np.testing.assert_allclose(res.theta_hat, [2.0, -3.0], atol=0.2)


# --------------------------------------------------------------------------
# the MAD constant and G(c)


def test_mad_normal_constant_value():
    assert MAD_NORMAL_CONSTANT == pytest.approx(0.674490, abs=1e-6)


def test_g_factor_endpoints():
    assert g_factor(0.0) == np.pi / 2.0
    assert g_factor(1e-6) == pytest.approx(np.pi / 2.0, abs=1e-4)
    assert g_factor(10.0) == pytest.approx(1.0, abs=1e-8)


def test_g_factor_is_continuous_across_the_series_switch():
    assert g_factor(1e-4 * (1 - 1e-9)) == pytest.approx(
        g_factor(1e-4 * (1 + 1e-9)), abs=1e-8
    )


def test_g_factor_monotone_decreasing_vectorized():
    c = np.linspace(0.0, 6.0, 301)
    g = g_factor(c)
    assert g.shape == c.shape
    assert np.all(np.diff(g) < 0.0)
    assert np.all(g >= 1.0)


def test_g_factor_frozen_value_at_default_tuning():
    assert g_factor(1.345) == pytest.approx(1.0526312911880376, rel=1e-13)


def test_g_factor_rejects_negative_and_nonfinite():
    with pytest.raises(ValueError):
        g_factor(-0.5)
    with pytest.raises(ValueError):
        g_factor(np.array([1.0, np.nan]))


def test_g_factor_matches_piecewise_quadrature():
    # independent Simpson oracle: split the moments at the kink so both
    # integrands are smooth, then assemble sigma_M^2 directly
    for c in (0.5, 1.0, 1.345, 2.0):
        m2 = 2.0 * (
            adaptive_simpson(lambda u: u * u * _normal_pdf(u), 0.0, c)
            + c * c * adaptive_simpson(_normal_pdf, c, 10.0)
        )
        m1 = 2.0 * adaptive_simpson(_normal_pdf, 0.0, c)
        assert g_factor(c) == pytest.approx(m2 / m1**2, abs=1e-10)


def test_g_factor_matches_location_monte_carlo():
    value = huber_location_mc(1.345, 20000, 100, 11)
    assert value == pytest.approx(HUBER_LOCATION_MC_VALUE, rel=1e-12)
    assert value == pytest.approx(g_factor(1.345), rel=0.01)


# --------------------------------------------------------------------------
# sigma_M^2


def test_sigma_m_squared_identity_is_error_variance():
    assert sigma_m_squared(PsiSpec.identity(), 2.0) == pytest.approx(4.0, rel=1e-14)
    # the identity score ignores its tuning constant
    assert sigma_m_squared(PsiSpec("identity", 7.3), 2.0) == pytest.approx(
        4.0, rel=1e-14
    )


def test_sigma_m_squared_huber_uses_the_closed_form():
    assert sigma_m_squared(PsiSpec.huber(1.0), 1.0) == pytest.approx(
        g_factor(1.0), rel=1e-14
    )
    assert sigma_m_squared(PsiSpec.huber(1.0), 3.0) == pytest.approx(
        9.0 * g_factor(1.0), rel=1e-14
    )


def test_sigma_m_squared_smooth_families_match_simpson_oracle():
    for spec in (PsiSpec.smoothed_huber(1.345), PsiSpec.tanh_sign(1.0)):
        m2 = 2.0 * adaptive_simpson(
            lambda u: spec.psi(u) ** 2 * _normal_pdf(u), 0.0, 20.0
        )
        m1 = 2.0 * adaptive_simpson(lambda u: spec.dpsi(u) * _normal_pdf(u), 0.0, 20.0)
        assert sigma_m_squared(spec, 1.0) == pytest.approx(m2 / m1**2, rel=1e-9)


def test_sigma_m_squared_exceeds_one_for_bounded_scores_on_normal_errors():
    for spec in (PsiSpec.huber(1.345), PsiSpec.smoothed_huber(1.345), PsiSpec.tanh_sign()):
        assert sigma_m_squared(spec, 1.0) > 1.0


def test_sigma_m_squared_empirical_plug_in_approaches_closed_form():
    rng = np.random.default_rng(5)
    sample = rng.standard_normal(400000)
    emp = sigma_m_squared(PsiSpec.huber(1.345), sample)
    assert emp == pytest.approx(g_factor(1.345), rel=0.01)


def test_sigma_m_squared_empirical_scales_with_the_sample():
    rng = np.random.default_rng(7)
    sample = rng.standard_normal(5000)
    base = sigma_m_squared(PsiSpec.smoothed_huber(), sample)
    scaled = sigma_m_squared(PsiSpec.smoothed_huber(), 2.0 * sample)
    assert scaled == pytest.approx(4.0 * base, rel=1e-10)


def test_sigma_m_squared_degenerate_denominator():
    # huber with a tiny corner: every standardized point sits on the flat
    # part, so E[psi'] = 0
    with pytest.raises(DegenerateDenominator):
        sigma_m_squared(PsiSpec.huber(0.05), np.array([-2.0, -1.0, 1.0, 2.0]))
    # all-zero sample: no spread, nothing to standardize by
    with pytest.raises(DegenerateDenominator):
        sigma_m_squared(PsiSpec.huber(1.0), np.zeros(4))


def test_sigma_m_squared_rejects_bad_inputs():
    with pytest.raises(ValueError):
        sigma_m_squared(PsiSpec.huber(), 0.0)
    with pytest.raises(ValueError):
        sigma_m_squared(PsiSpec.huber(), -1.0)
    with pytest.raises(ValueError):
        sigma_m_squared(PsiSpec.huber(), np.array([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        sigma_m_squared(PsiSpec.huber(), np.array([1.0, np.inf]))


# --------------------------------------------------------------------------
# nu calculus


def test_nu_calculus_least_squares_row_has_zero_gap():
    # at large c the huber score is effectively the identity: G = 1 and the
    # two nu values coincide
    row = nu_calculus(50.0, 1.0)
    assert row.g == pytest.approx(1.0, abs=1e-15)
    assert row.diff == pytest.approx(0.0, abs=1e-15)
    assert row.nu_ls == pytest.approx(0.5, rel=1e-14)


def test_nu_gap_at_the_median_limit():
    # c -> 0 with gamma^2 = G(0)^(-1/2) attains the largest possible gap
    row = nu_calculus(0.0, g_factor(0.0) ** -0.5)
    target = (np.sqrt(np.pi / 2.0) - 1.0) / (np.sqrt(np.pi / 2.0) + 1.0)
    assert row.gamma_sq == pytest.approx(0.7979, abs=1e-4)
    assert row.diff == pytest.approx(target, rel=1e-14)
    assert row.diff == pytest.approx(0.1124, abs=1e-4)
    assert row.nu_ls == pytest.approx(0.5562, abs=1e-4)
    assert row.nu_m == pytest.approx(0.4438, abs=1e-4)


def test_nu_gap_grows_as_the_tuning_constant_shrinks():
    c = np.logspace(-3.0, 1.0, 25)
    diffs = np.array([nu_calculus(ci, 0.8).diff for ci in c])
    assert np.all(np.diff(diffs) < 0.0)


def test_nu_gap_is_nonnegative_everywhere():
    table = nu_analysis(np.logspace(-3.0, 1.0, 12), np.logspace(-2.0, 2.0, 12))
    assert len(table.rows) == 144
    assert all(row.diff >= 0.0 for row in table.rows)
    assert all(row.nu_ls <= 1.0 and row.nu_m > 0.0 for row in table.rows)


def test_nu_analysis_localizes_the_maximizer_off_grid():
    table = nu_analysis(np.logspace(-3.0, 1.0, 40), np.logspace(-2.0, 2.0, 40))
    best = table.best
    # the best c is the smallest offered; gamma^2 is refined between grid nodes
    assert best.c == pytest.approx(1e-3, rel=1e-12)
    assert best.gamma_sq == pytest.approx(0.7979, abs=5e-3)
    assert best.diff == pytest.approx(0.1124, abs=5e-4)
    assert best.nu_ls == pytest.approx(0.5562, abs=2e-4)
    assert best.nu_m == pytest.approx(0.4438, abs=2e-4)
    assert best.diff >= max(row.diff for row in table.rows)


def test_nu_analysis_rejects_bad_grids():
    with pytest.raises(ValueError):
        nu_analysis([], [1.0])
    with pytest.raises(ValueError):
        nu_analysis([-1.0], [1.0])
    with pytest.raises(ValueError):
        nu_analysis([1.0], [0.0])


# --------------------------------------------------------------------------
# condition diagnostics


def test_c1_diagnostics_all_families():
    reports = {s.family: c1_diagnostics(s) for s in ALL_FAMILIES}
    for report in reports.values():
        assert isinstance(report, C1Report)
        assert report.odd_ok
        assert report.monotone_ok
        assert report.m1 == pytest.approx(1.0, rel=1e-12)
    assert not reports["huber"].twice_differentiable
    assert reports["huber"].m2 == np.inf
    assert np.isnan(reports["huber"].d2_mismatch)
    for family in ("smoothed_huber", "tanh_sign", "identity"):
        assert reports[family].twice_differentiable
        assert np.isfinite(reports[family].m2)
        assert reports[family].d2_mismatch <= 1e-6


def test_c2_diagnostic_flags_a_nearly_singular_information():
    space = DesignSpace(np.array([[-1.0], [0.0], [1.0]]))
    model = ModelSpec.polynomial(2)
    healthy = c2_diagnostic(space, model, Design(np.array([1.0, 1.0, 1.0]) / 3.0))
    assert healthy.bounded_away
    assert healthy.ch_min_m0 > 0.1
    eps = 1e-8
    thin = c2_diagnostic(
        space, model, Design(np.array([(1 - eps) / 2, eps, (1 - eps) / 2]))
    )
    assert not thin.bounded_away
    assert thin.ch_min_m0 == pytest.approx(eps / 2.0, rel=1e-6)
