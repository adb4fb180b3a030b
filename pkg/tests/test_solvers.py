import math

import numpy as np
import pytest

from selrec import (
    GridTooCoarseError,
    Measure,
    ProbabilityMeasure,
    SiteConfig,
    SolverSettings,
    asymptotic_limit,
    cond_fit,
    delta,
    equilibration_time,
    fit_fraction,
    integrate_ode,
    l1_distance,
    ld_decay_residual,
    linkage_disequilibrium,
    logistic_fit_fraction,
    marginal_sre_solve,
    product_measure,
    recombinator,
    recursive_solve,
    selection_flow,
    semigroup_solve,
    spawn_stream,
    sre_rhs,
    stationary_count_pgf,
    uniform,
)


def random_prob(sites, rng):
    v = rng.random(2 ** len(sites))
    return ProbabilityMeasure(tuple(sites), v / v.sum())


def random_cfg(rng, n_max=4, allow_zero_rho=True):
    n = int(rng.integers(1, n_max + 1))
    i_star = int(rng.integers(1, n + 1))
    s = float(rng.uniform(0.1, 2.0))
    lo = 0.0 if allow_zero_rho else 0.05
    rho = [float(rng.uniform(lo, 2.0)) for _ in range(n)]
    rho[i_star - 1] = 0.0
    return SiteConfig(n=n, i_star=i_star, s=s, rho=tuple(rho))


# -- selection flow ------------------------------------------------------------


def test_selection_flow_identity_at_zero():
    rng = spawn_stream(101, 0)
    nu = random_prob((1, 2), rng)
    cfg = SiteConfig(n=2, i_star=1, s=1.0, rho=(0.0, 0.4))
    assert selection_flow(cfg, nu, 0.0).allclose(nu)


def test_selection_flow_fit_fraction_value():
    """Fit fraction 1/2 reaches 2/3 after time ln 2 at unit strength."""
    cfg = SiteConfig(n=2, i_star=1, s=1.0, rho=(0.0, 0.4))
    nu = product_measure((1, 2), [0.5, 0.3])
    out = selection_flow(cfg, nu, math.log(2.0))
    assert fit_fraction(out, 1) == pytest.approx(2.0 / 3.0, abs=1e-14)
    assert logistic_fit_fraction(1.0, 0.5, math.log(2.0)) == pytest.approx(
        2.0 / 3.0, abs=1e-14)


def test_selection_flow_fixed_points():
    cfg = SiteConfig(n=2, i_star=1, s=1.3, rho=(0.0, 0.4))
    rng = spawn_stream(101, 1)
    for bit in (0, 1):
        # all mass on one fitness class
        v = rng.random(4)
        if bit == 0:
            v[[1, 3]] = 0.0
        else:
            v[[0, 2]] = 0.0
        nu = ProbabilityMeasure((1, 2), v / v.sum())
        assert selection_flow(cfg, nu, 3.0).allclose(nu)


def test_selection_flow_preserves_conditionals():
    rng = spawn_stream(101, 2)
    cfg = SiteConfig(n=3, i_star=2, s=0.9, rho=(0.3, 0.0, 0.2))
    nu = random_prob((1, 2, 3), rng)
    out = selection_flow(cfg, nu, 1.7)
    assert cond_fit(out, 2).allclose(cond_fit(nu, 2), atol=1e-12)


def test_selection_flow_large_time_saturates():
    cfg = SiteConfig(n=1, i_star=1, s=2.0, rho=(0.0,))
    nu = ProbabilityMeasure((1,), np.array([0.2, 0.8]))
    out = selection_flow(cfg, nu, 1e6)
    assert out.allclose(delta((1,), (0,)), atol=1e-12)


# -- right hand side ------------------------------------------------------------


def test_rhs_vanishes_at_fixed_points():
    # product measure with all mass fit: both generators are zero
    cfg = SiteConfig(n=3, i_star=2, s=1.0, rho=(0.5, 0.0, 0.7))
    nu = product_measure((1, 2, 3), [0.4, 0.0, 0.8])
    assert np.abs(sre_rhs(cfg, nu).values).max() < 1e-14


def test_rhs_zero_for_product_when_no_selection():
    cfg = SiteConfig(n=3, i_star=2, s=0.0, rho=(0.5, 0.0, 0.7))
    nu = product_measure((1, 2, 3), [0.4, 0.6, 0.8])
    assert np.abs(sre_rhs(cfg, nu).values).max() < 1e-14


def test_rhs_conserves_mass():
    rng = spawn_stream(101, 3)
    for _ in range(1000):
        cfg = random_cfg(rng)
        nu = random_prob(cfg.sites, rng)
        assert abs(sre_rhs(cfg, nu).mass()) < 1e-12


# -- ODE integration -------------------------------------------------------------


def test_ode_constant_when_all_rates_vanish():
    cfg = SiteConfig(n=2, i_star=1, s=0.0, rho=(0.0, 0.0))
    rng = spawn_stream(101, 4)
    nu = random_prob((1, 2), rng)
    traj = integrate_ode(cfg, nu, SolverSettings(t_max=2.0, grid_steps=32))
    assert np.abs(traj.values - nu.values[None, :]).max() < 1e-14


def test_ode_matches_selection_flow():
    rng = spawn_stream(101, 5)
    for _ in range(5):
        n = int(rng.integers(1, 5))
        i_star = int(rng.integers(1, n + 1))
        cfg = SiteConfig(n=n, i_star=i_star, s=float(rng.uniform(0.2, 2.0)),
                         rho=(0.0,) * n)
        nu = random_prob(cfg.sites, rng)
        traj = integrate_ode(cfg, nu,
                             SolverSettings(t_max=1.0, grid_steps=256, quad_tol=1e-10))
        assert l1_distance(traj.final(), selection_flow(cfg, nu, 1.0)) < 1e-8


def test_ode_matches_pure_recombination_closed_form():
    """Two sites, no selection: exponential relaxation onto the product."""
    rng = spawn_stream(101, 6)
    rho = 0.9
    cfg = SiteConfig(n=2, i_star=1, s=0.0, rho=(0.0, rho))
    nu = random_prob((1, 2), rng)
    R = recombinator(nu, *cfg.head_tail(2))
    st = SolverSettings(t_max=1.5, grid_steps=600, quad_tol=1e-10)
    traj = integrate_ode(cfg, nu, st)
    for t in (0.5, 1.0, 1.5):
        w = math.exp(-rho * t)
        expect = nu.scale(w).add(R.scale(1.0 - w))
        assert l1_distance(traj.at_time(t), expect) < 1e-9


def test_trajectory_time_lookup():
    cfg = SiteConfig(n=1, i_star=1, s=1.0, rho=(0.0,))
    nu = uniform((1,))
    traj = integrate_ode(cfg, nu, SolverSettings(t_max=1.0, grid_steps=10))
    assert traj.index_of_time(0.5) == 5
    with pytest.raises(ValueError):
        traj.index_of_time(0.55)


# -- recursion --------------------------------------------------------------------


def test_recursion_levels_degenerate_without_rate():
    cfg = SiteConfig(n=3, i_star=2, s=1.0, rho=(0.0, 0.0, 0.8))
    rng = spawn_stream(101, 7)
    nu = random_prob(cfg.sites, rng)
    fam = recursive_solve(cfg, nu, SolverSettings(t_max=1.0, grid_steps=512,
                                                  quad_tol=1e-5))
    # permutation (2, 1, 3): site 1 has rate zero, level 1 equals level 0
    assert np.array_equal(fam.levels[1].values, fam.levels[0].values)


def test_recursion_initial_condition_every_level():
    cfg = SiteConfig(n=3, i_star=1, s=0.7, rho=(0.0, 0.5, 0.9))
    rng = spawn_stream(101, 8)
    nu = random_prob(cfg.sites, rng)
    fam = recursive_solve(cfg, nu, SolverSettings(t_max=1.0, grid_steps=256,
                                                  quad_tol=1e-5))
    for lev in fam.levels:
        assert np.allclose(lev.values[0], nu.values, atol=1e-14)


def test_recursion_matches_ode():
    rng = spawn_stream(101, 9)
    for _ in range(8):
        cfg = random_cfg(rng)
        nu = random_prob(cfg.sites, rng)
        t = float(rng.choice([0.5, 1.0, 2.0, 5.0]))
        fine = SolverSettings(t_max=t, grid_steps=int(4000 * max(1.0, t)),
                              quad_tol=1e-6)
        fam = recursive_solve(cfg, nu, fine)
        ode = integrate_ode(cfg, nu, SolverSettings(t_max=t, grid_steps=512,
                                                    quad_tol=1e-9))
        assert l1_distance(fam.solution.final(), ode.final()) < 1e-6


def test_recursion_permutation_invariant():
    cfg = SiteConfig(n=4, i_star=2, s=1.1, rho=(0.6, 0.0, 0.8, 0.3))
    rng = spawn_stream(101, 10)
    nu = random_prob(cfg.sites, rng)
    st = SolverSettings(t_max=1.0, grid_steps=4000, quad_tol=1e-6)
    sol1 = recursive_solve(cfg, nu, st, permutation=(2, 1, 3, 4)).solution.final()
    sol2 = recursive_solve(cfg, nu, st, permutation=(2, 3, 1, 4)).solution.final()
    sol3 = recursive_solve(cfg, nu, st, permutation=(2, 3, 4, 1)).solution.final()
    assert l1_distance(sol1, sol2) < 1e-8
    assert l1_distance(sol1, sol3) < 1e-8


def test_recursion_rejects_invalid_permutation():
    cfg = SiteConfig(n=3, i_star=2, s=1.0, rho=(0.5, 0.0, 0.5))
    nu = uniform(cfg.sites)
    with pytest.raises(ValueError):
        recursive_solve(cfg, nu, SolverSettings(t_max=1.0), permutation=(1, 2, 3))


def test_recursion_coarse_grid_raises():
    cfg = SiteConfig(n=3, i_star=2, s=1.0, rho=(2.0, 0.0, 2.0))
    rng = spawn_stream(101, 11)
    nu = random_prob(cfg.sites, rng)
    with pytest.raises(GridTooCoarseError):
        recursive_solve(cfg, nu, SolverSettings(t_max=5.0, grid_steps=8,
                                                quad_tol=1e-9))


# -- semigroup solution -------------------------------------------------------------


def test_semigroup_reduces_to_selection_flow():
    rng = spawn_stream(101, 12)
    cfg = SiteConfig(n=3, i_star=3, s=1.4, rho=(0.0, 0.0, 0.0))
    nu = random_prob(cfg.sites, rng)
    got = semigroup_solve(cfg, nu, 1.3)
    assert l1_distance(got, selection_flow(cfg, nu, 1.3)) < 1e-10


def test_semigroup_with_all_mass_fit():
    rng = spawn_stream(101, 13)
    cfg = SiteConfig(n=2, i_star=1, s=1.0, rho=(0.0, 0.7))
    v = rng.random(4)
    v[[1, 3]] = 0.0  # nothing unfit
    nu = ProbabilityMeasure((1, 2), v / v.sum())
    got = semigroup_solve(cfg, nu, 1.0)
    ode = integrate_ode(cfg, nu, SolverSettings(t_max=1.0, grid_steps=512,
                                                quad_tol=1e-10))
    assert l1_distance(got, ode.final()) < 1e-8


def test_semigroup_matches_ode():
    rng = spawn_stream(101, 14)
    for _ in range(6):
        cfg = random_cfg(rng)
        nu = random_prob(cfg.sites, rng)
        for t in (0.5, 1.0, 2.0):
            got = semigroup_solve(cfg, nu, t)
            ode = integrate_ode(cfg, nu, SolverSettings(t_max=t, grid_steps=512,
                                                        quad_tol=1e-10))
            assert l1_distance(got, ode.final()) < 1e-5


def test_semigroup_no_selection_falls_back():
    rng = spawn_stream(101, 15)
    cfg = SiteConfig(n=2, i_star=1, s=0.0, rho=(0.0, 0.9))
    nu = random_prob((1, 2), rng)
    got = semigroup_solve(cfg, nu, 1.0)
    w = math.exp(-0.9)
    R = recombinator(nu, *cfg.head_tail(2))
    expect = nu.scale(w).add(R.scale(1.0 - w))
    assert l1_distance(got, expect) < 1e-6


# -- linkage decay ---------------------------------------------------------------


def test_ld_zero_for_product_initial():
    # exactly zero in the dynamics; numerically bounded by the grid error
    cfg = SiteConfig(n=3, i_star=2, s=1.0, rho=(0.6, 0.0, 0.4))
    nu = product_measure((1, 2, 3), [0.3, 0.5, 0.8])
    fam = recursive_solve(cfg, nu, SolverSettings(t_max=1.0, grid_steps=4000,
                                                  quad_tol=1e-6))
    for level in (1, 2):
        ld = linkage_disequilibrium(fam, level, 1.0)
        assert np.abs(ld.values).max() < 1e-9


def test_ld_initial_value():
    rng = spawn_stream(101, 16)
    cfg = SiteConfig(n=3, i_star=2, s=1.0, rho=(0.6, 0.0, 0.4))
    nu = random_prob(cfg.sites, rng)
    fam = recursive_solve(cfg, nu, SolverSettings(t_max=1.0, grid_steps=256,
                                                  quad_tol=1e-5))
    for level in (1, 2):
        i = fam.permutation[level]
        expect = nu.sub(recombinator(nu, *cfg.head_tail(i)))
        got = linkage_disequilibrium(fam, level, 0.0)
        assert np.allclose(got.values, expect.values, atol=1e-12)


def test_ld_exponential_decay_identity():
    rng = spawn_stream(101, 17)
    for _ in range(10):
        cfg = random_cfg(rng)
        if cfg.n == 1:
            continue
        nu = random_prob(cfg.sites, rng)
        fam = recursive_solve(cfg, nu, SolverSettings(t_max=2.0, grid_steps=2000,
                                                      quad_tol=1e-6))
        for level in range(1, cfg.n):
            res = ld_decay_residual(fam, level)
            assert res["max_relative_error"] < 1e-4, (cfg, level)


def test_ld_norm_ratio_is_exponential():
    rng = spawn_stream(101, 18)
    cfg = SiteConfig(n=3, i_star=1, s=0.8, rho=(0.0, 0.7, 1.1))
    nu = random_prob(cfg.sites, rng)
    fam = recursive_solve(cfg, nu, SolverSettings(t_max=1.0, grid_steps=2000,
                                                  quad_tol=1e-6))
    res = ld_decay_residual(fam, 1)
    j = fam.index_of_time(1.0)
    ratio = res["lhs_norms"][j] / res["below_norms"][j]
    assert ratio == pytest.approx(math.exp(-0.7), abs=1e-5)


# -- asymptotics -----------------------------------------------------------------


def test_asymptotic_limit_all_fit():
    rng = spawn_stream(101, 19)
    cfg = SiteConfig(n=3, i_star=2, s=1.0, rho=(0.5, 0.0, 0.5))
    v = rng.random(8)
    v[[2, 3, 6, 7]] = 0.0  # only fit states populated
    nu = ProbabilityMeasure(cfg.sites, v / v.sum())
    limit = asymptotic_limit(cfg, nu)
    expect = product_measure(cfg.sites, [
        float(nu.project({i}).values[1]) for i in cfg.sites])
    assert l1_distance(limit, expect) < 1e-12


def test_asymptotic_limit_matches_long_run():
    rng = spawn_stream(101, 20)
    for _ in range(4):
        cfg = random_cfg(rng, n_max=3, allow_zero_rho=False)
        nu = random_prob(cfg.sites, rng)
        limit = asymptotic_limit(cfg, nu)
        T = equilibration_time(cfg, nu, eps=1e-4)
        traj = integrate_ode(cfg, nu, SolverSettings(t_max=T, grid_steps=256,
                                                     quad_tol=1e-8))
        assert l1_distance(traj.final(), limit) < 1e-3, cfg


def test_asymptotic_limit_requires_positive_rates():
    cfg = SiteConfig(n=3, i_star=2, s=1.0, rho=(0.5, 0.0, 0.0))
    nu = uniform(cfg.sites)
    with pytest.raises(ValueError, match="site"):
        asymptotic_limit(cfg, nu)


def test_stationary_pgf_endpoints():
    assert stationary_count_pgf(0.7, 0.0) == 0.0
    assert stationary_count_pgf(0.7, 1.0) == 1.0
    # series at small x is dominated by the single-line term x*alpha/(1+alpha)
    x = 1e-8
    got = stationary_count_pgf(2.0, x)
    assert got == pytest.approx(x * 2.0 / 3.0, rel=1e-6)


# -- marginal dynamics -----------------------------------------------------------


def test_marginal_full_set_matches_ode():
    rng = spawn_stream(101, 21)
    cfg = random_cfg(rng, n_max=4)
    nu = random_prob(cfg.sites, rng)
    st = SolverSettings(t_max=1.0, grid_steps=512, quad_tol=1e-9)
    full = integrate_ode(cfg, nu, st)
    marg = marginal_sre_solve(cfg, nu, cfg.sites, st)
    assert l1_distance(full.final(), marg.final()) < 1e-10


def test_marginal_consistency_all_subsets():
    rng = spawn_stream(101, 22)
    cfg = SiteConfig(n=4, i_star=2, s=1.2, rho=(0.7, 0.0, 0.9, 0.4))
    nu = random_prob(cfg.sites, rng)
    st = SolverSettings(t_max=1.0, grid_steps=512, quad_tol=1e-9)
    full = integrate_ode(cfg, nu, st)
    others = [i for i in cfg.sites if i != cfg.i_star]
    for mask in range(2 ** len(others)):
        A = {cfg.i_star} | {a for j, a in enumerate(others) if (mask >> j) & 1}
        marg = marginal_sre_solve(cfg, nu, A, st)
        assert l1_distance(full.final().project(A), marg.final()) < 1e-6, A


def test_marginal_selected_site_is_logistic():
    rng = spawn_stream(101, 23)
    cfg = SiteConfig(n=3, i_star=2, s=0.9, rho=(0.5, 0.0, 0.8))
    nu = random_prob(cfg.sites, rng)
    st = SolverSettings(t_max=2.0, grid_steps=512, quad_tol=1e-9)
    marg = marginal_sre_solve(cfg, nu, {2}, st)
    f0 = fit_fraction(nu, 2)
    expect = logistic_fit_fraction(0.9, f0, 2.0)
    assert marg.final().values[0] == pytest.approx(expect, abs=1e-9)


def test_marginal_requires_selected_site():
    cfg = SiteConfig(n=3, i_star=2, s=0.9, rho=(0.5, 0.0, 0.8))
    nu = uniform(cfg.sites)
    with pytest.raises(ValueError, match="selected site"):
        marginal_sre_solve(cfg, nu, {1, 3}, SolverSettings(t_max=1.0))


def test_single_site_marginals_constant_without_selection():
    rng = spawn_stream(101, 24)
    cfg = SiteConfig(n=3, i_star=2, s=0.0, rho=(0.6, 0.0, 0.9))
    nu = random_prob(cfg.sites, rng)
    traj = integrate_ode(cfg, nu, SolverSettings(t_max=2.0, grid_steps=256,
                                                 quad_tol=1e-9))
    for i in cfg.sites:
        before = nu.project({i}).values
        after = traj.final().project({i}).values
        assert np.allclose(before, after, atol=1e-9)


def test_naive_marginal_fails_away_from_selected_site():
    """With selection on, a subset without the selected site is not closed:
    the recombination-only (constant) marginal prediction is visibly wrong."""
    cfg = SiteConfig(n=2, i_star=1, s=1.5, rho=(0.0, 0.8))
    nu = Measure((1, 2), np.array([0.45, 0.05, 0.05, 0.45]))
    nu = ProbabilityMeasure((1, 2), nu.values)
    traj = integrate_ode(cfg, nu, SolverSettings(t_max=1.0, grid_steps=512,
                                                 quad_tol=1e-9))
    naive = nu.project({2})
    true = traj.final().project({2})
    assert l1_distance(true, naive) > 1e-3
