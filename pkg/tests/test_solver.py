from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from boundtv.forward import IdentityOperator, LinearOperator, MatrixOperator
from boundtv.operators import Bounds, grad_forward, project, tv_norm
from boundtv.solver import (
    SolverConfig,
    SolverDivergence,
    SolverState,
    admm_step,
    conjugate_gradient,
    init_state,
    inner_cycle,
    match_tikhonov_beta,
    naive_projected_solve,
    run,
    solve_m_subproblem,
    split_objective,
    tikhonov_solve,
)
from boundtv.diagnostics import data_misfit, objective
from oracles import (
    diff_matrix,
    literal_outer_step,
    projected_subgradient,
    tv_ls_objective,
    unscaled_outer_step,
)

EXACT = dict(cg_steps=200, cg_rtol=0.0)


def random_state(rng, n, bounds):
    m = rng.normal(0.5, 1.0, n)
    return SolverState(
        m=m,
        x=rng.normal(size=(1, n)),
        y=project(rng.normal(0.5, 1.0, n), bounds),
        b=rng.normal(size=(1, n)),
        c=rng.normal(size=n),
    )


def dense_m_solve(state, cfg, K, d):
    n = state.m.size
    D = diff_matrix(n)
    A = cfg.lam * D.T @ D + cfg.alpha * K.T @ K + cfg.delta * np.eye(n)
    rhs = cfg.lam * D.T @ (state.x - state.b)[0] + cfg.alpha * K.T @ d
    rhs += cfg.delta * (state.y + state.c)
    return np.linalg.solve(A, rhs)


# -- configuration -------------------------------------------------------------------


def test_config_defaults_and_validation():
    cfg = SolverConfig()
    assert cfg.delta == cfg.lam
    assert cfg.couples_bounds
    assert not SolverConfig(delta=0.0).couples_bounds
    assert not SolverConfig(variant="unconstrained_tv").couples_bounds
    for bad in [dict(alpha=0.0), dict(lam=-1.0), dict(delta=-1.0), dict(n_inner=0),
                dict(cg_steps=0), dict(target_accuracy=0.0), dict(tv_mode="l2"),
                dict(variant="x"), dict(projection="x")]:
        with pytest.raises(ValueError):
            SolverConfig(**bad)


# -- initialization ------------------------------------------------------------------


def test_init_state_examples():
    s = init_state(np.zeros(6), Bounds.uniform(0, 1, (6,)))
    assert_array_equal(s.y, 0.0)
    for a in (s.x, s.b, s.c):
        assert_array_equal(a, 0.0)
    assert s.k == 0
    s = init_state(np.full(4, 5.0), Bounds.uniform(0, 2, (4,)))
    assert_array_equal(s.y, 2.0)
    assert_array_equal(s.m, 5.0)
    s2 = init_state(np.zeros((3, 4)), Bounds.uniform(0, 1, (3, 4)))
    assert s2.x.shape == s2.b.shape == (2, 3, 4)
    with pytest.raises(ValueError):
        init_state(np.zeros(5), Bounds.uniform(0, 1, (6,)))


# -- conjugate gradients -------------------------------------------------------------


@pytest.mark.parametrize("n", [5, 20, 50])
def test_cg_matches_dense_solve(rng, n):
    B = rng.normal(size=(n, n))
    A = B @ B.T + 0.5 * np.eye(n)
    rhs = rng.normal(size=n)
    x, info = conjugate_gradient(lambda v: A @ v, rhs, np.zeros(n), 2 * n)
    ref = np.linalg.solve(A, rhs)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)
    assert not info.breakdown


def test_cg_breakdown_returns_iterate():
    x0 = np.array([1.0, 2.0])
    x, info = conjugate_gradient(lambda v: -v, np.array([1.0, 0.0]), x0, 10)
    assert info.breakdown
    assert_array_equal(x, x0)


def test_cg_respects_budget(rng):
    A = np.diag(np.arange(1.0, 31.0))
    _, info = conjugate_gradient(lambda v: A @ v, rng.normal(size=30), np.zeros(30), 3)
    assert info.iterations == 3


# -- model subproblem ----------------------------------------------------------------


def test_subproblem_pure_least_squares(rng):
    n = 8
    d = rng.normal(size=n)
    cfg = SolverConfig(alpha=1.0, lam=1e-12, delta=0.0, cg_steps=50)
    s = init_state(np.zeros(n), Bounds.unbounded((n,)))
    m, _ = solve_m_subproblem(s, cfg, IdentityOperator(n), d)
    assert_allclose(m, d, rtol=1e-9, atol=1e-9)


def test_subproblem_shared_minimizer(rng):
    n = 8
    bounds = Bounds.uniform(-5, 5, (n,))
    s = init_state(np.zeros(n), bounds)
    s.y = project(rng.normal(size=n), bounds)
    s.c = rng.normal(size=n)
    d = s.y + s.c
    cfg = SolverConfig(alpha=1.0, lam=1e-12, delta=1.0, cg_steps=50)
    m, _ = solve_m_subproblem(s, cfg, IdentityOperator(n), d)
    assert_allclose(m, d, rtol=1e-9, atol=1e-9)


def test_subproblem_matches_dense_oracle(rng):
    n = 5
    K = rng.normal(size=(7, n))
    d = rng.normal(size=7)
    bounds = Bounds.uniform(0, 1, (n,))
    cfg = SolverConfig(alpha=1.3, lam=2.0, delta=0.7, cg_steps=50)
    s = random_state(rng, n, bounds)
    m, info = solve_m_subproblem(s, cfg, MatrixOperator(K), d)
    ref = dense_m_solve(s, cfg, K, d)
    assert np.linalg.norm(m - ref) <= 1e-8 * np.linalg.norm(ref)
    assert not info.breakdown


def test_subproblem_breakdown_is_flagged_not_raised(rng):
    class Flipped(MatrixOperator):
        def _adjoint(self, u):
            return -super()._adjoint(u)

    n = 6
    cfg = SolverConfig(lam=1e-6, delta=0.0, cg_steps=20)
    s = init_state(rng.normal(size=n), Bounds.unbounded((n,)))
    _, info = solve_m_subproblem(s, cfg, Flipped(np.eye(n)), rng.normal(size=n))
    assert info.breakdown


# -- inner cycle -----------------------------------------------------------------------


def test_single_inner_cycle_is_one_update_and_one_shrink(rng):
    n = 7
    F = MatrixOperator(rng.normal(size=(9, n)))
    d = rng.normal(size=9)
    bounds = Bounds.uniform(0, 1, (n,))
    cfg = SolverConfig(n_inner=1)
    s = random_state(rng, n, bounds)
    out = inner_cycle(s, cfg, F, d)
    m, _ = solve_m_subproblem(s, cfg, F, d)
    assert_array_equal(out.m, m)
    x = grad_forward(m) + s.b
    assert_array_equal(out.x, np.sign(x) * np.maximum(np.abs(x) - 1 / cfg.lam, 0))
    assert_array_equal(out.b, s.b)
    assert_array_equal(out.c, s.c)


def test_inner_cycle_dead_zone():
    n = 6
    d = np.full(n, 0.3)
    cfg = SolverConfig(n_inner=1, delta=0.0, variant="unconstrained_tv", **EXACT)
    s = init_state(d.copy(), Bounds.unbounded((n,)))
    s.b = np.full((1, n), 0.2)  # |grad m + b| = 0.2 < 1/lam
    s.b[0, -1] = 0.0
    out = inner_cycle(s, cfg, IdentityOperator(n), d)
    assert_array_equal(out.x, 0.0)


def test_inner_cycles_do_not_increase_split_objective(rng):
    n = 8
    F = MatrixOperator(rng.normal(size=(10, n)))
    d = rng.normal(size=10)
    bounds = Bounds.uniform(0, 1, (n,))
    cfg = SolverConfig(n_inner=1, **EXACT)
    for _ in range(20):
        s = random_state(rng, n, bounds)
        values = [split_objective(s, cfg, F, d)]
        for _ in range(2):
            s = inner_cycle(s, cfg, F, d)
            values.append(split_objective(s, cfg, F, d))
        assert np.all(np.diff(values) <= 1e-12 * abs(values[0]))


# -- outer step -----------------------------------------------------------------------


def test_zero_residuals_leave_multipliers_unchanged():
    n = 6
    d = np.full(n, 0.4)
    bounds = Bounds.uniform(0, 1, (n,))
    s = init_state(d.copy(), bounds)
    cfg = SolverConfig(**EXACT)
    out = admm_step(s, cfg, IdentityOperator(n), d, bounds)
    assert_allclose(out.b, s.b, atol=1e-15)
    assert_allclose(out.c, s.c, atol=1e-15)
    assert out.k == 1 and len(out.history) == 1


@pytest.mark.parametrize("projection", ["shifted", "plain"])
def test_projection_is_within_bounds(rng, projection):
    n = 10
    lo, hi = rng.uniform(-1, 0, n), rng.uniform(0.1, 1, n)
    bounds = Bounds(lo, hi)
    F = MatrixOperator(rng.normal(size=(12, n)))
    d = 3 * rng.normal(size=12)
    cfg = SolverConfig(projection=projection)
    s = init_state(np.zeros(n), bounds)
    for _ in range(20):
        s = admm_step(s, cfg, F, d, bounds)
        assert np.all(s.y >= lo) and np.all(s.y <= hi)


def test_update_order_matches_literal_transcription(rng):
    n = 6
    K = rng.normal(size=(8, n))
    d = rng.normal(size=8)
    bounds = Bounds.uniform(0, 1, (n,))
    cfg = SolverConfig(alpha=1.1, lam=2.0, delta=1.5, n_inner=2, projection="plain", **EXACT)
    for _ in range(10):
        s = random_state(rng, n, bounds)
        out = admm_step(s, cfg, MatrixOperator(K), d, bounds)
        m, x, y, b, c = literal_outer_step(
            s.m, s.x[0], s.y, s.b[0], s.c, K, d, 1.1, 2.0, 1.5, 2, 0.0, 1.0
        )
        for got, want in [(out.m, m), (out.x[0], x), (out.y, y), (out.b[0], b), (out.c, c)]:
            assert_allclose(got, want, rtol=1e-10, atol=1e-10)
        # the default step shares the multiplier update, only y moves
        sh = admm_step(s, replace(cfg, projection="shifted"), MatrixOperator(K), d, bounds)
        assert_array_equal(sh.c, out.c)
        assert_array_equal(sh.y, project(sh.m - sh.c, bounds))


@pytest.mark.parametrize("shifted", [True, False])
def test_scaled_step_equals_unscaled_step(rng, shifted):
    n = 7
    K = rng.normal(size=(9, n))
    d = rng.normal(size=9)
    lo, hi = -0.2, 0.9
    bounds = Bounds.uniform(lo, hi, (n,))
    alpha, lam, delta = 0.8, 2.5, 1.7
    cfg = SolverConfig(alpha=alpha, lam=lam, delta=delta, n_inner=2,
                       projection="shifted" if shifted else "plain", **EXACT)
    worst = 0.0
    for _ in range(20):
        s = random_state(rng, n, bounds)
        out = admm_step(s, cfg, MatrixOperator(K), d, bounds)
        m, x, y, mu, nu = unscaled_outer_step(
            s.m, s.x[0], s.y, lam * s.b[0], delta * s.c, K, d,
            alpha, lam, delta, 2, lo, hi, shifted=shifted,
        )
        for got, want in [(out.m, m), (out.x[0], x), (out.y, y),
                          (out.b[0], mu / lam), (out.c, nu / delta)]:
            worst = max(worst, np.linalg.norm(got - want) / max(np.linalg.norm(want), 1.0))
    assert worst <= 1e-12


def test_residuals_decay_on_small_instance(rng):
    n = 6
    d = rng.normal(0.5, 0.8, n)
    bounds = Bounds.uniform(0, 1, (n,))
    cfg = SolverConfig(alpha=1.0, lam=2.0, n_outer=500, cg_steps=2 * n)
    res = run(cfg, IdentityOperator(n), d, bounds)
    h = res.history
    assert h[-1].split_residual <= 1e-6 * h[0].split_residual
    assert h[-1].proj_residual <= 1e-6 * h[0].proj_residual


def test_plain_projection_stalls_off_the_optimum():
    # y = P(m) lets c keep a nonzero value where the bounds are inactive,
    # which pins the iteration away from the constrained minimizer
    rng = np.random.default_rng(4)
    n = 6
    d = rng.normal(0.5, 0.8, n)
    bounds = Bounds.uniform(0, 1, (n,))
    cfg = SolverConfig(alpha=1.0, lam=2.0, n_outer=5000, cg_steps=2 * n,
                       target_accuracy=1e-14)
    _, f_ref = projected_subgradient(d, 1.0, 0.0, 1.0, 200_000)
    good = run(cfg, IdentityOperator(n), d, bounds)
    bad = run(replace(cfg, projection="plain"), IdentityOperator(n), d, bounds)
    assert tv_ls_objective(good.y, d, 1.0) <= f_ref * (1 + 1e-4)
    assert tv_ls_objective(bad.y, d, 1.0) > f_ref * (1 + 1e-3)
    interior = (bad.y > 0) & (bad.y < 1)
    assert np.max(np.abs(bad.state.c[interior])) > 1e-3


# -- run ----------------------------------------------------------------------------------


def test_fixed_point_terminates_immediately():
    n = 9
    d = np.full(n, 0.6)
    cfg = SolverConfig(target_accuracy=1e-8, n_outer=100)
    res = run(cfg, IdentityOperator(n), d, Bounds.uniform(0, 1, (n,)), m0=d.copy())
    assert res.iterations == 1
    assert res.stop_reason == "target_reached"
    assert_allclose(res.m, d, atol=1e-14)


def test_target_accuracy_and_feasibility_at_termination(rng):
    n = 12
    F = MatrixOperator(rng.normal(size=(15, n)))
    d = F.apply(rng.uniform(-0.5, 1.5, n))
    bounds = Bounds.uniform(0, 1, (n,))
    tol = 1e-6
    res = run(SolverConfig(target_accuracy=tol, n_outer=20000), F, d, bounds)
    assert res.stop_reason == "target_reached"
    assert res.history[-1].rel_model_change <= tol
    assert np.linalg.norm(res.m - res.y) <= 10 * tol * np.linalg.norm(res.y)
    assert np.all(res.y >= 0) and np.all(res.y <= 1)


def test_run_is_deterministic(rng):
    n = 30
    F = MatrixOperator(rng.normal(size=(30, n)))
    d = rng.normal(size=30)
    bounds = Bounds.uniform(0, 1, (n,))
    cfg = SolverConfig(n_outer=50)
    a, b = run(cfg, F, d, bounds), run(cfg, F, d, bounds)
    assert a.m.tobytes() == b.m.tobytes()
    assert a.history == b.history


def test_unconstrained_variant_ignores_bounds_in_model(rng):
    n = 10
    d = rng.normal(0.5, 1.0, n)
    bounds = Bounds.uniform(0, 1, (n,))
    cfg = SolverConfig(variant="unconstrained_tv", n_outer=300)
    res = run(cfg, IdentityOperator(n), d, bounds)
    assert_array_equal(res.state.c, 0.0)
    assert_array_equal(res.y, project(res.m, bounds))
    assert res.m.min() < 0  # data well outside the box pull m out too


def test_dimension_mismatch_raises_before_iterating():
    F = IdentityOperator(5)
    with pytest.raises(ValueError):
        run(SolverConfig(), F, np.zeros(4), Bounds.uniform(0, 1, (5,)))
    with pytest.raises(ValueError):
        run(SolverConfig(), F, np.zeros(5), Bounds.uniform(0, 1, (6,)))
    with pytest.raises(ValueError):
        run(SolverConfig(), F, np.zeros(5), Bounds.uniform(0, 1, (5,)), m0=np.zeros(3))
    with pytest.raises(ValueError):
        run(SolverConfig(), F, np.array([0, 0, np.nan, 0, 0]), Bounds.uniform(0, 1, (5,)))


def test_divergence_guard_keeps_partial_result():
    class Exploding(LinearOperator):
        def __init__(self, n):
            super().__init__(n, n)
            self.calls = 0

        def _apply(self, m):
            self.calls += 1
            return m * 10.0 ** min(self.calls, 300)

        def _adjoint(self, u):
            return u

    n = 5
    with pytest.raises(SolverDivergence) as err:
        run(SolverConfig(n_outer=1000), Exploding(n), np.ones(n), Bounds.uniform(0, 1, (n,)))
    partial = err.value.result
    assert partial.stop_reason == "diverged"
    assert 1 <= partial.iterations < 1000
    assert len(partial.history) == partial.iterations


def test_isotropic_two_dimensional_denoising_matches_cvxpy(rng):
    cp = pytest.importorskip("cvxpy")
    shape = (6, 5)
    d = rng.normal(0.5, 0.6, shape)
    bounds = Bounds.uniform(0, 1, shape)
    alpha = 2.0

    class Flat(LinearOperator):
        def __init__(self):
            super().__init__(d.size, d.size)

        def _apply(self, m):
            return np.ravel(m)

        def _adjoint(self, u):
            return np.reshape(u, shape)

    cfg = SolverConfig(alpha=alpha, tv_mode="isotropic", n_outer=4000, cg_steps=60)
    res = run(cfg, Flat(), d.ravel(), bounds)
    M = cp.Variable(shape)
    gx = cp.vstack([M[1:, :] - M[:-1, :], np.zeros((1, shape[1]))])
    gy = cp.hstack([M[:, 1:] - M[:, :-1], np.zeros((shape[0], 1))])
    tv = cp.sum(cp.norm(cp.vstack([cp.vec(gx, order="C"), cp.vec(gy, order="C")]), 2, axis=0))
    prob = cp.Problem(cp.Minimize(tv + alpha / 2 * cp.sum_squares(M - d)), [M >= 0, M <= 1])
    prob.solve(solver=cp.CLARABEL)
    f_ref = tv_norm(M.value, "isotropic") + alpha / 2 * np.sum((M.value - d) ** 2)
    f = tv_norm(res.y, "isotropic") + alpha / 2 * np.sum((res.y - d) ** 2)
    assert f == pytest.approx(f_ref, rel=1e-5)


# -- baselines ----------------------------------------------------------------------------


def test_naive_with_inactive_bounds_equals_unconstrained(rng):
    n = 20
    F = MatrixOperator(rng.normal(size=(25, n)))
    d = rng.normal(size=25)
    wide = Bounds.uniform(-1e300, 1e300, (n,))
    cfg = SolverConfig(n_outer=60)
    a = run(replace(cfg, variant="unconstrained_tv"), F, d, wide)
    b = naive_projected_solve(cfg, F, d, wide)
    assert_array_equal(a.m, b.m)
    assert a.history == b.history


def test_naive_iterates_stay_in_bounds(rng):
    n = 15
    F = MatrixOperator(rng.normal(size=(20, n)))
    d = 2 * rng.normal(size=20)
    bounds = Bounds.uniform(0, 1, (n,))
    res = naive_projected_solve(SolverConfig(n_outer=40), F, d, bounds, snapshot_stride=1)
    assert len(res.snapshots) == 41
    for _, m in res.snapshots:
        assert np.all(m >= 0) and np.all(m <= 1)
    once = naive_projected_solve(SolverConfig(n_outer=40), F, d, bounds, once=True)
    free = run(SolverConfig(n_outer=40, variant="unconstrained_tv"), F, d, bounds)
    assert_array_equal(once.m, project(free.m, bounds))


def test_tikhonov_matches_dense_oracle(rng):
    n = 5
    K = rng.normal(size=(6, n))
    d = rng.normal(size=6)
    D = diff_matrix(n)
    beta = 0.7
    ref = np.linalg.solve(K.T @ K + beta * D.T @ D, K.T @ d)
    m = tikhonov_solve(MatrixOperator(K), d, beta, 50)
    assert np.linalg.norm(m - ref) <= 1e-8 * np.linalg.norm(ref)


def test_tikhonov_limits_and_monotonicity(rng):
    n = 40
    d = rng.normal(size=n)
    assert_allclose(tikhonov_solve(IdentityOperator(n), d, 1e-10, 200), d, atol=1e-6)
    F = MatrixOperator(rng.normal(size=(50, n)))
    d = rng.normal(size=50)
    norms = [np.linalg.norm(grad_forward(tikhonov_solve(F, d, b, 500)))
             for b in np.logspace(-3, 4, 15)]
    assert np.all(np.diff(norms) < 0)
    with pytest.raises(ValueError):
        tikhonov_solve(F, d, 0.0, 10)


def test_tikhonov_beta_matches_misfit(rng):
    n = 40
    F = MatrixOperator(rng.normal(size=(50, n)))
    d = rng.normal(size=50)
    target = 1.3 * data_misfit(tikhonov_solve(F, d, 1e-6, 500), F, d)
    beta = match_tikhonov_beta(F, d, target, 500)
    got = data_misfit(tikhonov_solve(F, d, beta, 500), F, d)
    assert got == pytest.approx(target, rel=1e-6)


def test_reference_run_split_consistency(reference_experiment):
    _, results, _ = reference_experiment
    bc = results["bound_constrained"]
    rec = bc.history[-1]
    assert bc.iterations == 1000
    assert rec.split_residual / max(np.linalg.norm(grad_forward(bc.m)), 1.0) < 1e-3


def test_objective_bookkeeping(rng):
    n = 10
    F = MatrixOperator(rng.normal(size=(12, n)))
    d = rng.normal(size=12)
    bounds = Bounds.uniform(0, 1, (n,))
    res = run(SolverConfig(n_outer=5, alpha=0.7), F, d, bounds)
    rec = res.history[-1]
    assert rec.objective == pytest.approx(objective(res.m, F, d, 0.7), rel=1e-14)
    assert rec.proj_residual == pytest.approx(np.linalg.norm(res.m - res.y), rel=1e-14)
