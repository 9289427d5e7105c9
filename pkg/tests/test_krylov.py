import numpy as np
import pytest

from stagdg.assembly import ElementOperators
from stagdg.krylov import (
    NumericalBreakdownError,
    SolveStats,
    SolverConfig,
    cg,
    gmres,
    resolve_kind,
    solve,
)
from stagdg.meshing import build_dual
from stagdg.operators import pressure_apply


def test_identity_one_iteration(rng):
    b = rng.standard_normal(30)
    for solver in (gmres, cg):
        x, st = solver(lambda v: v, b)
        assert st.converged and st.iterations <= 1
        assert np.allclose(x, b, atol=1e-12)


def test_gmres_matches_dense_solve(rng):
    n = 20
    m = rng.standard_normal((n, n))
    a = m @ m.T + n * np.eye(n)
    b = rng.standard_normal(n)
    expect = np.linalg.solve(a, b)
    x, st = gmres(lambda v: a @ v, b, config=SolverConfig(tolerance=1e-10))
    assert st.converged
    assert np.linalg.norm(x - expect) / np.linalg.norm(expect) <= 1e-7


def test_cg_diagonal_system():
    d = np.arange(1.0, 21.0)
    b = np.ones(20)
    x, st = cg(lambda v: d * v, b, config=SolverConfig(tolerance=1e-12))
    assert st.converged
    assert np.abs(x - 1.0 / d).max() <= 1e-8


def test_singular_consistent_system(cube6_periodic, rng):
    """Pressure operator on an all-periodic mesh: consistent right side built
    by applying the operator to a random vector."""
    ops = ElementOperators(cube6_periodic, build_dual(cube6_periodic), 1, 0)
    shape = (cube6_periodic.n_tets, 1, ops.nphi)

    def apply(v):
        return pressure_apply(ops, v.reshape(shape), 0.3).ravel()

    z = rng.standard_normal(int(np.prod(shape)))
    b = apply(z)
    for solver in (cg, gmres):
        x, st = solver(apply, b, config=SolverConfig(tolerance=1e-9))
        assert st.converged
        assert np.linalg.norm(b - apply(x)) <= 1e-9 * np.linalg.norm(b)


def test_cross_solver_agreement(cube6_periodic, rng):
    """CG and GMRES agree on the symmetric viscous system."""
    from stagdg.operators import viscous_apply_component

    ops = ElementOperators(cube6_periodic, build_dual(cube6_periodic), 1, 0)
    shape = (cube6_periodic.n_tets, 1, ops.nphi)

    def apply(v):
        return viscous_apply_component(ops, v.reshape(shape), 0.1, 0.2).ravel()

    b = rng.standard_normal(int(np.prod(shape)))
    xc, stc = cg(apply, b, config=SolverConfig(tolerance=1e-10))
    xg, stg = gmres(apply, b, config=SolverConfig(tolerance=1e-10))
    assert stc.converged and stg.converged
    assert np.linalg.norm(xc - xg) / np.linalg.norm(xc) <= 1e-6


def test_determinism(rng):
    n = 40
    m = rng.standard_normal((n, n))
    a = m @ m.T + n * np.eye(n)
    b = rng.standard_normal(n)
    for solver in (cg, gmres):
        x1, s1 = solver(lambda v: a @ v, b)
        x2, s2 = solver(lambda v: a @ v, b)
        assert np.array_equal(x1, x2)
        assert s1.iterations == s2.iterations


def test_gmres_residual_monotone_within_cycle(rng):
    n = 25
    a = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    _, st = gmres(lambda v: a @ v, b, config=SolverConfig(restart=n))
    hist = np.array(st.history)
    assert np.all(np.diff(hist) <= 1e-14)


def test_non_convergence_flagged(rng):
    n = 30
    m = rng.standard_normal((n, n))
    a = m @ m.T + 0.01 * np.eye(n)
    b = rng.standard_normal(n)
    _, st = gmres(lambda v: a @ v, b, config=SolverConfig(max_iterations=3, restart=3))
    assert not st.converged
    assert st.residual > 1e-8


def test_breakdown_on_nonfinite():
    with pytest.raises(NumericalBreakdownError):
        gmres(lambda v: v * np.nan, np.ones(4))


def test_exact_subspace_breakdown_is_convergence(rng):
    """When the Krylov space closes early, the solver stops converged."""
    a = np.diag([2.0, 2.0, 2.0, 5.0])
    b = np.array([1.0, 1.0, 0.0, 0.0])  # spans a 1-dim invariant subspace
    x, st = gmres(lambda v: a @ v, b)
    assert st.converged and st.iterations <= 2
    assert np.allclose(x, b / 2.0)


def test_zero_rhs():
    x, st = cg(lambda v: 2 * v, np.zeros(8))
    assert st.converged and st.iterations == 0 and np.all(x == 0)
    x, st = gmres(lambda v: 2 * v, np.zeros(8))
    assert st.converged and np.all(x == 0)


def test_initial_guess_null_component_preserved(cube6_periodic, rng):
    """CG keeps the null-space part of the initial guess (free gauge rides
    along unchanged)."""
    ops = ElementOperators(cube6_periodic, build_dual(cube6_periodic), 1, 0)
    shape = (cube6_periodic.n_tets, 1, ops.nphi)
    n = int(np.prod(shape))

    def apply(v):
        return pressure_apply(ops, v.reshape(shape), 0.3).ravel()

    z = rng.standard_normal(n)
    b = apply(z)
    ones = np.ones(n)
    x0 = 3.7 * ones
    x, st = cg(apply, b, x0=x0, config=SolverConfig(tolerance=1e-10))
    assert st.converged
    assert (x @ ones) / n == pytest.approx(3.7, abs=1e-8)


def test_config_validation_and_auto_kind():
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        SolverConfig(restart=0)
    assert resolve_kind(SolverConfig(kind="auto"), p_gamma=0) == "cg"
    assert resolve_kind(SolverConfig(kind="auto"), p_gamma=2) == "gmres"
    assert resolve_kind(SolverConfig(kind="gmres"), p_gamma=0) == "gmres"
    b = np.ones(4)
    x, st = solve(lambda v: 2 * v, b, p_gamma=0)
    assert st.converged and np.allclose(x, 0.5)
    with pytest.raises(ValueError):
        solve(lambda v: v, b, config=SolverConfig(kind="qmr"))


def test_stats_invariant(rng):
    n = 15
    m = rng.standard_normal((n, n))
    a = m @ m.T + n * np.eye(n)
    b = rng.standard_normal(n)
    for solver in (cg, gmres):
        _, st = solver(lambda v: a @ v, b)
        if st.converged:
            assert st.residual <= SolverConfig().tolerance
