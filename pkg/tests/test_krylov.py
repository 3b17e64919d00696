import numpy as np
import pytest

from llgbdf.grid import GridSpec
from llgbdf.krylov import KrylovConfig, gmres
from llgbdf.precond import make_preconditioner
from llgbdf.stepper import Scheme, implicit_operator

TIGHT = KrylovConfig(rel_tol=1e-12, abs_tol=1e-15, restart=40, max_iters=2000)


def random_unit(rng, shape):
    m = rng.normal(size=(3,) + shape)
    return m / np.linalg.norm(m, axis=0)


def test_identity_solves_in_one_iteration(rng):
    b = rng.normal(size=20)
    x, st = gmres(lambda v: v, b)
    assert st.converged and st.iterations == 1
    np.testing.assert_allclose(x, b, rtol=1e-14)


def test_diagonal_system():
    d = np.array([1.0, 2.0, 4.0])
    x, st = gmres(lambda v: d * v, np.array([1.0, 2.0, 4.0]), cfg=TIGHT)
    np.testing.assert_allclose(x, 1.0, rtol=1e-12)


def test_zero_rhs_returns_zero():
    x, st = gmres(lambda v: 3 * v, np.zeros(5), x0=np.ones(5))
    assert st.converged and st.iterations == 0 and np.all(x == 0.0)


def test_exact_initial_guess_needs_no_iterations(rng):
    A = np.eye(6) + 0.1 * rng.normal(size=(6, 6))
    xs = rng.normal(size=6)
    x, st = gmres(lambda v: A @ v, A @ xs, x0=xs)
    assert st.iterations == 0 and st.converged


def test_residual_non_increasing_within_cycle(rng):
    A = np.diag(np.linspace(1, 50, 60)) + 0.5 * rng.normal(size=(60, 60))
    _, st = gmres(lambda v: A @ v, rng.normal(size=60),
                  cfg=KrylovConfig(rel_tol=1e-10, restart=60, max_iters=60))
    h = np.array(st.history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_rhs_scaling(rng):
    A = np.eye(30) * 3 + rng.normal(size=(30, 30)) * 0.2
    b = rng.normal(size=30)
    x1, _ = gmres(lambda v: A @ v, b, cfg=TIGHT)
    x2, _ = gmres(lambda v: A @ v, 7.5 * b, cfg=TIGHT)
    np.testing.assert_allclose(x2, 7.5 * x1, rtol=1e-9)


def test_restarts_still_converge(rng):
    A = np.diag(np.linspace(1, 100, 80)) + 0.3 * rng.normal(size=(80, 80))
    b = rng.normal(size=80)
    x, st = gmres(lambda v: A @ v, b, cfg=KrylovConfig(rel_tol=1e-10, restart=5, max_iters=5000))
    assert st.converged
    np.testing.assert_allclose(A @ x, b, atol=1e-7)


def test_non_convergence_is_reported_not_raised(rng):
    A = np.diag(np.linspace(1, 1e4, 50))
    _, st = gmres(lambda v: A @ v, rng.normal(size=50),
                  cfg=KrylovConfig(rel_tol=1e-12, restart=2, max_iters=3))
    assert not st.converged and st.iterations <= 3


def test_config_validation():
    with pytest.raises(ValueError):
        KrylovConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        KrylovConfig(restart=1)


def dense(apply, n):
    return np.column_stack([apply(e) for e in np.eye(n)])


@pytest.mark.parametrize("precond", [None, "frame", "diagonal"])
def test_bdf3_operator_against_dense_solve(rng, precond):
    g = GridSpec.cube(8)
    m_hat = random_unit(rng, g.shape)
    k, eps, alpha = 0.01, 0.05, 0.3
    apply = implicit_operator(Scheme.BDF3, k, eps, alpha, m_hat, g)
    A = dense(apply, 3 * g.ncells)
    b = rng.normal(size=3 * g.ncells)
    ref = np.linalg.solve(A, b)
    pc = make_preconditioner(precond, g, m_hat, Scheme.BDF3.c0 / k, eps, alpha, 4)
    x, st = gmres(apply, b, cfg=TIGHT, precond=pc)
    assert st.converged
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_frame_preconditioner_cuts_iterations(rng):
    g = GridSpec.interval(400)
    x = g.centers(0)[:, None, None]
    phi = np.cos(np.pi * x)
    m_hat = np.stack((np.cos(phi), np.sin(phi), 0 * x))
    k, eps, alpha = 1e-3, 1.0, 0.01
    apply = implicit_operator(Scheme.BDF2, k, eps, alpha, m_hat, g)
    b = rng.normal(size=3 * g.ncells)
    cfg = KrylovConfig(rel_tol=1e-9, restart=40, max_iters=4000)
    _, plain = gmres(apply, b, cfg=cfg)
    pc = make_preconditioner("frame", g, m_hat, Scheme.BDF2.c0 / k, eps, alpha, 2)
    _, pre = gmres(apply, b, cfg=cfg, precond=pc)
    assert pre.converged and pre.iterations * 5 < plain.iterations


def test_right_preconditioning_matches_left(rng):
    g = GridSpec.cube(6)
    m_hat = random_unit(rng, g.shape)
    apply = implicit_operator(Scheme.BDF2, 0.01, 0.1, 0.5, m_hat, g)
    pc = make_preconditioner("frame", g, m_hat, 150.0, 0.1, 0.5, 2)
    b = rng.normal(size=3 * g.ncells)
    xl, _ = gmres(apply, b, cfg=TIGHT, precond=pc, side="left")
    xr, _ = gmres(apply, b, cfg=TIGHT, precond=pc, side="right")
    np.testing.assert_allclose(xl, xr, rtol=1e-8, atol=1e-12)
