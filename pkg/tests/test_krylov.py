import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from fdstokes import krylov
from fdstokes.errors import NotSPDError
from fdstokes.precond import build_block


def _true_residual(A, x, b):
    return np.linalg.norm(b - A @ x) / np.linalg.norm(b)


@pytest.mark.parametrize("solver", [krylov.minres, krylov.gmres, krylov.cg])
def test_identity_converges_in_one_iteration(solver, rng):
    b = rng.standard_normal(7)
    x, report = solver(np.eye(7), b)
    assert report.converged and report.iterations == 1
    np.testing.assert_allclose(x, b)
    assert report.final_residual <= 1e-8


@pytest.mark.parametrize("solver", [krylov.minres, krylov.gmres, krylov.cg])
def test_zero_rhs(solver):
    x, report = solver(np.eye(3), np.zeros(3))
    assert report.converged and report.iterations == 0
    assert not np.any(x)


def test_minres_spd_finite_termination(random_spd, rng):
    A = random_spd(3)
    b = rng.standard_normal(3)
    x, report = krylov.minres(A, b, tol=1e-10)
    assert report.converged and report.iterations <= 3
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8)


def test_minres_indefinite_two_eigenvalues():
    A = np.diag([1.0, -1.0])
    x, report = krylov.minres(A, np.array([1.0, 2.0]))
    assert report.converged and report.iterations <= 2
    np.testing.assert_allclose(x, [1.0, -2.0])


def test_minres_rejects_indefinite_preconditioner():
    with pytest.raises(NotSPDError):
        krylov.minres(np.eye(2), np.array([1.0, 1.0]), prec=lambda r: np.array([r[0], -4.0 * r[1]]))


def test_gmres_two_distinct_eigenvalues(rng):
    S = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    A = S @ np.diag([1.0, 1.0, 3.0, 3.0]) @ np.linalg.inv(S)
    b = rng.standard_normal(4)
    x, report = krylov.gmres(A, b)
    assert report.converged and report.iterations <= 2
    assert _true_residual(A, x, b) <= 1e-8


def test_gmres_exact_preconditioner(rng):
    A = rng.standard_normal((6, 6)) + 6 * np.eye(6)
    b = rng.standard_normal(6)
    x, report = krylov.gmres(A, b, prec=lambda r: np.linalg.solve(A, r))
    assert report.converged and report.iterations == 1
    assert report.prec_applications >= 1


def test_cg_diagonal_and_exact_preconditioner():
    A = np.diag(np.arange(1.0, 11.0))
    b = np.ones(10)
    x, report = krylov.cg(A, b, tol=1e-12)
    assert report.converged and report.iterations <= 10
    np.testing.assert_allclose(x, 1.0 / np.arange(1.0, 11.0))
    _, report = krylov.cg(A, b, prec=lambda r: r / np.arange(1.0, 11.0))
    assert report.iterations == 1


def test_iteration_cap_reports_without_raising():
    A = sp.diags(np.linspace(1.0, 1e4, 200))
    _, report = krylov.cg(A, np.ones(200), maxit=3)
    assert not report.converged and report.iterations == 3
    _, report = krylov.minres(A, np.ones(200), maxit=3)
    assert not report.converged and report.iterations == 3
    _, report = krylov.gmres(A, np.ones(200), maxit=3)
    assert not report.converged and report.iterations == 3


def test_accepts_linear_operators_and_callables(random_spd, rng):
    A = random_spd(5)
    b = rng.standard_normal(5)
    op = LinearOperator(A.shape, matvec=lambda v: A @ v, dtype=float)
    x1, _ = krylov.minres(op, b, tol=1e-12)
    x2, _ = krylov.minres(lambda v: A @ v, b, tol=1e-12)
    np.testing.assert_allclose(x1, x2, rtol=1e-10)


def test_operator_is_linear(cube_th, rng):
    op = cube_th.operator()
    x, y = rng.standard_normal((2, cube_th.size))
    a, c = 1.7, -0.3
    lhs = op @ (a * x + c * y)
    rhs = a * (op @ x) + c * (op @ y)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


@pytest.fixture(scope="module")
def lid_driven_cube():
    from fdstokes.assembly import apply_dirichlet_lifting, assemble_TH
    from fdstokes.bench import BOUNDARY_DATA

    system, _ = apply_dirichlet_lifting(assemble_TH(2, 3), BOUNDARY_DATA["cube"])
    return system


def test_minres_on_singular_saddle_point_system(lid_driven_cube):
    system = lid_driven_cube
    prec = build_block(system, "D")
    x, report = krylov.minres(system.matrix, system.rhs, prec=prec)
    assert report.converged
    assert _true_residual(system.matrix, x, system.rhs) <= 1e-8
    estimates = np.asarray(report.preconditioned_residuals)
    assert np.all(np.diff(estimates) <= 1e-14)
    assert 0.0 <= report.prec_share <= 1.0


def test_gmres_residuals_non_increasing(lid_driven_cube):
    system = lid_driven_cube
    prec = build_block(system, "T")
    x, report = krylov.gmres(system.matrix, system.rhs, prec=prec)
    assert report.converged
    assert len(report.preconditioned_residuals) == report.iterations + 1
    assert np.all(np.diff(report.preconditioned_residuals) <= 1e-14)
    assert report.residuals[0] == 1.0
    assert report.final_residual == pytest.approx(_true_residual(system.matrix, x, system.rhs), rel=1e-6)
    assert _true_residual(system.matrix, x, system.rhs) <= 1e-8


def test_solves_are_deterministic(lid_driven_cube):
    system = lid_driven_cube
    prec = build_block(system, "D")
    _, first = krylov.minres(system.matrix, system.rhs, prec=prec)
    _, second = krylov.minres(system.matrix, system.rhs, prec=prec)
    assert first.iterations == second.iterations
    assert first.residuals == second.residuals


def test_velocity_residual_invariant_under_pressure_shift(lid_driven_cube):
    system = lid_driven_cube
    x, _ = krylov.minres(system.matrix, system.rhs, prec=build_block(system, "D"))
    u, p = system.split(x)
    shifted = p + 2.5 * system.pressure_constant
    r_u = system.A @ u + system.B.T @ p
    r_shifted = system.A @ u + system.B.T @ shifted
    np.testing.assert_allclose(r_shifted, r_u, atol=1e-12 * np.linalg.norm(r_u))
