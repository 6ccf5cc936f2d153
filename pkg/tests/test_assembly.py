import numpy as np
import pytest

from fdstokes import kron, krylov
from fdstokes.assembly import (
    apply_dirichlet_lifting,
    assemble_RT_parametric,
    assemble_TH,
    expand_velocity,
    load_vector,
    pressure_zero_mean,
    univariate_KM,
    univariate_KM_nitsche,
    univariate_mixed,
    velocity_h1_error,
)
from fdstokes.bench import BOUNDARY_DATA
from fdstokes.errors import (
    BoundaryDataError,
    ParameterError,
    ShapeError,
    UnsupportedConfigurationError,
    WeightError,
)
from fdstokes.geometry import constant_viscosity, make_geometry
from fdstokes.precond import build_block
from fdstokes.splines import build_space, gauss_rule


@pytest.fixture
def linear_space():
    return build_space(1, 1, 0)


def test_linear_stiffness_and_mass(linear_space):
    factors = univariate_KM(linear_space)
    np.testing.assert_allclose(factors.K, [[1.0, -1.0], [-1.0, 1.0]], atol=1e-14)
    np.testing.assert_allclose(factors.M, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-14)


def test_weighted_factors_scale(cubic_space):
    quad = gauss_rule(cubic_space, 4)
    plain = univariate_KM(cubic_space, quad)
    weighted = univariate_KM(cubic_space, quad, tau=2.0, mu=np.full(len(quad), 3.0))
    np.testing.assert_allclose(weighted.K, 2.0 * plain.K, rtol=1e-13)
    np.testing.assert_allclose(weighted.M, 3.0 * plain.M, rtol=1e-13)


def test_weight_validation(cubic_space):
    quad = gauss_rule(cubic_space, 4)
    with pytest.raises(WeightError):
        univariate_KM(cubic_space, quad, tau=np.zeros(len(quad)))
    with pytest.raises(ShapeError):
        univariate_KM(cubic_space, quad, mu=np.ones(3))


def test_interior_restriction_drops_end_functions(cubic_space):
    full = univariate_KM(cubic_space)
    inner = univariate_KM(cubic_space, restrict_interior=True)
    np.testing.assert_allclose(inner.K, full.K[1:-1, 1:-1], atol=1e-14)
    np.testing.assert_allclose(inner.M, full.M[1:-1, 1:-1], atol=1e-14)


def test_nitsche_single_linear_element(linear_space):
    gamma = 5.0
    factors = univariate_KM_nitsche(linear_space, c_pen=5.0)
    assert factors.nitsche
    np.testing.assert_allclose(
        factors.K, [[2 * gamma - 1, 1.0], [1.0, 2 * gamma - 1]], atol=1e-13
    )
    np.testing.assert_allclose(factors.M, univariate_KM(linear_space).M)


def test_nitsche_penalty_dominates(linear_space):
    small = univariate_KM_nitsche(linear_space, c_pen=10.0).K
    large = univariate_KM_nitsche(linear_space, c_pen=1000.0).K
    np.testing.assert_allclose(large - small, np.diag([2 * 990.0, 2 * 990.0]), atol=1e-10)


def test_nitsche_symmetric_positive_definite():
    space = build_space(2, 4, 1)
    K = univariate_KM_nitsche(space, c_pen=5.0 * 2).K
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() > 0


def test_nitsche_rejects_nonpositive_penalty(linear_space):
    with pytest.raises(ParameterError):
        univariate_KM_nitsche(linear_space, c_pen=0.0)


def test_mixed_matrix_reduces_to_mass(cubic_space):
    quad = gauss_rule(cubic_space, 4)
    np.testing.assert_allclose(
        univariate_mixed(cubic_space, cubic_space, quad), univariate_KM(cubic_space, quad).M, atol=1e-14
    )
    D = univariate_mixed(cubic_space, cubic_space, quad, row_deriv=0, col_deriv=1)
    # ∫ b_i b'_j + ∫ b'_i b_j = [b_i b_j]_0^1
    boundary = np.zeros_like(D)
    boundary[0, 0], boundary[-1, -1] = -1.0, 1.0
    np.testing.assert_allclose(D + D.T, boundary, atol=1e-13)


def test_taylor_hood_sizes_and_structure(cube_th):
    assert cube_th.velocity_dims == ((4, 4, 4),) * 3
    assert cube_th.pressure_dims == (4, 4, 4)
    assert cube_th.n_velocity == 192 and cube_th.n_pressure == 64
    A = cube_th.A.toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-12 * np.abs(A).max())
    assert np.linalg.eigvalsh(A).min() > 0
    assert cube_th.matrix.shape == (256, 256)
    np.testing.assert_allclose(
        cube_th.B.T @ cube_th.pressure_constant, 0.0, atol=1e-12 * abs(cube_th.B).max()
    )


def test_taylor_hood_on_annulus_is_symmetric_positive(annulus_th):
    A = annulus_th.A.toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-12 * np.abs(A).max())
    assert np.linalg.eigvalsh(A).min() > 0
    assert np.all(annulus_th.Q.diagonal() > 0)


def test_raviart_thomas_sizes_and_structure(cube_rt):
    assert cube_rt.velocity_dims == ((3, 4, 4), (4, 3, 4), (4, 4, 3))
    assert cube_rt.n_velocity == 144 and cube_rt.n_pressure == 64
    A = cube_rt.A.toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-12 * np.abs(A).max())
    assert np.linalg.eigvalsh(A).min() > 0
    np.testing.assert_allclose(
        cube_rt.B.T @ cube_rt.pressure_constant, 0.0, atol=1e-12 * abs(cube_rt.B).max()
    )


def test_raviart_thomas_configuration_errors():
    with pytest.raises(UnsupportedConfigurationError):
        assemble_RT_parametric(2, 2, geometry=make_geometry("annulus"))
    with pytest.raises(UnsupportedConfigurationError):
        assemble_RT_parametric(2, 2, viscosity=constant_viscosity(2.0))


def test_taylor_hood_lifting(cube_th):
    system, rhs = apply_dirichlet_lifting(cube_th, BOUNDARY_DATA["cube"])
    g = system.lifting
    assert np.count_nonzero(g) == 2 * 16
    assert set(np.unique(g[g != 0])) == {-1.0, 1.0}
    expected = -(cube_th.full_A @ g)[cube_th.interior_index]
    np.testing.assert_allclose(rhs[: cube_th.n_velocity], expected)
    np.testing.assert_allclose(rhs[cube_th.n_velocity :], -(cube_th.full_B @ g))
    np.testing.assert_array_equal(system.rhs, rhs)
    assert not np.any(cube_th.rhs)


def test_lifting_without_data_is_trivial(cube_th):
    _, rhs = apply_dirichlet_lifting(cube_th, {})
    assert not np.any(rhs)


def test_raviart_thomas_tangential_data(cube_rt):
    system, rhs = apply_dirichlet_lifting(cube_rt, BOUNDARY_DATA["cube"])
    u1, u2, u3 = cube_rt.split_velocity(rhs[: cube_rt.n_velocity])
    assert np.linalg.norm(u1) > 0
    assert not np.any(u2) and not np.any(u3)
    assert not np.any(rhs[cube_rt.n_velocity :])


def test_raviart_thomas_rejects_normal_data(cube_rt):
    with pytest.raises(BoundaryDataError):
        apply_dirichlet_lifting(cube_rt, {(3, 1): (0.0, 0.0, 1.0)})


@pytest.mark.parametrize(
    "faces", [{(4, 0): (1.0, 0.0, 0.0)}, {(1,): (1.0, 0.0, 0.0)}, {(1, 0): (1.0, 0.0)}]
)
def test_malformed_face_data(cube_th, faces):
    with pytest.raises(BoundaryDataError):
        apply_dirichlet_lifting(cube_th, faces)


def test_load_vector(cube_th):
    unchanged = load_vector(cube_th, lambda x: np.zeros(x.shape))
    assert not np.any(unchanged.rhs)
    loaded = load_vector(cube_th, lambda x: np.broadcast_to([1.0, 0.0, 0.0], x.shape))
    f1, f2, f3 = cube_th.split_velocity(loaded.rhs[: cube_th.n_velocity])
    assert np.all(f1 > 0) and not np.any(f2) and not np.any(f3)


def test_pressure_zero_mean(cube_th, rng):
    p = rng.standard_normal(cube_th.n_pressure) + 3.0
    shifted = pressure_zero_mean(cube_th, p)
    assert abs(cube_th.pressure_weights @ shifted) < 1e-12
    np.testing.assert_allclose(shifted - p, (shifted - p)[0])


def test_expand_velocity_places_interior_values(cube_th, rng):
    u = rng.standard_normal(cube_th.n_velocity)
    full = expand_velocity(cube_th, u)
    assert full.size == 3 * 6**3
    np.testing.assert_array_equal(full[cube_th.interior_index], u)
    full_vel = kron.unvec(full[: 6**3], (6, 6, 6))
    assert not np.any(full_vel[0]) and not np.any(full_vel[:, :, -1])


def test_h1_error_of_discrete_field(cube_th, rng):
    u = rng.standard_normal(cube_th.n_velocity)
    error = velocity_h1_error(cube_th, u, lambda x: np.zeros(x.shape + (3,)))
    quad = cube_th.grid.quads[0]
    f = univariate_KM(cube_th.velocity_spaces[0][0], quad, restrict_interior=True)
    laplace = (
        np.kron(f.K, np.kron(f.M, f.M)) + np.kron(f.M, np.kron(f.K, f.M)) + np.kron(f.M, np.kron(f.M, f.K))
    )
    expected = sum(v @ laplace @ v for v in cube_th.split_velocity(u))
    np.testing.assert_allclose(error**2, expected, rtol=1e-10)


def test_assembly_parameter_errors():
    with pytest.raises(ParameterError):
        assemble_TH(2, 2, alpha=2)


def _bump(t):
    # t^2 (1 - t)^2 and its first three derivatives
    return (
        t**2 * (1 - t) ** 2,
        2 * t - 6 * t**2 + 4 * t**3,
        2 - 12 * t + 12 * t**2,
        -12 + 24 * t,
    )


def _manufactured_force(x):
    (sx, dx, ddx, dddx), (sy, dy, ddy, dddy), (sz, _, ddz, _) = (_bump(x[..., a]) for a in range(3))
    f = np.zeros(x.shape)
    f[..., 0] = -(ddx * dy * sz + sx * dddy * sz + sx * dy * ddz)
    f[..., 1] = dddx * sy * sz + dx * ddy * sz + dx * sy * ddz
    return f


def _manufactured_gradient(x):
    (sx, dx, ddx, _), (sy, dy, ddy, _), (sz, dz, _, _) = (_bump(x[..., a]) for a in range(3))
    grad = np.zeros(x.shape + (3,))
    grad[..., 0, :] = np.stack([dx * dy * sz, sx * ddy * sz, sx * dy * dz], axis=-1)
    grad[..., 1, :] = -np.stack([ddx * sy * sz, dx * dy * sz, dx * sy * dz], axis=-1)
    return grad


@pytest.mark.slow
def test_manufactured_velocity_converges_in_h1():
    # divergence-free u vanishing on the boundary, p = 0
    errors = []
    for n_el in (2, 4, 8):
        system = load_vector(assemble_TH(2, n_el), _manufactured_force)
        x, report = krylov.minres(system.matrix, system.rhs, prec=build_block(system, "D"), tol=1e-10)
        assert report.converged
        u, _ = system.split(x)
        errors.append(velocity_h1_error(system, u, _manufactured_gradient))
    e2, e4, e8 = errors
    assert e2 / e4 >= 4.0
    assert 6.0 <= e4 / e8 <= 16.0
