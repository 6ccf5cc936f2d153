import numpy as np
import pytest
import scipy.sparse as sp

from fdstokes.assembly import assemble_TH
from fdstokes.config import Config
from fdstokes.errors import NotSPDError, ParameterError, SizeGuardError, UnsupportedConfigurationError
from fdstokes.geometry import constant_viscosity, make_geometry, variable_viscosity
from fdstokes.spectral import SpectralBounds, admissible_bounds, extreme_generalized_eigs, verify_bounds


def _scaling_map(c):
    return make_geometry(
        "callable",
        evaluate=lambda eta: c * eta,
        jacobian=lambda eta: np.broadcast_to(c * np.eye(3), eta.shape[:-1] + (3, 3)),
    )


def test_identity_map_bounds(cube_th):
    bounds = admissible_bounds(make_geometry("cube"), constant_viscosity(), cube_th.grid)
    assert (bounds.delta, bounds.Delta, bounds.theta, bounds.Theta) == pytest.approx((0.5, 2.0, 1.0, 1.0))


@pytest.mark.parametrize("c", [2.0, 3.0])
def test_uniform_scaling_bounds(cube_th, c):
    bounds = admissible_bounds(_scaling_map(c), constant_viscosity(), cube_th.grid)
    assert bounds.delta == pytest.approx(c / 2)
    assert bounds.Delta == pytest.approx(2 * c**5)
    assert bounds.theta == pytest.approx(c**3)
    assert bounds.Theta == pytest.approx(c**3)


def test_constant_viscosity_scales_pressure_bounds(cube_th):
    bounds = admissible_bounds(make_geometry("cube"), constant_viscosity(4.0), cube_th.grid)
    assert bounds.theta == pytest.approx(0.25) and bounds.Theta == pytest.approx(0.25)
    assert bounds.delta == pytest.approx(2.0) and bounds.Delta == pytest.approx(8.0)


def test_variable_viscosity_widens_bounds(cube_th):
    bounds = admissible_bounds(make_geometry("cube"), variable_viscosity(100.0), cube_th.grid)
    assert bounds.nu_min >= 1.0 and bounds.nu_max <= 100.0
    assert bounds.Theta / bounds.theta == pytest.approx(bounds.nu_max / bounds.nu_min)


def test_raviart_thomas_has_no_admissible_bounds(cube_rt):
    with pytest.raises(UnsupportedConfigurationError):
        admissible_bounds(cube_rt.geometry, cube_rt.viscosity, cube_rt.grid, disc="RT")


def test_inconsistent_bounds_rejected():
    with pytest.raises(ParameterError):
        SpectralBounds(delta=2.0, Delta=1.0, theta=1.0, Theta=1.0, nu_min=1.0, nu_max=1.0)


def test_bounds_containment_with_slack():
    bounds = SpectralBounds(delta=0.5, Delta=2.0, theta=1.0, Theta=1.0, nu_min=1.0, nu_max=1.0)
    assert bounds.velocity_contains(0.5, 2.0, slack=0.0)
    assert not bounds.velocity_contains(0.49, 2.0, slack=0.0)
    assert bounds.velocity_contains(0.496, 2.0, slack=0.01)
    assert bounds.pressure_contains(1.0, 1.0)


@pytest.mark.parametrize("mode", ["dense", "lanczos"])
def test_pencil_eigenvalue_examples(random_spd, mode):
    P = random_spd(6)
    assert extreme_generalized_eigs(P, P, mode) == pytest.approx((1.0, 1.0))
    assert extreme_generalized_eigs(2 * P, P, mode) == pytest.approx((2.0, 2.0))
    assert extreme_generalized_eigs(np.diag([1.0, 3.0]), np.eye(2), mode) == pytest.approx((1.0, 3.0))


def test_lanczos_agrees_with_dense(random_spd):
    A = random_spd(40)
    P = sp.csr_matrix(random_spd(40))
    dense = extreme_generalized_eigs(A, P.toarray(), "dense")
    lanczos = extreme_generalized_eigs(A, P, "lanczos")
    np.testing.assert_allclose(lanczos, dense, rtol=1e-8)


def test_indefinite_pencils_rejected(random_spd):
    A = random_spd(4)
    with pytest.raises(NotSPDError):
        extreme_generalized_eigs(A, -np.eye(4), "dense")
    with pytest.raises(NotSPDError):
        extreme_generalized_eigs(np.diag([1.0, -1.0, 2.0]), np.eye(3), "dense")


def test_dense_eigenproblem_size_guard(random_spd, monkeypatch):
    monkeypatch.setattr(Config, "DENSE_EIG_LIMIT", 3)
    with pytest.raises(SizeGuardError):
        extreme_generalized_eigs(random_spd(4), np.eye(4), "dense")
    with pytest.raises(ParameterError):
        extreme_generalized_eigs(random_spd(4), np.eye(4), "qr")


@pytest.mark.parametrize("system_name", ["cube_th", "annulus_th"])
def test_verify_bounds_small(request, system_name):
    check = verify_bounds(request.getfixturevalue(system_name), mode="dense")
    assert check.ok
    assert check.velocity_condition >= 1.0


def test_identity_map_pressure_pencil_is_exact(cube_th):
    check = verify_bounds(cube_th, mode="dense")
    np.testing.assert_allclose(check.pressure, (1.0, 1.0), rtol=1e-10)


@pytest.mark.slow
@pytest.mark.parametrize("geometry", ["cube", "annulus"])
@pytest.mark.parametrize("degree", [2, 3])
@pytest.mark.parametrize("n_el", [2, 4])
def test_verify_bounds_sweep(geometry, degree, n_el):
    system = assemble_TH(degree, n_el, geometry=make_geometry(geometry))
    assert verify_bounds(system).ok


@pytest.mark.slow
@pytest.mark.parametrize("geometry", ["cube", "annulus"])
def test_velocity_condition_is_robust_in_h_and_p(geometry):
    geometry = make_geometry(geometry)

    def condition(p, n_el):
        return verify_bounds(assemble_TH(p, n_el, geometry=geometry)).velocity_condition

    base = condition(2, 2)
    assert condition(2, 4) == pytest.approx(base, rel=0.10)
    assert condition(3, 2) == pytest.approx(base, rel=0.15)
