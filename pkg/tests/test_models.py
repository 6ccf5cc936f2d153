import math

import pytest
from pydantic import ValidationError

from fdstokes.config import Config
from fdstokes.models import RESULT_COLUMNS, BenchCase, BenchResult, SolveReport, SweepConfig


def test_case_defaults_and_normalization():
    case = BenchCase(geometry="CUBE", disc="th", degree=3, n_el=4, prec="PD", solver="MINRES")
    assert (case.geometry, case.disc, case.prec, case.solver) == ("cube", "TH", "pd", "minres")
    assert case.alpha == 2
    assert case.tol == Config.KRYLOV_TOL and case.maxit == Config.KRYLOV_MAXIT
    assert case.key == "cube/TH/pd/minres/p=3/nel=4/k=1"


@pytest.mark.parametrize(
    "params",
    [
        dict(prec="pt", solver="minres"),
        dict(prec="pdg", solver="gmres"),
        dict(prec="ic0", solver="gmres"),
        dict(disc="RT", geometry="annulus"),
        dict(disc="RT", nu_k=10.0),
        dict(regularity=2),
        dict(nu_k=0.5),
        dict(prec="jacobi"),
    ],
)
def test_invalid_cases(params):
    base = dict(geometry="cube", degree=2, n_el=4)
    base.update(params)
    with pytest.raises(ValidationError):
        BenchCase(**base)


def test_regularity_range():
    assert BenchCase(geometry="cube", degree=2, n_el=4, regularity=-1).alpha == -1
    assert BenchCase(geometry="cube", degree=2, n_el=4, regularity=0).alpha == 0


def test_sweep_cases_order():
    config = SweepConfig(geometry="annulus", prec="ptg", solver="gmres", degrees=[2, 3], n_els=[4, 8], tol=1e-6)
    cases = config.cases()
    assert [(c.n_el, c.degree) for c in cases] == [(4, 2), (4, 3), (8, 2), (8, 3)]
    assert all(c.tol == 1e-6 and c.prec == "ptg" for c in cases)


def test_sweep_rejects_bad_pairing():
    with pytest.raises(ValidationError):
        SweepConfig(prec="pc", solver="minres")


def test_result_row_columns():
    result = BenchResult(
        case=BenchCase(geometry="cube", degree=2, n_el=4),
        iterations=3,
        converged=True,
        total_time=0.5,
        setup_time=0.1,
    )
    row = result.row()
    assert tuple(row) == RESULT_COLUMNS
    assert row["error"] == "" and row["total_time"] == "0.5000"


def test_solve_report_properties():
    report = SolveReport(iterations=2, residuals=[1.0, 0.1, 0.001], converged=True, wall_time=2.0, prec_time=0.5)
    assert report.final_residual == 0.001
    assert report.prec_share == 0.25
    empty = SolveReport(iterations=0, converged=True)
    assert math.isnan(empty.final_residual) and empty.prec_share == 0.0


def test_viscosity_profile_in_key_and_row():
    case = BenchCase(geometry="annulus", degree=2, n_el=4, prec="pdg", nu_k=1e4, viscosity_profile="XZ")
    assert case.key.endswith("/k=10000/xz")
    assert BenchCase(geometry="annulus", degree=2, n_el=4, nu_k=1e4).key.endswith("/k=10000")
    result = BenchResult(case=case, iterations=70, converged=True, total_time=1.0, setup_time=0.1)
    assert result.row()["viscosity_profile"] == "xz"
    sweep = SweepConfig(geometry="annulus", degrees=[2], n_els=[4], nu_k=100.0, viscosity_profile="xz")
    assert sweep.cases()[0].viscosity_profile == "xz"
