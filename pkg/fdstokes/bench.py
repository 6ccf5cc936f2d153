"""
Benchmark harness: problem catalog, single cases, sweeps and reference regression.
"""

import csv
import logging
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import krylov
from .assembly import (
    StokesSystem,
    apply_dirichlet_lifting,
    assemble_RT_parametric,
    assemble_TH,
    pressure_zero_mean,
)
from .config import Config
from .errors import FDStokesError, ParameterError
from .geometry import make_geometry, variable_viscosity
from .models import (
    RESULT_COLUMNS,
    BenchCase,
    BenchResult,
    ReferenceDeviation,
    SolveReport,
    SweepConfig,
)
from .precond import build_block, ic0_build

logger = logging.getLogger(__name__)

# Driven cavity on the cube: lid at eta_3 = 1, counter-moving floor at eta_3 = 0.
# On the annulus, the face eta_2 = 0 is the plane y = 0 and eta_2 = 1 the
# opposite plane at angle pi/4; all other faces are no-slip.
BOUNDARY_DATA = {
    "cube": {(3, 1): (1.0, 0.0, 0.0), (3, 0): (-1.0, 0.0, 0.0)},
    "annulus": {
        (2, 0): (-1.0, 0.0, 0.0),
        (2, 1): (np.sqrt(2.0) / 2.0, np.sqrt(2.0) / 2.0, 0.0),
    },
}

# prec id -> (block kind, geometry-aware)
BLOCK_PRECONDITIONERS = {
    "pd": ("D", False),
    "pdg": ("D", True),
    "pt": ("T", False),
    "ptg": ("T", True),
    "pc": ("C", False),
    "pcg": ("C", True),
}

# Angular extent of each catalog domain in the x-y plane, for the azimuthal viscosity.
VISCOSITY_SPAN = {"cube": np.pi / 2, "annulus": np.pi / 4}

FAILED_CELL = "∗"


def assemble_case(case: BenchCase) -> StokesSystem:
    """Assemble the catalog problem of a case, boundary data included."""
    geometry = make_geometry(case.geometry)
    viscosity = variable_viscosity(case.nu_k, case.viscosity_profile, VISCOSITY_SPAN[case.geometry])
    if case.disc == "TH":
        system = assemble_TH(case.degree, case.n_el, case.alpha, geometry, viscosity)
    else:
        system = assemble_RT_parametric(case.degree, case.n_el, case.alpha, geometry, viscosity)
    system, _ = apply_dirichlet_lifting(system, BOUNDARY_DATA[case.geometry])
    return system


def build_preconditioner(system: StokesSystem, prec: str):
    if prec == "ic0":
        return ic0_build(system.A_blocks, system.Q)
    kind, geometric = BLOCK_PRECONDITIONERS[prec]
    return build_block(system, kind, geometric)


@dataclass(frozen=True, eq=False)
class CaseSolution:
    """Solved case: zero-mean pressure and the eliminated-space velocity."""

    case: BenchCase
    system: StokesSystem = field(repr=False)
    velocity: np.ndarray = field(repr=False)
    pressure: np.ndarray = field(repr=False)
    report: SolveReport
    assembly_time: float
    setup_time: float


def solve_case(case: BenchCase) -> CaseSolution:
    """Assemble, precondition and solve one case."""
    logger.info(f"Running case {case.key}")
    start = time.perf_counter()
    system = assemble_case(case)
    assembly_time = time.perf_counter() - start

    start = time.perf_counter()
    prec = build_preconditioner(system, case.prec)
    setup_time = time.perf_counter() - start

    solver = krylov.minres if case.solver == "minres" else krylov.gmres
    x, report = solver(system.matrix, system.rhs, prec=prec, tol=case.tol, maxit=case.maxit)
    velocity, pressure = system.split(x)
    return CaseSolution(
        case=case,
        system=system,
        velocity=velocity,
        pressure=pressure_zero_mean(system, pressure),
        report=report,
        assembly_time=assembly_time,
        setup_time=setup_time,
    )


def result_from_solution(solution: CaseSolution) -> BenchResult:
    report = solution.report
    return BenchResult(
        case=solution.case,
        iterations=report.iterations,
        converged=report.converged,
        total_time=solution.setup_time + report.wall_time,
        setup_time=solution.setup_time,
        assembly_time=solution.assembly_time,
        solve_time=report.wall_time,
        prec_time=report.prec_time,
        prec_share=report.prec_share,
        velocity_dofs=solution.system.n_velocity,
        pressure_dofs=solution.system.n_pressure,
        final_residual=report.final_residual,
    )


def run_case(case: BenchCase) -> BenchResult:
    """
    End-to-end run of one case.

    Library errors are re-raised with the case key prepended to the message.
    """
    try:
        solution = solve_case(case)
    except FDStokesError as e:
        logger.exception(f"Case {case.key} failed")
        raise type(e)(f"{case.key}: {e}") from e
    result = result_from_solution(solution)
    logger.info(
        f"Case {case.key}: {result.iterations} iterations, total {result.total_time:.2f}s "
        f"(setup {result.setup_time:.2f}s, assembly {result.assembly_time:.2f}s)"
    )
    return result


def _failed_result(case: BenchCase, error: Exception) -> BenchResult:
    return BenchResult(
        case=case, iterations=0, converged=False, total_time=0.0, setup_time=0.0, error=str(error)
    )


def load_sweep_config(path: str | Path) -> SweepConfig:
    """Read a TOML sweep file into a validated SweepConfig."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
        return SweepConfig(**data.get("sweep", data))
    except (OSError, tomllib.TOMLDecodeError, ValidationError) as e:
        logger.exception(f"Could not load sweep configuration {path}")
        raise ParameterError(f"Invalid sweep configuration {path}: {e}") from e


def sweep_stem(config: SweepConfig) -> str:
    return f"{config.geometry}_{config.disc}_{config.prec}".lower()


def format_cell(result: BenchResult) -> str:
    if result.error is not None or not result.converged:
        return FAILED_CELL
    return f"{result.iterations} / {result.total_time:.2f}"


def format_table(results: list[BenchResult], title: str = "") -> str:
    """Aligned text table: rows n_el, columns p, cells "iterations / time"."""
    degrees = sorted({r.case.degree for r in results})
    n_els = sorted({r.case.n_el for r in results})
    cells = {(r.case.n_el, r.case.degree): format_cell(r) for r in results}
    header = ["n_el"] + [f"p={p}" for p in degrees]
    rows = [[str(n)] + [cells.get((n, p), "") for p in degrees] for n in n_els]
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
    lines = [title] if title else []
    lines.append(" | ".join(h.rjust(w) for h, w in zip(header, widths)))
    lines.append("-+-".join("-" * w for w in widths))
    lines.extend(" | ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows)
    return "\n".join(lines) + "\n"


def write_results_csv(results: list[BenchResult], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for result in results:
            writer.writerow(result.row())


@dataclass(frozen=True)
class SweepOutcome:
    config: SweepConfig
    results: list[BenchResult]
    csv_path: Path
    table_path: Path
    deviations: list[ReferenceDeviation] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.results)


def run_sweep(config: SweepConfig | str | Path, out_dir: str | Path | None = None) -> SweepOutcome:
    """
    Run every (degree, n_el) cell of a sweep and write
    ``<geometry>_<disc>_<prec>.csv`` and ``.txt`` into out_dir.

    A failing cell is logged and marked in the table instead of aborting the sweep.
    """
    if not isinstance(config, SweepConfig):
        config = load_sweep_config(config)
    out_dir = Path(out_dir or Config.RESULTS_DIR)
    out_dir.mkdir(parents=True, exist_ok=True)

    cases = config.cases()
    logger.info(f"Starting sweep '{config.name}' with {len(cases)} cases")
    results = []
    for i, case in enumerate(cases, start=1):
        logger.info(f"Sweep '{config.name}': case {i}/{len(cases)}")
        try:
            results.append(run_case(case))
        except FDStokesError as e:
            logger.error(f"Marking case {case.key} as failed: {e}")
            results.append(_failed_result(case, e))

    stem = sweep_stem(config)
    csv_path = out_dir / f"{stem}.csv"
    table_path = out_dir / f"{stem}.txt"
    write_results_csv(results, csv_path)
    title = f"({config.disc}) {config.prec}-{config.solver.upper()} on {config.geometry}: Iterations / Time (sec)"
    table_path.write_text(format_table(results, title), encoding="utf-8")
    logger.info(f"Wrote {csv_path} and {table_path}")

    deviations = []
    if config.compare_reference:
        deviations = compare_to_reference(results, tolerance=config.tolerance)
    return SweepOutcome(config, results, csv_path, table_path, deviations)


def timing_breakdown(results: list[BenchResult]) -> list[dict]:
    """
    Per-case shares of the total time: preconditioner setup, preconditioner
    application, and the remainder (matvecs and orthogonalization).
    """
    rows = []
    for r in results:
        total = r.total_time
        if total <= 0:
            setup = apply = other = 0.0
        else:
            setup = r.setup_time / total
            apply = r.prec_time / total
            other = max(0.0, 1.0 - setup - apply)
        rows.append(
            {
                "case": r.case.key,
                "setup_time": r.setup_time,
                "apply_time": r.prec_time,
                "total_time": total,
                "setup_share": setup,
                "apply_share": apply,
                "other_share": other,
            }
        )
    return rows


def load_reference(path: str | Path | None = None) -> list[dict]:
    path = Path(path or Config.REFERENCE_CSV)
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def compare_to_reference(
    results: list[BenchResult],
    reference_csv: str | Path | None = None,
    tolerance: float | None = None,
) -> list[ReferenceDeviation]:
    """
    Relative iteration-count deviation of each result from the reference table.

    Only constant-viscosity results with a matching reference row are compared;
    failed runs are always flagged.
    """
    tolerance = Config.REGRESSION_TOLERANCE if tolerance is None else tolerance
    reference = {
        (
            row["geometry"],
            row["disc"].upper(),
            row["prec"],
            row["solver"],
            int(row["degree"]),
            int(row["n_el"]),
        ): row
        for row in load_reference(reference_csv)
    }
    deviations = []
    for r in results:
        if r.case.nu_k != 1.0:
            continue
        c = r.case
        row = reference.get((c.geometry, c.disc, c.prec, c.solver, c.degree, c.n_el))
        if row is None:
            continue
        expected = int(row["iterations"])
        observed = r.iterations if r.converged else None
        deviation = float("inf") if observed is None else abs(observed - expected) / expected
        entry = ReferenceDeviation(
            case=c.key,
            table=row["table"],
            observed=observed,
            reference=expected,
            deviation=deviation,
            flagged=deviation > tolerance,
        )
        if entry.flagged:
            logger.warning(
                f"Case {c.key} deviates from reference {row['table']}: "
                f"{observed} vs {expected} iterations ({100 * deviation:.1f}%)"
            )
        deviations.append(entry)
    return deviations
