import argparse
import csv
import logging
import sys
from itertools import zip_longest
from pathlib import Path

from pydantic import ValidationError

from .assembly import assemble_TH
from .bench import (
    VISCOSITY_SPAN,
    result_from_solution,
    run_sweep,
    solve_case,
    timing_breakdown,
    write_results_csv,
)
from .config import Config
from .errors import FDStokesError
from .geometry import make_geometry, variable_viscosity
from .logging_config import setup_logging
from .models import PRECONDITIONERS, BenchCase
from .spectral import verify_bounds

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdstokes",
        description="Fast-diagonalization block preconditioners for isogeometric Stokes systems",
    )
    parser.add_argument(
        "--log-level", type=str.upper, choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="overrides LOG_LEVEL"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="Solve one benchmark case")
    solve.add_argument("--geometry", choices=("cube", "annulus"), default="cube")
    solve.add_argument("--disc", type=str.upper, choices=("TH", "RT"), default="TH")
    solve.add_argument("--degree", type=int, required=True)
    solve.add_argument("--nel", type=int, required=True)
    solve.add_argument("--prec", choices=PRECONDITIONERS, default="pd")
    solve.add_argument("--solver", choices=("minres", "gmres"), default="minres")
    solve.add_argument("--tol", type=float, default=Config.KRYLOV_TOL)
    solve.add_argument("--maxit", type=int, default=Config.KRYLOV_MAXIT)
    solve.add_argument("--nu-k", type=float, default=1.0, help="viscosity contrast k (1 = constant)")
    solve.add_argument("--viscosity-profile", choices=("azimuthal", "xz"), default="azimuthal")
    solve.add_argument("--out", type=Path, help="CSV file for the result row")
    solve.add_argument("--history", type=Path, help="CSV file for the residual history")

    sweep = sub.add_parser("sweep", help="Run a TOML-configured sweep")
    sweep.add_argument("--config", type=Path, required=True)
    sweep.add_argument("--out", type=Path, default=Path(Config.RESULTS_DIR))

    bounds = sub.add_parser("verify-bounds", help="Check the spectral bounds of P_V and P_Q")
    bounds.add_argument("--geometry", choices=("cube", "annulus"), default="cube")
    bounds.add_argument("--degree", type=int, nargs="+", default=[2, 3])
    bounds.add_argument("--nel", type=int, nargs="+", default=[2, 4])
    bounds.add_argument("--nu-k", type=float, default=1.0)
    bounds.add_argument("--viscosity-profile", choices=("azimuthal", "xz"), default="azimuthal")
    bounds.add_argument("--mode", choices=("auto", "dense", "lanczos"), default="auto")
    return parser


def _write_history(path: Path, report) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "relative_residual", "preconditioned_residual"])
        rows = zip_longest(report.residuals, report.preconditioned_residuals)
        for i, (res, estimate) in enumerate(rows):
            writer.writerow(
                [i, "" if res is None else f"{res:.6e}", "" if estimate is None else f"{estimate:.6e}"]
            )


def cmd_solve(args) -> int:
    case = BenchCase(
        geometry=args.geometry,
        disc=args.disc,
        degree=args.degree,
        n_el=args.nel,
        nu_k=args.nu_k,
        viscosity_profile=args.viscosity_profile,
        prec=args.prec,
        solver=args.solver,
        tol=args.tol,
        maxit=args.maxit,
    )
    solution = solve_case(case)
    result = result_from_solution(solution)
    print(
        f"{case.key}: {result.iterations} iterations / {result.total_time:.2f} s, "
        f"converged={result.converged}, residual {result.final_residual:.2e}"
    )
    for row in timing_breakdown([result]):
        print(
            f"  setup {100 * row['setup_share']:.1f}%, apply {100 * row['apply_share']:.1f}%, "
            f"other {100 * row['other_share']:.1f}%"
        )
    if args.out:
        write_results_csv([result], args.out)
        logger.info(f"Wrote {args.out}")
    if args.history:
        _write_history(args.history, solution.report)
        logger.info(f"Wrote residual history to {args.history}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    outcome = run_sweep(args.config, args.out)
    print(outcome.table_path.read_text(encoding="utf-8"), end="")
    flagged = [d for d in outcome.deviations if d.flagged]
    for d in flagged:
        print(f"  deviation {d.case}: {d.observed} vs {d.reference} ({100 * d.deviation:.1f}%)")
    return EXIT_OK if outcome.all_converged else EXIT_NOT_CONVERGED


def cmd_verify_bounds(args) -> int:
    geometry = make_geometry(args.geometry)
    viscosity = variable_viscosity(args.nu_k, args.viscosity_profile, VISCOSITY_SPAN[args.geometry])
    all_ok = True
    for p in args.degree:
        for n_el in args.nel:
            system = assemble_TH(p, n_el, geometry=geometry, viscosity=viscosity)
            check = verify_bounds(system, mode=args.mode)
            b = check.bounds
            print(
                f"p={p} n_el={n_el}: velocity [{check.velocity[0]:.4f}, {check.velocity[1]:.4f}] "
                f"in [{b.delta:.4f}, {b.Delta:.4f}] {'ok' if check.velocity_ok else 'FAIL'}; "
                f"pressure [{check.pressure[0]:.4f}, {check.pressure[1]:.4f}] "
                f"in [{b.theta:.4f}, {b.Theta:.4f}] {'ok' if check.pressure_ok else 'FAIL'}"
            )
            all_ok = all_ok and check.ok
    return EXIT_OK if all_ok else EXIT_NOT_CONVERGED


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "verify-bounds": cmd_verify_bounds}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (FDStokesError, ValidationError) as e:
        logger.exception(f"Command '{args.command}' failed: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
