import os
from typing import Callable, TypeVar

from dotenv import dotenv_values

T = TypeVar("T")

# Load the .env file if present (useful for local development)
file_env_vars = dotenv_values()


# Use environment variables from the runtime environment, falling back to .env file if not found
def get_env_variable(key, default=None):
    return os.getenv(key, file_env_vars.get(key, default))


def _typed(key: str, default: T, cast: Callable[[str], T]) -> T:
    """Typed setting; empty values fall back to the default."""
    raw = get_env_variable(key, default)
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except ValueError as e:
        raise ValueError(f"Setting {key}={raw!r} is not a valid {cast.__name__}") from e


def get_float(key: str, default: float) -> float:
    return _typed(key, default, float)


def get_int(key: str, default: int) -> int:
    return _typed(key, default, int)


def get_str(key: str, default: str) -> str:
    return _typed(key, default, str)


class Config:
    # Krylov solver settings
    KRYLOV_TOL = get_float("KRYLOV_TOL", 1e-8)
    KRYLOV_MAXIT = get_int("KRYLOV_MAXIT", 20000)
    GMRES_REORTH_THRESHOLD = get_float("GMRES_REORTH_THRESHOLD", 1e-8)

    # IC(0) baseline
    IC0_INNER_TOL = get_float("IC0_INNER_TOL", 1e-2)
    IC0_INNER_MAXIT = get_int("IC0_INNER_MAXIT", 200)
    IC0_SHIFT_FACTOR = get_float("IC0_SHIFT_FACTOR", 1e-3)

    # Separable approximation of the geometry coefficients
    SEPARABLE_FIT_TOL = get_float("SEPARABLE_FIT_TOL", 1e-8)
    SEPARABLE_FIT_MAX_SWEEPS = get_int("SEPARABLE_FIT_MAX_SWEEPS", 50)

    # Dense oracles and spectral checks
    DENSE_EIG_LIMIT = get_int("DENSE_EIG_LIMIT", 4000)
    KRON_DENSE_LIMIT = get_int("KRON_DENSE_LIMIT", 10000)
    LANCZOS_STEPS = get_int("LANCZOS_STEPS", 200)
    BOUND_SLACK = get_float("BOUND_SLACK", 0.01)

    # Nitsche penalty, C_pen = C_PEN_FACTOR * (regularity + 1)
    C_PEN_FACTOR = get_float("C_PEN_FACTOR", 5.0)

    # Benchmark output
    RESULTS_DIR = get_str("RESULTS_DIR", "results")
    REFERENCE_CSV = get_str("REFERENCE_CSV", "data/reference/reference_iterations.csv")
    REGRESSION_TOLERANCE = get_float("REGRESSION_TOLERANCE", 0.2)

    # Logging configuration
    LOG_LEVEL = get_str("LOG_LEVEL", "INFO")
    LOG_FILE = get_env_variable("LOG_FILE", "")
