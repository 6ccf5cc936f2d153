"""
Spectral bounds of the block preconditioners and their numerical verification.

The admissible constants are evaluated from the geometry and viscosity on a
quadrature grid; the extreme generalized eigenvalues are computed densely or
by a preconditioned Lanczos iteration.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .assembly import StokesSystem, TensorGrid, sample_geometry
from .config import Config
from .errors import (
    NotSPDError,
    ParameterError,
    ShapeError,
    SizeGuardError,
    UnsupportedConfigurationError,
)
from .geometry import GeometryMap, ViscosityField
from .precond import build_PQ_for, build_PV_for

logger = logging.getLogger(__name__)

KORN_CONSTANT = 0.5


@dataclass(frozen=True)
class SpectralBounds:
    """Velocity interval [delta, Delta] and pressure interval [theta, Theta]."""

    delta: float
    Delta: float
    theta: float
    Theta: float
    nu_min: float
    nu_max: float
    korn: float = KORN_CONSTANT
    korn_hat: float = KORN_CONSTANT

    def __post_init__(self):
        if not 0 < self.delta <= self.Delta or not 0 < self.theta <= self.Theta:
            raise ParameterError(
                f"Inconsistent bounds delta={self.delta}, Delta={self.Delta}, "
                f"theta={self.theta}, Theta={self.Theta}"
            )

    def velocity_contains(self, lam_min: float, lam_max: float, slack: float | None = None) -> bool:
        slack = Config.BOUND_SLACK if slack is None else slack
        return lam_min >= (1 - slack) * self.delta and lam_max <= (1 + slack) * self.Delta

    def pressure_contains(self, lam_min: float, lam_max: float, slack: float | None = None) -> bool:
        slack = Config.BOUND_SLACK if slack is None else slack
        return lam_min >= (1 - slack) * self.theta and lam_max <= (1 + slack) * self.Theta


def admissible_bounds(
    geometry: GeometryMap,
    viscosity: ViscosityField,
    grid: TensorGrid,
    disc: str = "TH",
) -> SpectralBounds:
    """
    Taylor-Hood spectral constants with inf/sup taken over the grid nodes.

    delta = C_Korn nu_min min(|det J| / ||J||^2)
    Delta = nu_max / C^_Korn * max(|det J| ||J||^2, |det J| ||J^-1||^2)
    theta, Theta = min, max of |det J| / nu

    Both candidates for the Delta supremum are evaluated and the larger is kept.
    """
    if disc.upper() != "TH":
        raise UnsupportedConfigurationError(
            f"Admissible spectral constants are only available for Taylor-Hood, got '{disc}'"
        )
    samples = sample_geometry(geometry, grid)
    nu = viscosity(samples.physical)
    abs_det = samples.abs_det
    norm_J = np.linalg.norm(samples.jacobian, ord=2, axis=(-2, -1))
    norm_Jinv = np.linalg.norm(samples.jacobian_inv, ord=2, axis=(-2, -1))
    nu_min, nu_max = float(nu.min()), float(nu.max())

    delta = KORN_CONSTANT * nu_min * float(np.min(abs_det / norm_J**2))
    upper_forward = float(np.max(abs_det * norm_J**2))
    upper_inverse = float(np.max(abs_det * norm_Jinv**2))
    Delta = nu_max / KORN_CONSTANT * max(upper_forward, upper_inverse)
    ratio = abs_det / nu
    bounds = SpectralBounds(
        delta=delta,
        Delta=Delta,
        theta=float(ratio.min()),
        Theta=float(ratio.max()),
        nu_min=nu_min,
        nu_max=nu_max,
    )
    logger.debug(
        f"Admissible bounds on '{geometry.kind}': delta={bounds.delta:.4e}, Delta={bounds.Delta:.4e} "
        f"(candidates {upper_forward:.4e}, {upper_inverse:.4e}), "
        f"theta={bounds.theta:.4e}, Theta={bounds.Theta:.4e}"
    )
    return bounds


def _dense(op) -> np.ndarray:
    if hasattr(op, "dense"):
        return op.dense()
    if sp.issparse(op):
        return op.toarray()
    return np.asarray(op, dtype=float)


def _dense_eigs(A, P, limit: int) -> tuple[float, float]:
    n = A.shape[0]
    if n > limit:
        raise SizeGuardError(f"Dense generalized eigenproblem of size {n} exceeds the limit {limit}")
    a, b = _dense(A), _dense(P)
    if a.shape != b.shape:
        raise ShapeError(f"Operator shapes {a.shape} and {b.shape} differ")
    try:
        w = sla.eigh(0.5 * (a + a.T), 0.5 * (b + b.T), eigvals_only=True)
    except np.linalg.LinAlgError as e:
        logger.exception("Dense generalized eigensolve failed")
        raise NotSPDError("Preconditioner of the pencil is not positive definite") from e
    return float(w[0]), float(w[-1])


def _inverse_of(P):
    if hasattr(P, "apply"):
        return P.apply
    if sp.issparse(P):
        return factorized(sp.csc_matrix(P))
    if isinstance(P, np.ndarray):
        factor = sla.cho_factor(P)
        return lambda r: sla.cho_solve(factor, r)
    return P


def _lanczos_eigs(A, P, steps: int, seed: int = 0) -> tuple[float, float]:
    """
    Lanczos on P^{-1} A in the P inner product, using only P^{-1} applications.

    Residual-space vectors u_j = P v_j are kept next to the search vectors
    v_j for full reorthogonalization.
    """
    matvec = A.dot if hasattr(A, "dot") else A
    solve = _inverse_of(P)
    n = A.shape[0]
    r = np.random.default_rng(seed).standard_normal(n)
    z = solve(r)
    beta = float(r @ z)
    if beta <= 0:
        raise NotSPDError("Preconditioner is not positive definite")
    beta = np.sqrt(beta)
    U, V = [], []
    alphas, betas = [], []
    for _ in range(min(steps, n)):
        v, u = z / beta, r / beta
        V.append(v)
        U.append(u)
        w = matvec(v)
        alpha = float(v @ w)
        w = w - alpha * u - (betas[-1] * U[-2] if betas else 0.0)
        Us, Vs = np.array(U).T, np.array(V).T
        w = w - Us @ (Vs.T @ w)
        alphas.append(alpha)
        z = solve(w)
        beta = float(w @ z)
        if beta < 0:
            raise NotSPDError("Preconditioner is not positive definite")
        beta = np.sqrt(beta)
        if beta <= 1e-12 * abs(alpha):
            break
        betas.append(beta)
        r = w
    off = np.asarray(betas[: len(alphas) - 1])
    theta = sla.eigh_tridiagonal(np.asarray(alphas), off, eigvals_only=True)
    return float(theta[0]), float(theta[-1])


def extreme_generalized_eigs(A, P, mode: str = "dense") -> tuple[float, float]:
    """
    Extreme eigenvalues of the pencil (A, P), i.e. of P^{-1} A.

    :param A: SPD matrix (dense or sparse), or an object with ``dot``/``dense``.
    :param P: SPD preconditioner: matrix, or object with ``dense()`` (dense
        mode) or ``apply()`` computing P^{-1} r (lanczos mode).
    :param mode: "dense" (guarded by DENSE_EIG_LIMIT) or "lanczos"
        (LANCZOS_STEPS iterations), "auto" picks dense when it fits.
    """
    mode = mode.lower()
    if mode == "auto":
        mode = "dense" if A.shape[0] <= Config.DENSE_EIG_LIMIT else "lanczos"
    if mode == "dense":
        lam_min, lam_max = _dense_eigs(A, P, Config.DENSE_EIG_LIMIT)
    elif mode == "lanczos":
        lam_min, lam_max = _lanczos_eigs(A, P, Config.LANCZOS_STEPS)
    else:
        raise ParameterError(f"Unknown eigenvalue mode '{mode}'")
    if lam_min <= 0:
        raise NotSPDError(f"Pencil has a nonpositive eigenvalue {lam_min:.3e}")
    return lam_min, lam_max


@dataclass(frozen=True)
class BoundsCheck:
    bounds: SpectralBounds
    velocity: tuple[float, float]
    pressure: tuple[float, float]
    velocity_ok: bool
    pressure_ok: bool

    @property
    def ok(self) -> bool:
        return self.velocity_ok and self.pressure_ok

    @property
    def velocity_condition(self) -> float:
        return self.velocity[1] / self.velocity[0]


def verify_bounds(
    system: StokesSystem, mode: str = "auto", slack: float | None = None
) -> BoundsCheck:
    """
    Compare the extreme eigenvalues of (A, P_V) and (Q, P_Q) with the
    admissible bounds of a Taylor-Hood system.

    The pressure check uses theta <= lambda_min <= lambda_max <= Theta.
    """
    bounds = admissible_bounds(system.geometry, system.viscosity, system.grid, system.disc)
    velocity = extreme_generalized_eigs(system.A, build_PV_for(system), mode)
    pressure = extreme_generalized_eigs(system.Q, build_PQ_for(system), mode)
    check = BoundsCheck(
        bounds=bounds,
        velocity=velocity,
        pressure=pressure,
        velocity_ok=bounds.velocity_contains(*velocity, slack),
        pressure_ok=bounds.pressure_contains(*pressure, slack),
    )
    message = (
        f"{system.disc} p={system.degree} n_el={system.n_el} on '{system.geometry.kind}': "
        f"velocity [{velocity[0]:.4f}, {velocity[1]:.4f}] in [{bounds.delta:.4f}, {bounds.Delta:.4f}], "
        f"pressure [{pressure[0]:.4f}, {pressure[1]:.4f}] in [{bounds.theta:.4f}, {bounds.Theta:.4f}]"
    )
    if check.ok:
        logger.info(f"Bounds hold: {message}")
    else:
        logger.warning(f"Bounds violated: {message}")
    return check
