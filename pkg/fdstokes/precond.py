"""
Block preconditioners for the Stokes saddle-point system.

The velocity block is approximated by one Kronecker-sum solver per
component (inverted by fast diagonalization), the Schur complement by the
pressure mass P_Q = M3 ⊗ M2 ⊗ M1. Geometry-aware variants replace the
univariate factors by weighted ones fitted to the mapped coefficients and
add a diagonal scaling, P^G = D^{1/2} P D^{1/2}.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, spsolve_triangular

from . import kron, krylov
from .assembly import (
    StokesSystem,
    TensorGrid,
    UnivariateFactors,
    rt_univariate_factors,
    sample_geometry,
    univariate_KM,
)
from .config import Config
from .errors import (
    FactorizationError,
    ParameterError,
    SeparableFitError,
    ShapeError,
    WeightError,
)
from .fd import FDSolver, fd_apply, fd_build
from .geometry import GeometryMap, ViscosityField
from .splines import SplineSpace

logger = logging.getLogger(__name__)


def _solve_with(p) -> Callable[[np.ndarray], np.ndarray]:
    return p.apply if hasattr(p, "apply") else p


@dataclass(frozen=True, eq=False)
class VelocityPreconditioner:
    """
    Block-diagonal velocity preconditioner, one FD solver per component.

    With ``scaling`` D set, this represents D^{1/2} P D^{1/2}.
    """

    solvers: tuple[FDSolver, FDSolver, FDSolver]
    scaling: np.ndarray | None = field(default=None, repr=False)
    label: str = "P_V"

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(s.size for s in self.solvers)

    @property
    def size(self) -> int:
        return sum(self.sizes)

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.size != self.size:
            raise ShapeError(f"Velocity residual has length {r.size}, expected {self.size}")
        if self.scaling is not None:
            r = r / np.sqrt(self.scaling)
        bounds = np.cumsum((0,) + self.sizes)
        s = np.concatenate(
            [fd_apply(solver, r[bounds[k] : bounds[k + 1]]) for k, solver in enumerate(self.solvers)]
        )
        if self.scaling is not None:
            s = s / np.sqrt(self.scaling)
        return s

    def unscaled_diagonal(self) -> np.ndarray:
        return np.concatenate([solver.diagonal() for solver in self.solvers])

    def diagonal(self) -> np.ndarray:
        diag = self.unscaled_diagonal()
        return diag if self.scaling is None else diag * self.scaling

    def dense(self) -> np.ndarray:
        mat = sla.block_diag(*(kron.kron_dense(s.operator()) for s in self.solvers))
        if self.scaling is not None:
            root = np.sqrt(self.scaling)
            mat = root[:, None] * mat * root[None, :]
        return mat


@dataclass(frozen=True, eq=False)
class PressurePreconditioner:
    """P_Q = M3 ⊗ M2 ⊗ M1 with banded Cholesky factors, optionally scaled by D_Q."""

    masses: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    inverse: kron.KronInverse = field(repr=False)
    scaling: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.inverse.size

    @property
    def operator(self) -> kron.KronOperator:
        M1, M2, M3 = self.masses
        return kron.KronOperator.from_factors((1.0, (M3, M2, M1)))

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.scaling is None:
            return self.inverse.apply(r)
        root = np.sqrt(self.scaling)
        return self.inverse.apply(r / root) / root

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if self.scaling is None:
            return self.operator.matvec(x)
        root = np.sqrt(self.scaling)
        return root * self.operator.matvec(root * x)

    def diagonal(self) -> np.ndarray:
        diag = self.operator.diagonal()
        return diag if self.scaling is None else diag * self.scaling

    def dense(self) -> np.ndarray:
        mat = kron.kron_dense(self.operator)
        if self.scaling is not None:
            root = np.sqrt(self.scaling)
            mat = root[:, None] * mat * root[None, :]
        return mat


@dataclass(frozen=True, eq=False)
class SeparableWeights:
    """
    Univariate weights of one velocity component, node values per direction.

    The fitted coefficient is diag(tau1 mu2 mu3, mu1 tau2 mu3, mu1 mu2 tau3).
    """

    tau: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    mu: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    objective: tuple[float, ...] = ()
    converged: bool = True

    def products(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The three fitted diagonal entries on the tensor grid."""
        out = []
        for d in range(3):
            parts = [self.tau[e] if e == d else self.mu[e] for e in range(3)]
            out.append(parts[0][:, None, None] * parts[1][None, :, None] * parts[2][None, None, :])
        return tuple(out)


def _velocity_factors(
    system: StokesSystem, weights: Sequence[SeparableWeights] | None = None
) -> tuple[tuple[UnivariateFactors, ...], ...]:
    quad = system.grid.quads[0]
    if system.disc == "RT":
        node_weights = None
        if weights is not None:
            node_weights = [[(w.tau[d], w.mu[d]) for d in range(3)] for w in weights]
        return rt_univariate_factors(
            system.degree, system.n_el, system.regularity, system.c_pen, quad, node_weights
        )
    factors = []
    for k in range(3):
        space = system.velocity_spaces[k][0]
        if weights is None:
            shared = univariate_KM(space, quad, restrict_interior=True)
            factors.append((shared,) * 3)
        else:
            w = weights[k]
            factors.append(
                tuple(
                    univariate_KM(space, quad, w.tau[d], w.mu[d], restrict_interior=True)
                    for d in range(3)
                )
            )
    return tuple(factors)


def build_PV_plain(
    disc: str, factors: Sequence[Sequence[UnivariateFactors]]
) -> VelocityPreconditioner:
    """
    Plain velocity preconditioner from univariate factors [k][d].

    Component k uses coefficient 2 on its own stiffness direction, e.g.
    K3⊗M2⊗M1 + M3⊗K2⊗M1 + 2 M3⊗M2⊗K1 for k = 1.
    """
    solvers = []
    for k in range(3):
        pencils = [factors[k][d].pencil for d in range(3)]
        coefs = [2.0 if d == k else 1.0 for d in range(3)]
        solvers.append(fd_build(pencils, coefs))
    logger.info(f"Built plain {disc} velocity preconditioner, blocks {[s.dims for s in solvers]}")
    return VelocityPreconditioner(tuple(solvers), label="P_V")


def build_PV_for(system: StokesSystem) -> VelocityPreconditioner:
    return build_PV_plain(system.disc, _velocity_factors(system))


def build_PQ(
    pressure_spaces: Sequence[SplineSpace], quad=None
) -> PressurePreconditioner:
    """P_Q = M3 ⊗ M2 ⊗ M1 on the pressure space."""
    masses = tuple(univariate_KM(space, quad).M for space in pressure_spaces)
    M1, M2, M3 = masses
    inverse = kron.KronInverse((M3, M2, M1), banded=True)
    return PressurePreconditioner(masses=masses, inverse=inverse)


def build_PQ_for(system: StokesSystem) -> PressurePreconditioner:
    return build_PQ(system.pressure_spaces, system.grid.quads[0])


def sample_coefficients(
    geometry: GeometryMap,
    viscosity: ViscosityField,
    grid: TensorGrid,
    disc: str,
    k: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Diagonal entries c_dd of the component-k coefficient matrix on the grid.

    Taylor-Hood: nu |det J| (J^{-1} J^{-T} + D_k D_k^T), D_k = J^{-1} e_k.
    Raviart-Thomas: nu |det J| J^{-1} (|R_k|^2 I + R_k R_k^T) J^{-T}, R_k = J e_k / det J.

    :param k: Component index 0, 1 or 2.
    """
    samples = sample_geometry(geometry, grid)
    Jinv = samples.jacobian_inv
    scale = viscosity(samples.physical) * samples.abs_det
    row_norms = np.sum(Jinv**2, axis=-1)
    if disc.upper() == "TH":
        diag = row_norms + Jinv[..., :, k] ** 2
    else:
        R = samples.jacobian[..., :, k] / samples.det[..., None]
        JR = np.einsum("...ab,...b->...a", Jinv, R)
        diag = np.sum(R**2, axis=-1)[..., None] * row_norms + JR**2
    coefficients = tuple(scale * diag[..., d] for d in range(3))
    if any(np.any(c <= 0) for c in coefficients):
        raise WeightError(f"Nonpositive coefficient samples for component {k + 1}")
    return coefficients


def _others(d: int) -> tuple[int, ...]:
    return tuple(e for e in range(3) if e != d)


def _along(v: np.ndarray, d: int) -> np.ndarray:
    shape = [1, 1, 1]
    shape[d] = -1
    return v.reshape(shape)


def separable_fit(
    c11: np.ndarray,
    c22: np.ndarray,
    c33: np.ndarray,
    tol: float | None = None,
    max_sweeps: int | None = None,
    strict: bool = False,
) -> SeparableWeights:
    """
    Fit c_dd ≈ tau_d Π_{e≠d} mu_e by alternating least squares on the logs.

    Each sweep updates the three log(mu) vectors and then the three log(tau)
    vectors by their closed-form block minimizers, so the objective never
    increases. Each mu is normalized to geometric mean 1.

    :param strict: Raise SeparableFitError instead of falling back to the
        initialization when the sweep cap is hit.
    """
    tol = Config.SEPARABLE_FIT_TOL if tol is None else tol
    max_sweeps = Config.SEPARABLE_FIT_MAX_SWEEPS if max_sweeps is None else max_sweeps
    samples = [np.asarray(c, dtype=float) for c in (c11, c22, c33)]
    if any(c.shape != samples[0].shape or c.ndim != 3 for c in samples):
        raise ShapeError("Coefficient samples must be three tensors of equal shape")
    if any(np.any(c <= 0) for c in samples):
        raise WeightError("Coefficient samples must be strictly positive")

    logs = [np.log(c) for c in samples]
    t = [logs[d].mean(axis=_others(d)) for d in range(3)]
    u = [np.zeros(n) for n in samples[0].shape]
    initial = ([v.copy() for v in t], [v.copy() for v in u])

    def objective():
        total = 0.0
        for d in range(3):
            r = logs[d] - _along(t[d], d) - sum(_along(u[e], e) for e in _others(d))
            total += float(np.sum(r**2))
        return total

    floor = 1e-28 * sum(float(np.sum(l**2)) for l in logs) + 1e-300
    history = [objective()]
    converged = history[0] <= floor
    sweeps = 0
    while not converged and sweeps < max_sweeps:
        sweeps += 1
        for e in range(3):
            updates = []
            for d in _others(e):
                r = logs[d] - _along(t[d], d)
                r = r - sum(_along(u[f], f) for f in range(3) if f not in (d, e))
                updates.append(r.mean(axis=_others(e)))
            u[e] = np.mean(updates, axis=0)
        for d in range(3):
            r = logs[d] - sum(_along(u[e], e) for e in _others(d))
            t[d] = r.mean(axis=_others(d))
        history.append(objective())
        logger.debug(f"Separable fit sweep {sweeps}: objective {history[-1]:.6e}")
        change = history[-2] - history[-1]
        converged = history[-1] <= floor or change <= tol * history[-2]

    if not converged:
        message = (
            f"Separable fit did not converge in {max_sweeps} sweeps "
            f"(objective {history[0]:.3e} -> {history[-1]:.3e})"
        )
        if strict:
            raise SeparableFitError(message)
        logger.warning(f"{message}; using the slice-mean initialization")
        t, u = initial

    for e in range(3):
        shift = u[e].mean()
        u[e] = u[e] - shift
        for d in _others(e):
            t[d] = t[d] + shift

    return SeparableWeights(
        tau=tuple(np.exp(v) for v in t),
        mu=tuple(np.exp(v) for v in u),
        objective=tuple(history),
        converged=converged,
    )


def fit_geometry_weights(system: StokesSystem, strict: bool = False) -> list[SeparableWeights]:
    weights = []
    for k in range(3):
        c = sample_coefficients(system.geometry, system.viscosity, system.grid, system.disc, k)
        weights.append(separable_fit(*c, strict=strict))
    return weights


def _block_diagonal(system: StokesSystem) -> np.ndarray:
    return np.concatenate([system.A_blocks[k][k].diagonal() for k in range(3)])


def build_PV_geo(
    weights: Sequence[SeparableWeights], system: StokesSystem
) -> VelocityPreconditioner:
    """
    Geometry-aware velocity preconditioner P_V^G = D_V^{1/2} P^_V D_V^{1/2}.

    P^_V is built from the weighted univariate pencils (the fitted weights
    carry the factor 2, so every term has coefficient 1) and
    [D_V]_ii = [A]_ii / [P^_V]_ii.
    """
    factors = _velocity_factors(system, weights)
    solvers = tuple(
        fd_build([factors[k][d].pencil for d in range(3)], (1.0, 1.0, 1.0)) for k in range(3)
    )
    hat = VelocityPreconditioner(solvers, label="P_V^G")
    scaling = _block_diagonal(system) / hat.unscaled_diagonal()
    if np.any(scaling <= 0):
        raise WeightError("Velocity diagonal scaling has nonpositive entries")
    logger.info(
        f"Built geometry-aware {system.disc} velocity preconditioner, "
        f"D_V in [{scaling.min():.3e}, {scaling.max():.3e}]"
    )
    return replace(hat, scaling=scaling)


def scale_PQ(PQ: PressurePreconditioner, q_diagonal: np.ndarray) -> PressurePreconditioner:
    """P_Q^G = D_Q^{1/2} P_Q D_Q^{1/2} with [D_Q]_ii = [Q]_ii / [P_Q]_ii."""
    q_diagonal = np.asarray(q_diagonal, dtype=float)
    base = PQ.operator.diagonal()
    if q_diagonal.shape != base.shape:
        raise ShapeError(f"Diagonal of length {q_diagonal.size} does not match P_Q size {base.size}")
    if np.any(q_diagonal <= 0) or np.any(base <= 0):
        raise WeightError("Pressure diagonal scaling needs positive diagonals")
    return replace(PQ, scaling=q_diagonal / base)


BLOCK_KINDS = ("D", "T", "C")


def apply_block(kind: str, PV, PQ, B, r: np.ndarray) -> np.ndarray:
    """
    Apply the inverse of a block preconditioner to r = (r_u, r_p).

    D: diag(P_V, P_Q).
    T: [[P_V, B^T], [0, -P_Q]].
    C: [[P_V, B^T], [B, B P_V^{-1} B^T - P_Q]], through its block factorization.
    """
    kind = kind.upper()
    if kind not in BLOCK_KINDS:
        raise ParameterError(f"Unknown block preconditioner kind '{kind}'")
    solve_v, solve_q = _solve_with(PV), _solve_with(PQ)
    n_u = B.shape[1]
    r = np.asarray(r, dtype=float)
    if r.size != n_u + B.shape[0]:
        raise ShapeError(f"Residual of length {r.size} does not match the block sizes")
    r_u, r_p = r[:n_u], r[n_u:]

    if kind == "D":
        return np.concatenate([solve_v(r_u), solve_q(r_p)])
    if kind == "T":
        s_p = -solve_q(r_p)
        s_u = solve_v(r_u - B.T @ s_p)
        return np.concatenate([s_u, s_p])

    a_u = solve_v(r_u)
    b_p = r_p - B @ a_u
    s_p = -solve_q(b_p)
    s_u = a_u - solve_v(B.T @ s_p)
    return np.concatenate([s_u, s_p])


@dataclass(frozen=True, eq=False)
class BlockPreconditioner:
    kind: str
    velocity: object = field(repr=False)
    pressure: object = field(repr=False)
    B: sp.spmatrix = field(repr=False)
    label: str = ""

    @property
    def symmetric(self) -> bool:
        return self.kind == "D"

    @property
    def size(self) -> int:
        return self.B.shape[0] + self.B.shape[1]

    def apply(self, r: np.ndarray) -> np.ndarray:
        return apply_block(self.kind, self.velocity, self.pressure, self.B, r)

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.size, self.size), matvec=self.apply, dtype=float)


def build_block(
    system: StokesSystem, kind: str = "D", geometric: bool = False
) -> BlockPreconditioner:
    """Plain or geometry-aware block preconditioner for an assembled system."""
    kind = kind.upper()
    if kind not in BLOCK_KINDS:
        raise ParameterError(f"Unknown block preconditioner kind '{kind}'")
    PQ = build_PQ_for(system)
    if geometric:
        PV = build_PV_geo(fit_geometry_weights(system), system)
        PQ = scale_PQ(PQ, system.Q.diagonal())
    else:
        PV = build_PV_for(system)
    label = f"P_{kind}" + ("^G" if geometric else "")
    return BlockPreconditioner(kind=kind, velocity=PV, pressure=PQ, B=system.B, label=label)


def ichol0(A: sp.spmatrix) -> sp.csr_matrix:
    """
    Zero-fill incomplete Cholesky factor L (lower) with the pattern of tril(A).

    Raises FactorizationError on a nonpositive pivot.
    """
    lower = sp.tril(sp.csr_matrix(A, dtype=float)).tocsr()
    lower.sum_duplicates()
    lower.sort_indices()
    n = lower.shape[0]
    indptr, indices = lower.indptr, lower.indices
    data = lower.data.copy()
    diag = np.zeros(n)
    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        cols = indices[start:end]
        if end == start or cols[-1] != i:
            raise FactorizationError(f"Row {i} has no diagonal entry")
        for t in range(end - start - 1):
            k = cols[t]
            k_start, k_end = indptr[k], indptr[k + 1] - 1
            if t > 0:
                _, ia, ib = np.intersect1d(
                    cols[:t], indices[k_start:k_end], assume_unique=True, return_indices=True
                )
                dot = data[start + ia] @ data[k_start + ib]
            else:
                dot = 0.0
            data[start + t] = (data[start + t] - dot) / diag[k]
        off = data[start : end - 1]
        pivot = data[end - 1] - off @ off
        if pivot <= 0:
            raise FactorizationError(f"IC(0) breakdown: nonpositive pivot {pivot:.3e} in row {i}")
        diag[i] = np.sqrt(pivot)
        data[end - 1] = diag[i]
    return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=lower.shape)


def ic0_factor(A: sp.spmatrix, shift_factor: float | None = None) -> sp.csr_matrix:
    """IC(0) with one diagonal-shift retry of shift_factor * mean(diag(A))."""
    shift_factor = Config.IC0_SHIFT_FACTOR if shift_factor is None else shift_factor
    try:
        return ichol0(A)
    except FactorizationError as e:
        shift = shift_factor * float(np.mean(A.diagonal()))
        logger.warning(f"{e}; retrying with diagonal shift {shift:.3e}")
        try:
            return ichol0(A + shift * sp.identity(A.shape[0], format="csr"))
        except FactorizationError as retry_error:
            logger.exception("IC(0) failed after the diagonal-shift retry")
            raise FactorizationError(
                f"IC(0) breakdown persists after a diagonal shift of {shift:.3e}"
            ) from retry_error


def _triangular_pair(L: sp.csr_matrix):
    upper = L.T.tocsr()

    def solve(r: np.ndarray) -> np.ndarray:
        y = spsolve_triangular(L, r, lower=True)
        return spsolve_triangular(upper, y, lower=False)

    return solve


@dataclass(frozen=True, eq=False)
class IC0Preconditioner:
    """
    Inexact solve with blockdiag([A_rs], Q) by inner CG, preconditioned with
    IC(0) factors of diag(A11, A22, A33) and of Q.
    """

    velocity_matrix: sp.csr_matrix = field(repr=False)
    pressure_matrix: sp.csr_matrix = field(repr=False)
    velocity_factors: tuple[sp.csr_matrix, ...] = field(repr=False)
    pressure_factor: sp.csr_matrix = field(repr=False)
    tol: float = 1e-2
    maxit: int = 200

    @property
    def velocity_sizes(self) -> tuple[int, ...]:
        return tuple(L.shape[0] for L in self.velocity_factors)

    @cached_property
    def velocity_solves(self) -> tuple:
        return tuple(_triangular_pair(L) for L in self.velocity_factors)

    @cached_property
    def pressure_solve(self):
        return _triangular_pair(self.pressure_factor)

    @property
    def size(self) -> int:
        return self.velocity_matrix.shape[0] + self.pressure_matrix.shape[0]

    def apply(self, r: np.ndarray) -> np.ndarray:
        return ic0_apply(self, r)


def ic0_build(
    A_blocks: Sequence[Sequence[sp.spmatrix]],
    Q: sp.spmatrix,
    tol: float | None = None,
    maxit: int | None = None,
) -> IC0Preconditioner:
    velocity_factors = tuple(ic0_factor(A_blocks[k][k]) for k in range(3))
    pressure_factor = ic0_factor(Q)
    logger.info(
        f"Built IC(0) factors, nnz(L_V)={[L.nnz for L in velocity_factors]}, nnz(L_Q)={pressure_factor.nnz}"
    )
    return IC0Preconditioner(
        velocity_matrix=sp.bmat(A_blocks, format="csr"),
        pressure_matrix=sp.csr_matrix(Q),
        velocity_factors=velocity_factors,
        pressure_factor=pressure_factor,
        tol=Config.IC0_INNER_TOL if tol is None else tol,
        maxit=Config.IC0_INNER_MAXIT if maxit is None else maxit,
    )


def ic0_apply(prec: IC0Preconditioner, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.size != prec.size:
        raise ShapeError(f"Residual of length {r.size} does not match IC(0) size {prec.size}")
    n_u = prec.velocity_matrix.shape[0]
    bounds = np.cumsum((0,) + prec.velocity_sizes)
    block_solves = prec.velocity_solves

    def velocity_prec(x):
        return np.concatenate(
            [solve(x[bounds[k] : bounds[k + 1]]) for k, solve in enumerate(block_solves)]
        )

    s_u, report_u = krylov.cg(
        prec.velocity_matrix, r[:n_u], prec=velocity_prec, tol=prec.tol, maxit=prec.maxit
    )
    s_p, report_p = krylov.cg(
        prec.pressure_matrix,
        r[n_u:],
        prec=prec.pressure_solve,
        tol=prec.tol,
        maxit=prec.maxit,
    )
    logger.debug(
        f"IC(0) inner CG: velocity {report_u.iterations} its, pressure {report_p.iterations} its"
    )
    return np.concatenate([s_u, s_p])
