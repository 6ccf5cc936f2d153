"""
Fast Diagonalization solver for Kronecker sums

    R = c3 K3 ⊗ M2 ⊗ M1 + c2 M3 ⊗ K2 ⊗ M1 + c1 M3 ⊗ M2 ⊗ K1.

With K_d U_d = M_d U_d diag(d_d) and U_d^T M_d U_d = I,

    R^{-1} = (U3 ⊗ U2 ⊗ U1) Λ^{-1} (U3 ⊗ U2 ⊗ U1)^T,
    Λ = c3 d3 ⊕ c2 d2 ⊕ c1 d1.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from . import kron
from .errors import PencilError, ShapeError, SingularOperatorError

logger = logging.getLogger(__name__)

SINGULAR_GUARD = 1e-12


@dataclass(frozen=True, eq=False)
class GenEig:
    """Generalized eigenpairs of a symmetric pencil, eigenvalues ascending."""

    U: np.ndarray = field(repr=False)
    d: np.ndarray


def gen_eig(K: np.ndarray, M: np.ndarray) -> GenEig:
    """
    Solve K U = M U diag(d) by Cholesky reduction of M.

    :param K: Symmetric matrix.
    :param M: Symmetric positive definite matrix.
    :return: GenEig with U^T M U = I and the largest-magnitude entry of each
        column of U positive.
    """
    K = np.asarray(K, dtype=float)
    M = np.asarray(M, dtype=float)
    if K.shape != M.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeError(f"Pencil matrices must be square and equal-sized, got {K.shape}, {M.shape}")
    try:
        L = sla.cholesky(M, lower=True)
    except sla.LinAlgError as e:
        raise PencilError(f"Mass matrix of the pencil is not SPD: {e}") from e

    # C = L^{-1} K L^{-T}
    tmp = sla.solve_triangular(L, K, lower=True)
    C = sla.solve_triangular(L, tmp.T, lower=True).T
    C = 0.5 * (C + C.T)
    d, V = sla.eigh(C)
    U = sla.solve_triangular(L, V, lower=True, trans="T")

    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs[None, :]
    return GenEig(U=U, d=d)


@dataclass(frozen=True, eq=False)
class FDSolver:
    """
    Factorized inverse of a three-term Kronecker sum.

    ``eigs`` and ``coefs`` are listed in direction order (1, 2, 3); ``lam`` is
    the (n1, n2, n3) tensor of Kronecker-sum eigenvalues.
    """

    eigs: tuple[GenEig, GenEig, GenEig]
    coefs: tuple[float, float, float]
    lam: np.ndarray = field(repr=False)
    pencils: tuple = field(repr=False, default=())

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.lam.shape

    @property
    def size(self) -> int:
        return self.lam.size

    def operator(self) -> kron.KronOperator:
        """The Kronecker sum R this solver inverts."""
        (K1, M1), (K2, M2), (K3, M3) = self.pencils
        c1, c2, c3 = self.coefs
        return kron.KronOperator.from_factors(
            (c3, (K3, M2, M1)),
            (c2, (M3, K2, M1)),
            (c1, (M3, M2, K1)),
        )

    def diagonal(self) -> np.ndarray:
        return self.operator().diagonal()

    def apply(self, t: np.ndarray) -> np.ndarray:
        return fd_apply(self, t)


def fd_build(
    pencils: Sequence[tuple[np.ndarray, np.ndarray]],
    coefs: Sequence[float] = (1.0, 1.0, 1.0),
) -> FDSolver:
    """
    Diagonalize the three univariate pencils and tabulate the Kronecker-sum spectrum.

    :param pencils: ((K1, M1), (K2, M2), (K3, M3)) in direction order.
    :param coefs: (c1, c2, c3), the weight of the stiffness term in each direction.
    """
    if len(pencils) != 3 or len(coefs) != 3:
        raise ShapeError("Fast diagonalization needs exactly three pencils and coefficients")
    coefs = tuple(float(c) for c in coefs)
    if min(coefs) <= 0:
        raise SingularOperatorError(f"Kronecker-sum coefficients must be positive, got {coefs}")

    pencils = tuple(
        (np.asarray(K, dtype=float), np.asarray(M, dtype=float)) for K, M in pencils
    )
    eigs = tuple(gen_eig(K, M) for K, M in pencils)
    d1, d2, d3 = (e.d for e in eigs)
    c1, c2, c3 = coefs
    lam = (
        c1 * d1[:, None, None] + c2 * d2[None, :, None] + c3 * d3[None, None, :]
    )

    lam_max = np.max(np.abs(lam))
    if np.min(lam) <= SINGULAR_GUARD * lam_max:
        raise SingularOperatorError(
            f"Kronecker sum is not positive definite: min eigenvalue {np.min(lam):.3e}, "
            f"max {lam_max:.3e}"
        )
    logger.debug(
        f"FD solver dims={lam.shape}, coefs={coefs}, spectrum=[{np.min(lam):.3e}, {lam_max:.3e}]"
    )
    return FDSolver(eigs=eigs, coefs=coefs, lam=lam, pencils=pencils)


def fd_apply(solver: FDSolver, t: np.ndarray) -> np.ndarray:
    """Apply R^{-1}: six mode products with the eigenbases and one diagonal scaling."""
    t = np.asarray(t, dtype=float)
    if t.size != solver.size:
        raise ShapeError(
            f"Vector of length {t.size} does not match FD solver size {solver.size}"
        )
    U1, U2, U3 = (e.U for e in solver.eigs)
    x = kron.unvec(t, solver.dims)
    x = kron.mode_product(x, U1.T, 1)
    x = kron.mode_product(x, U2.T, 2)
    x = kron.mode_product(x, U3.T, 3)
    x = x / solver.lam
    x = kron.mode_product(x, U1, 1)
    x = kron.mode_product(x, U2, 2)
    x = kron.mode_product(x, U3, 3)
    return kron.vec(x)
