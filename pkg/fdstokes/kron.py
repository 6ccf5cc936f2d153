"""
Kronecker-product algebra on 3-way tensors.

Vectors are laid out with direction 1 fastest (Fortran order), so that for a
tensor X of shape (n1, n2, n3)

    (A3 ⊗ A2 ⊗ A1) vec(X) = vec(X ×1 A1 ×2 A2 ×3 A3).

Factors are always listed in the order (A3, A2, A1).
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator

from .config import Config
from .errors import FactorizationError, ShapeError, SizeGuardError

logger = logging.getLogger(__name__)

# A Tensor3 is a float ndarray of shape (n1, n2, n3) indexed [i1, i2, i3].
Tensor3 = np.ndarray


def vec(t: Tensor3) -> np.ndarray:
    return np.asarray(t).ravel(order="F")


def unvec(x: np.ndarray, dims: Sequence[int]) -> Tensor3:
    x = np.asarray(x)
    if x.size != int(np.prod(dims)):
        raise ShapeError(f"Vector of length {x.size} cannot be reshaped to {tuple(dims)}")
    return x.reshape(tuple(dims), order="F")


def mode_product(t: Tensor3, y: np.ndarray, mode: int) -> Tensor3:
    """
    m-mode product: contract index ``mode`` (1, 2 or 3) of t with the columns of y.

    :param t: Tensor of shape (n1, n2, n3).
    :param y: Matrix with y.shape[1] == t.shape[mode-1].
    :param mode: 1, 2 or 3.
    """
    if mode not in (1, 2, 3):
        raise ShapeError(f"Mode must be 1, 2 or 3, got {mode}")
    y = np.asarray(y)
    axis = mode - 1
    if t.ndim != 3 or y.ndim != 2 or y.shape[1] != t.shape[axis]:
        raise ShapeError(
            f"Cannot apply a {y.shape} matrix along mode {mode} of a tensor of shape {t.shape}"
        )
    return np.moveaxis(np.tensordot(y, t, axes=(1, axis)), 0, axis)


def apply_factors(factors: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """(A3 ⊗ A2 ⊗ A1) x for possibly rectangular factors."""
    a3, a2, a1 = factors
    dims = (a1.shape[1], a2.shape[1], a3.shape[1])
    t = unvec(x, dims)
    t = mode_product(t, a1, 1)
    t = mode_product(t, a2, 2)
    t = mode_product(t, a3, 3)
    return vec(t)


@dataclass(frozen=True, eq=False)
class KronTerm:
    coef: float
    factors: tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True, eq=False)
class KronOperator:
    """Sum of weighted three-factor Kronecker products of square matrices."""

    terms: tuple[KronTerm, ...]
    dims: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        if not self.terms:
            raise ShapeError("A Kronecker operator needs at least one term")
        a3, a2, a1 = self.terms[0].factors
        dims = (a1.shape[0], a2.shape[0], a3.shape[0])
        for term in self.terms:
            for factor, n in zip(term.factors, dims[::-1]):
                if factor.shape != (n, n):
                    raise ShapeError(
                        f"Factor of shape {factor.shape} does not match dims {dims}"
                    )
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_factors(cls, *terms: tuple[float, Sequence[np.ndarray]]) -> "KronOperator":
        return cls(
            tuple(
                KronTerm(float(c), tuple(np.asarray(f, dtype=float) for f in fs))
                for c, fs in terms
            )
        )

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return kron_matvec(self, x)

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(
            (self.size, self.size), matvec=self.matvec, dtype=float
        )

    def diagonal(self) -> np.ndarray:
        out = np.zeros(self.size)
        for term in self.terms:
            d3, d2, d1 = (np.diag(f) for f in term.factors)
            out += term.coef * np.kron(d3, np.kron(d2, d1))
        return out


def kron_matvec(op: KronOperator, x: np.ndarray) -> np.ndarray:
    """Sum over terms of c (A3 ⊗ A2 ⊗ A1) x via mode products."""
    x = np.asarray(x, dtype=float)
    if x.size != op.size:
        raise ShapeError(
            f"Vector of length {x.size} does not match operator size {op.size}"
        )
    y = np.zeros(op.size)
    for term in op.terms:
        y += term.coef * apply_factors(term.factors, x)
    return y


def kron_dense(op: KronOperator, limit: int | None = None) -> np.ndarray:
    """Explicit matrix of a Kronecker operator (test oracle)."""
    limit = Config.KRON_DENSE_LIMIT if limit is None else limit
    if op.size > limit:
        raise SizeGuardError(
            f"Refusing to densify a Kronecker operator of size {op.size} (limit {limit})"
        )
    out = np.zeros((op.size, op.size))
    for term in op.terms:
        a3, a2, a1 = term.factors
        out += term.coef * np.kron(a3, np.kron(a2, a1))
    return out


def _bandwidth(a: np.ndarray) -> int:
    rows, cols = np.nonzero(a)
    return int(np.max(np.abs(rows - cols))) if rows.size else 0


class _FactorSolver:
    """Factorization of one Kronecker factor: Cholesky when SPD, else LU."""

    def __init__(self, a: np.ndarray, banded: bool = False):
        a = np.asarray(a, dtype=float)
        self.n = a.shape[0]
        self.kind = "cholesky"
        try:
            if not np.allclose(a, a.T, rtol=1e-12, atol=0.0):
                raise sla.LinAlgError("Kronecker factor is not symmetric")
            if banded:
                u = _bandwidth(a)
                ab = np.zeros((u + 1, self.n))
                for k in range(u + 1):
                    ab[u - k, k:] = np.diagonal(a, offset=k)
                self.factor = sla.cholesky_banded(ab, lower=False)
                self.kind = "banded"
            else:
                self.factor = sla.cho_factor(a, lower=True)
        except sla.LinAlgError:
            logger.debug("Kronecker factor is not SPD, falling back to LU")
            self.kind = "lu"
            try:
                lu, piv = sla.lu_factor(a, check_finite=True)
            except (sla.LinAlgError, ValueError) as e:
                raise FactorizationError(f"Kronecker factor is singular: {e}") from e
            if np.min(np.abs(np.diag(lu))) <= np.finfo(float).eps * max(
                np.max(np.abs(np.diag(lu))), 1.0
            ):
                raise FactorizationError("Kronecker factor is singular")
            self.factor = (lu, piv)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.kind == "banded":
            return sla.cho_solve_banded((self.factor, False), b)
        if self.kind == "cholesky":
            return sla.cho_solve(self.factor, b)
        return sla.lu_solve(self.factor, b)


class KronInverse:
    """
    Cached per-factor factorizations applying (A3 ⊗ A2 ⊗ A1)^{-1}.

    :param factors: (A3, A2, A1), each square and nonsingular.
    :param banded: Use banded Cholesky factors (pressure mass path).
    """

    def __init__(self, factors: Sequence[np.ndarray], banded: bool = False):
        a3, a2, a1 = (np.asarray(f, dtype=float) for f in factors)
        for f in (a3, a2, a1):
            if f.ndim != 2 or f.shape[0] != f.shape[1]:
                raise ShapeError(f"Kronecker factor must be square, got {f.shape}")
        self.dims = (a1.shape[0], a2.shape[0], a3.shape[0])
        self.solvers = tuple(_FactorSolver(f, banded=banded) for f in (a1, a2, a3))

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.size != self.size:
            raise ShapeError(
                f"Vector of length {x.size} does not match operator size {self.size}"
            )
        t = unvec(x, self.dims)
        for axis, solver in enumerate(self.solvers):
            moved = np.moveaxis(t, axis, 0)
            shape = moved.shape
            solved = solver.solve(moved.reshape(shape[0], -1)).reshape(shape)
            t = np.moveaxis(solved, 0, axis)
        return vec(t)


def kron_inverse_apply(factors: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Solve (A3 ⊗ A2 ⊗ A1) y = x by per-mode factor solves."""
    return KronInverse(factors).apply(x)
