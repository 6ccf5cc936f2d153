import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SplineSpace:
    """
    Univariate B-spline space on [0, 1] with an open, uniform knot vector.

    Interior breakpoints are repeated ``degree - regularity`` times, so the
    basis is C^regularity across element boundaries.
    """

    degree: int
    regularity: int
    n_el: int
    knots: np.ndarray = field(repr=False)
    breakpoints: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def mesh_size(self) -> float:
        return 1.0 / self.n_el


@dataclass(frozen=True, eq=False)
class QuadGrid:
    """Gauss-Legendre nodes and weights, stored per element as (n_el, q) arrays."""

    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def nodes_per_element(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_el(self) -> int:
        return self.nodes.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self.nodes.ravel()

    @property
    def flat_weights(self) -> np.ndarray:
        return self.weights.ravel()

    def __len__(self) -> int:
        return self.nodes.size


def build_space(p: int, n_el: int, alpha: int | None = None) -> SplineSpace:
    """
    Build the uniform open-knot spline space S^p_alpha with n_el elements.

    :param p: Polynomial degree, at least 1.
    :param n_el: Number of elements.
    :param alpha: Interior regularity, -1 <= alpha <= p-1. Defaults to p-1.
    :return: The spline space; its dimension is n_el*(p-alpha) + alpha + 1.
    """
    if alpha is None:
        alpha = p - 1
    if p < 1:
        raise ParameterError(f"Spline degree must be at least 1, got {p}")
    if not -1 <= alpha <= p - 1:
        raise ParameterError(
            f"Regularity must satisfy -1 <= alpha <= p-1, got alpha={alpha} for p={p}"
        )
    if n_el < 1:
        raise ParameterError(f"Number of elements must be at least 1, got {n_el}")

    breakpoints = np.linspace(0.0, 1.0, n_el + 1)
    knots = np.concatenate(
        [
            np.zeros(p + 1),
            np.repeat(breakpoints[1:-1], p - alpha),
            np.ones(p + 1),
        ]
    )
    space = SplineSpace(
        degree=p, regularity=alpha, n_el=n_el, knots=knots, breakpoints=breakpoints
    )
    logger.debug(f"Built spline space p={p}, alpha={alpha}, n_el={n_el}, m={space.dim}")
    return space


def find_span(space: SplineSpace, eta: float) -> int:
    """
    Index of the knot span containing eta (right limit at breakpoints, left limit at 1).
    """
    p, knots = space.degree, space.knots
    if eta >= 1.0:
        return space.dim - 1
    span = int(np.searchsorted(knots, eta, side="right")) - 1
    return min(max(span, p), space.dim - 1)


def _basis_funs_all_ders(
    knots: np.ndarray, p: int, span: int, x: float, n: int
) -> np.ndarray:
    # Triangular table of basis values and knot differences, then the
    # derivative recursion on its columns.
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((n + 1, p + 1))
    ders[0, :] = ndu[:, p]

    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1

    factor = p
    for k in range(1, n + 1):
        ders[k, :] *= factor
        factor *= p - k
    return ders


def eval_basis(
    space: SplineSpace, eta: float, max_deriv: int = 0
) -> tuple[int, np.ndarray]:
    """
    Evaluate the p+1 nonzero basis functions and their derivatives at eta.

    :param space: Spline space.
    :param eta: Evaluation point in [0, 1].
    :param max_deriv: Highest derivative order, at most the degree.
    :return: (first_active_index, table) where table[k, j] is the k-th
        derivative of basis function first_active_index + j.
    """
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"Evaluation point {eta} lies outside [0, 1]")
    if not 0 <= max_deriv <= space.degree:
        raise ParameterError(
            f"max_deriv must lie in [0, {space.degree}], got {max_deriv}"
        )
    span = find_span(space, eta)
    table = _basis_funs_all_ders(space.knots, space.degree, span, eta, max_deriv)
    return span - space.degree, table


def collocation(space: SplineSpace, points: np.ndarray, max_deriv: int = 1) -> np.ndarray:
    """
    Dense collocation tensor of shape (max_deriv+1, len(points), dim).

    Entry [k, i, j] is the k-th derivative of basis function j at points[i].
    """
    points = np.asarray(points, dtype=float).ravel()
    p = space.degree
    out = np.zeros((max_deriv + 1, points.size, space.dim))
    for i, eta in enumerate(points):
        first, table = eval_basis(space, float(eta), max_deriv)
        out[:, i, first : first + p + 1] = table
    return out


def gauss_rule(space: SplineSpace, q: int | None = None) -> QuadGrid:
    """
    Element-wise Gauss-Legendre rule with q nodes per element.

    :param space: Spline space whose breakpoints define the elements.
    :param q: Nodes per element. Defaults to degree + 1, exact up to degree 2p+1.
    """
    if q is None:
        q = space.degree + 1
    if q < 1:
        raise ParameterError(f"Quadrature order must be at least 1, got {q}")
    ref_nodes, ref_weights = np.polynomial.legendre.leggauss(q)
    lower = space.breakpoints[:-1, None]
    length = np.diff(space.breakpoints)[:, None]
    nodes = lower + 0.5 * (ref_nodes[None, :] + 1.0) * length
    weights = 0.5 * ref_weights[None, :] * length
    return QuadGrid(nodes=nodes, weights=weights)
