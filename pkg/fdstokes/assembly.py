"""
Galerkin assembly of the Stokes saddle-point system on B-spline spaces.

Velocity unknowns are ordered component by component; inside a component the
coefficients follow the Kronecker layout of ``kron`` (direction 1 fastest).
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from . import kron
from .config import Config
from .errors import (
    BoundaryDataError,
    ParameterError,
    ShapeError,
    UnsupportedConfigurationError,
    WeightError,
)
from .geometry import GeometryMap, ViscosityField, constant_viscosity, make_geometry
from .splines import QuadGrid, SplineSpace, build_space, collocation, eval_basis, gauss_rule

logger = logging.getLogger(__name__)

Face = tuple[int, int]


@dataclass(frozen=True, eq=False)
class UnivariateFactors:
    """Univariate stiffness K and mass M, optionally Nitsche-modified."""

    K: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)
    space: SplineSpace
    interior: bool = False
    nitsche: bool = False

    @property
    def pencil(self) -> tuple[np.ndarray, np.ndarray]:
        return self.K, self.M


def _node_weights(values, quad: QuadGrid, name: str) -> np.ndarray:
    if values is None:
        return np.ones(len(quad))
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full(len(quad), float(values))
    values = values.ravel()
    if values.size != len(quad):
        raise ShapeError(
            f"Weight '{name}' has {values.size} samples, quadrature has {len(quad)} nodes"
        )
    if np.any(values <= 0):
        raise WeightError(f"Weight '{name}' must be strictly positive at every node")
    return values


def _table(space: SplineSpace, quad: QuadGrid, deriv: int, interior: bool) -> np.ndarray:
    tab = collocation(space, quad.points, max(deriv, 0))[deriv]
    return tab[:, 1:-1] if interior else tab


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def univariate_KM(
    space: SplineSpace,
    quad: QuadGrid | None = None,
    tau=None,
    mu=None,
    restrict_interior: bool = False,
) -> UnivariateFactors:
    """
    Weighted univariate stiffness and mass matrices.

    K[l, s] = ∫ tau b'_l b'_s and M[l, s] = ∫ mu b_l b_s, integrated with the
    Gauss rule ``quad``; tau and mu are node values (None means 1).

    :param restrict_interior: Drop the first and last basis functions.
    """
    quad = quad or gauss_rule(space, space.degree + 1)
    w = quad.flat_weights
    tau = _node_weights(tau, quad, "tau")
    mu = _node_weights(mu, quad, "mu")
    values = _table(space, quad, 0, restrict_interior)
    derivs = _table(space, quad, 1, restrict_interior)
    K = _symmetrize(derivs.T @ ((w * tau)[:, None] * derivs))
    M = _symmetrize(values.T @ ((w * mu)[:, None] * values))
    return UnivariateFactors(K=K, M=M, space=space, interior=restrict_interior)


def _boundary_traces(space: SplineSpace, eta: float) -> tuple[np.ndarray, np.ndarray]:
    first, table = eval_basis(space, eta, 1)
    value = np.zeros(space.dim)
    deriv = np.zeros(space.dim)
    value[first : first + space.degree + 1] = table[0]
    deriv[first : first + space.degree + 1] = table[1]
    return value, deriv


def univariate_KM_nitsche(
    space: SplineSpace,
    c_pen: float,
    h: float | None = None,
    quad: QuadGrid | None = None,
    tau=None,
    mu=None,
) -> UnivariateFactors:
    """
    Nitsche-modified stiffness K~ and plain mass M~ on the full basis.

    The consistency, symmetry and penalty terms are evaluated at eta = 0 and
    eta = 1 and weighted by the stiffness weight at the first and last node.
    """
    if c_pen <= 0:
        raise ParameterError(f"Nitsche penalty must be positive, got {c_pen}")
    h = h or space.mesh_size
    quad = quad or gauss_rule(space, space.degree + 1)
    plain = univariate_KM(space, quad, tau, mu, restrict_interior=False)
    tau_nodes = _node_weights(tau, quad, "tau")
    tau0, tau1 = tau_nodes[0], tau_nodes[-1]
    gamma = c_pen / h

    v0, d0 = _boundary_traces(space, 0.0)
    v1, d1 = _boundary_traces(space, 1.0)
    K = (
        plain.K
        - tau1 * (np.outer(d1, v1) + np.outer(v1, d1) - 2.0 * gamma * np.outer(v1, v1))
        + tau0 * (np.outer(d0, v0) + np.outer(v0, d0) + 2.0 * gamma * np.outer(v0, v0))
    )
    return UnivariateFactors(
        K=_symmetrize(K), M=plain.M, space=space, interior=False, nitsche=True
    )


def univariate_mixed(
    row_space: SplineSpace,
    col_space: SplineSpace,
    quad: QuadGrid,
    row_deriv: int = 0,
    col_deriv: int = 0,
    row_interior: bool = False,
    col_interior: bool = False,
) -> np.ndarray:
    """Rectangular ∫ b^{(row_deriv)}_i c^{(col_deriv)}_j between two spaces."""
    rows = _table(row_space, quad, row_deriv, row_interior)
    cols = _table(col_space, quad, col_deriv, col_interior)
    return rows.T @ (quad.flat_weights[:, None] * cols)


def _kron3(factors: Sequence) -> sp.csr_matrix:
    """Sparse A3 ⊗ A2 ⊗ A1 from factors given in direction order (A1, A2, A3)."""
    a1, a2, a3 = (sp.csr_matrix(f) for f in factors)
    return sp.kron(a3, sp.kron(a2, a1, format="csr"), format="csr")


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Tensor product of three univariate quadrature grids."""

    quads: tuple[QuadGrid, QuadGrid, QuadGrid]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(len(q) for q in self.quads)

    def points(self) -> np.ndarray:
        axes = np.meshgrid(*(q.points for q in self.quads), indexing="ij")
        return np.stack(axes, axis=-1)

    def weights(self) -> np.ndarray:
        w1, w2, w3 = (q.flat_weights for q in self.quads)
        return w1[:, None, None] * w2[None, :, None] * w3[None, None, :]


@dataclass(frozen=True, eq=False)
class GeometrySamples:
    """Jacobian data of a geometry map on a tensor grid."""

    points: np.ndarray = field(repr=False)
    physical: np.ndarray = field(repr=False)
    jacobian: np.ndarray = field(repr=False)
    jacobian_inv: np.ndarray = field(repr=False)
    det: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def abs_det(self) -> np.ndarray:
        return np.abs(self.det)


def sample_geometry(geometry: GeometryMap, grid: TensorGrid) -> GeometrySamples:
    eta = grid.points()
    jac = geometry.jacobian(eta)
    det = geometry.check_nonsingular(eta)
    return GeometrySamples(
        points=eta,
        physical=geometry.evaluate(eta),
        jacobian=jac,
        jacobian_inv=np.linalg.inv(jac),
        det=det,
        weights=grid.weights(),
    )


def _pairs(row_values: np.ndarray, col_values: np.ndarray):
    overlap = (np.abs(row_values).T @ np.abs(col_values)) > 0
    return np.nonzero(overlap)


def _assemble_tensor(
    coefficients: Mapping[tuple, np.ndarray],
    row_tabs: Sequence[Sequence[np.ndarray]],
    col_tabs: Sequence[Sequence[np.ndarray]],
) -> sp.csr_matrix:
    """
    Sum-factorized assembly of Σ_(a,b) ∫ c_ab ∂_a b_i ∂_b b_j over a tensor grid.

    ``coefficients`` maps (a, b) to node values on the grid (quadrature
    weights included), where a, b are derivative directions 0..2 or None for
    plain values. ``row_tabs[d]`` holds (values, derivatives) tables of the
    row basis in direction d, likewise ``col_tabs``.
    """
    pairs = [_pairs(row_tabs[d][0], col_tabs[d][0]) for d in range(3)]
    total = None
    for (a, b), coef in coefficients.items():
        factors = []
        for d, (pi, pj) in enumerate(pairs):
            rows = row_tabs[d][1 if a == d else 0]
            cols = col_tabs[d][1 if b == d else 0]
            factors.append(rows[:, pi] * cols[:, pj])
        t = np.tensordot(factors[0], coef, axes=(0, 0))
        t = np.tensordot(t, factors[1], axes=(1, 0))
        t = np.tensordot(t, factors[2], axes=(1, 0))
        total = t if total is None else total + t

    row_dims = [tab[0].shape[1] for tab in row_tabs]
    col_dims = [tab[0].shape[1] for tab in col_tabs]
    (ri1, ci1), (ri2, ci2), (ri3, ci3) = pairs
    rows = ri1[:, None, None] + row_dims[0] * (
        ri2[None, :, None] + row_dims[1] * ri3[None, None, :]
    )
    cols = ci1[:, None, None] + col_dims[0] * (
        ci2[None, :, None] + col_dims[1] * ci3[None, None, :]
    )
    shape = (int(np.prod(row_dims)), int(np.prod(col_dims)))
    if total is None:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((total.ravel(), (rows.ravel(), cols.ravel())), shape=shape)


@dataclass(frozen=True, eq=False)
class StokesSystem:
    """
    Assembled saddle-point system [[A, B^T], [B, 0]] on the eliminated spaces.

    ``velocity_interior[k][d]`` tells whether the first and last basis
    functions of component k in direction d were eliminated.
    """

    disc: str
    degree: int
    regularity: int
    n_el: int
    velocity_spaces: tuple[tuple[SplineSpace, ...], ...]
    pressure_spaces: tuple[SplineSpace, ...]
    velocity_interior: tuple[tuple[bool, ...], ...]
    A_blocks: tuple[tuple[sp.csr_matrix, ...], ...] = field(repr=False)
    B_blocks: tuple[sp.csr_matrix, ...] = field(repr=False)
    Q: sp.csr_matrix = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    geometry: GeometryMap
    viscosity: ViscosityField
    grid: TensorGrid = field(repr=False)
    pressure_weights: np.ndarray = field(repr=False)
    pressure_constant: np.ndarray = field(repr=False)
    c_pen: float | None = None
    full_A: sp.csr_matrix | None = field(default=None, repr=False)
    full_B: sp.csr_matrix | None = field(default=None, repr=False)
    lifting: np.ndarray | None = field(default=None, repr=False)

    @property
    def velocity_full_dims(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(tuple(s.dim for s in spaces) for spaces in self.velocity_spaces)

    @property
    def velocity_dims(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(
            tuple(s.dim - 2 if inner else s.dim for s, inner in zip(spaces, interior))
            for spaces, interior in zip(self.velocity_spaces, self.velocity_interior)
        )

    @property
    def pressure_dims(self) -> tuple[int, int, int]:
        return tuple(s.dim for s in self.pressure_spaces)

    @property
    def velocity_sizes(self) -> tuple[int, ...]:
        return tuple(int(np.prod(d)) for d in self.velocity_dims)

    @property
    def n_velocity(self) -> int:
        return sum(self.velocity_sizes)

    @property
    def n_pressure(self) -> int:
        return int(np.prod(self.pressure_dims))

    @property
    def size(self) -> int:
        return self.n_velocity + self.n_pressure

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Positions of the kept velocity unknowns inside the full velocity vector."""
        pieces = []
        offset = 0
        for full, interior in zip(self.velocity_full_dims, self.velocity_interior):
            ranges = [
                np.arange(1, n - 1) if inner else np.arange(n)
                for n, inner in zip(full, interior)
            ]
            i1, i2, i3 = np.meshgrid(*ranges, indexing="ij")
            flat = i1 + full[0] * (i2 + full[1] * i3)
            pieces.append(offset + kron.vec(flat))
            offset += int(np.prod(full))
        return np.concatenate(pieces)

    @cached_property
    def A(self) -> sp.csr_matrix:
        return sp.bmat(self.A_blocks, format="csr")

    @cached_property
    def B(self) -> sp.csr_matrix:
        return sp.hstack(self.B_blocks, format="csr")

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csr")

    def operator(self) -> LinearOperator:
        mat = self.matrix
        return LinearOperator(mat.shape, matvec=mat.dot, dtype=float)

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.n_velocity], x[self.n_velocity :]

    def split_velocity(self, u: np.ndarray) -> list[np.ndarray]:
        bounds = np.cumsum((0,) + self.velocity_sizes)
        return [u[bounds[k] : bounds[k + 1]] for k in range(3)]


def _default_quad(space: SplineSpace, q: int | None) -> QuadGrid:
    return gauss_rule(space, q or space.degree + 1)


def _pressure_integrals(
    pressure_spaces, quad: QuadGrid, weight: np.ndarray
) -> np.ndarray:
    """∫ b_l g dη for every pressure basis function, g given on the grid with weights."""
    t = weight
    for d, space in enumerate(pressure_spaces):
        t = kron.mode_product(t, _table(space, quad, 0, False).T, d + 1)
    return kron.vec(t)


def assemble_pressure_mass(
    pressure_spaces: Sequence[SplineSpace],
    geometry: GeometryMap,
    viscosity: ViscosityField,
    disc: str = "TH",
    quad: QuadGrid | None = None,
    samples: GeometrySamples | None = None,
) -> sp.csr_matrix:
    """
    Weighted pressure mass Q[i, j] = ∫ nu^{-1} b_i b_j g dη.

    g = |det J_G| for Taylor-Hood and 1/|det J_G| for Raviart-Thomas.
    """
    quad = quad or _default_quad(pressure_spaces[0], pressure_spaces[0].degree + 2)
    if samples is None:
        samples = sample_geometry(geometry, TensorGrid((quad, quad, quad)))
    g = samples.abs_det if disc.upper() == "TH" else 1.0 / samples.abs_det
    coef = samples.weights * g / viscosity(samples.physical)
    tabs = [(_table(s, quad, 0, False),) for s in pressure_spaces]
    Q = _assemble_tensor({(None, None): coef}, tabs, tabs)
    return 0.5 * (Q + Q.T).tocsr()


def assemble_TH(
    p: int,
    n_el: int,
    alpha: int | None = None,
    geometry: GeometryMap | None = None,
    viscosity: ViscosityField | None = None,
    q: int | None = None,
) -> StokesSystem:
    """
    Assemble the Taylor-Hood system on a mapped geometry.

    Velocity uses S^{p+1}_alpha in every direction with homogeneous Dirichlet
    dofs eliminated, pressure uses S^p_alpha.

    :param p: Pressure degree.
    :param n_el: Elements per direction.
    :param alpha: Regularity, default p-1.
    :param q: Gauss nodes per element, default p+2.
    """
    alpha = p - 1 if alpha is None else alpha
    geometry = geometry or make_geometry("identity")
    viscosity = viscosity or constant_viscosity(1.0)
    vel_space = build_space(p + 1, n_el, alpha)
    pres_space = build_space(p, n_el, alpha)
    quad = gauss_rule(vel_space, q or p + 2)
    grid = TensorGrid((quad, quad, quad))
    samples = sample_geometry(geometry, grid)

    nu = viscosity(samples.physical)
    scale = nu * samples.abs_det * samples.weights
    Jinv = samples.jacobian_inv
    metric = np.einsum("...ac,...bc->...ab", Jinv, Jinv)

    vtab = collocation(vel_space, quad.points, 1)
    vel_tabs = [(vtab[0], vtab[1])] * 3
    pres_tabs = [(_table(pres_space, quad, 0, False),)] * 3

    blocks = [[None] * 3 for _ in range(3)]
    for r in range(3):
        for s in range(r, 3):
            coefficients = {}
            for a in range(3):
                for b in range(3):
                    c = scale * Jinv[..., a, s] * Jinv[..., b, r]
                    if r == s:
                        c = c + scale * metric[..., a, b]
                    if np.max(np.abs(c)) > 1e-14 * np.max(np.abs(scale)):
                        coefficients[(a, b)] = c
            block = _assemble_tensor(coefficients, vel_tabs, vel_tabs)
            if r == s:
                block = 0.5 * (block + block.T)
            blocks[r][s] = block.tocsr()
            if r != s:
                blocks[s][r] = block.T.tocsr()
    full_A = sp.bmat(blocks, format="csr")

    b_blocks = []
    for r in range(3):
        coefficients = {
            (None, a): -samples.abs_det * samples.weights * Jinv[..., a, r]
            for a in range(3)
            if np.max(np.abs(Jinv[..., a, r])) > 1e-14
        }
        b_blocks.append(_assemble_tensor(coefficients, pres_tabs, vel_tabs))
    full_B = sp.hstack(b_blocks, format="csr")

    Q = assemble_pressure_mass(
        (pres_space,) * 3, geometry, viscosity, "TH", quad=quad, samples=samples
    )

    system = _reduce(
        disc="TH",
        degree=p,
        regularity=alpha,
        n_el=n_el,
        velocity_spaces=((vel_space,) * 3,) * 3,
        pressure_spaces=(pres_space,) * 3,
        velocity_interior=((True,) * 3,) * 3,
        full_A=full_A,
        full_B=full_B,
        Q=Q,
        geometry=geometry,
        viscosity=viscosity,
        grid=grid,
        pressure_weights=_pressure_integrals(
            (pres_space,) * 3, quad, samples.abs_det * samples.weights
        ),
    )
    logger.info(
        f"Assembled TH system p={p}, n_el={n_el}, alpha={alpha} on '{geometry.kind}': "
        f"{system.n_velocity} velocity + {system.n_pressure} pressure dofs, "
        f"nnz(A)={system.A.nnz}, nnz(B)={system.B.nnz}"
    )
    return system


def _reduce(full_A, full_B, **kwargs) -> StokesSystem:
    template = StokesSystem(
        A_blocks=((None,) * 3,) * 3,
        B_blocks=(None,) * 3,
        rhs=np.zeros(0),
        pressure_constant=np.ones(int(np.prod([s.dim for s in kwargs["pressure_spaces"]]))),
        **kwargs,
    )
    keep = template.interior_index
    bounds = np.cumsum((0,) + template.velocity_sizes)
    reduced_A = full_A[keep][:, keep].tocsr()
    reduced_B = full_B[:, keep].tocsr()
    A_blocks = tuple(
        tuple(
            reduced_A[bounds[r] : bounds[r + 1], bounds[s] : bounds[s + 1]].tocsr()
            for s in range(3)
        )
        for r in range(3)
    )
    B_blocks = tuple(reduced_B[:, bounds[r] : bounds[r + 1]].tocsr() for r in range(3))
    return replace(
        template,
        A_blocks=A_blocks,
        B_blocks=B_blocks,
        rhs=np.zeros(template.size),
        full_A=full_A,
        full_B=full_B,
    )


def rt_spaces(p: int, n_el: int, alpha: int) -> tuple[tuple[SplineSpace, ...], ...]:
    """Per-component direction spaces: degree p+1 along the component, p elsewhere."""
    high = build_space(p + 1, n_el, alpha + 1)
    low = build_space(p, n_el, alpha)
    return tuple(tuple(high if d == k else low for d in range(3)) for k in range(3))


def rt_univariate_factors(
    p: int,
    n_el: int,
    alpha: int,
    c_pen: float,
    quad: QuadGrid,
    weights: Sequence[Sequence] | None = None,
) -> tuple[tuple[UnivariateFactors, ...], ...]:
    """
    Factors [k][d] of the component-k velocity block in direction d.

    Along the component: K, M of S^{p+1}_{alpha+1} on the interior basis.
    Across it: Nitsche K~ and M~ of S^p_alpha on the full basis.
    ``weights[k][d]`` optionally gives (tau, mu) node values.
    """
    spaces = rt_spaces(p, n_el, alpha)
    factors = []
    for k in range(3):
        row = []
        for d in range(3):
            tau, mu = weights[k][d] if weights is not None else (None, None)
            if d == k:
                row.append(univariate_KM(spaces[k][d], quad, tau, mu, restrict_interior=True))
            else:
                row.append(univariate_KM_nitsche(spaces[k][d], c_pen, quad=quad, tau=tau, mu=mu))
        factors.append(tuple(row))
    return tuple(factors)


def velocity_block_terms(
    factors: Sequence[UnivariateFactors], k: int
) -> list[tuple[float, tuple]]:
    """
    Kronecker terms (coef, (A3, A2, A1)) of the component-k block:
    stiffness in direction d, mass elsewhere, coefficient 2 when d == k.
    """
    terms = []
    for d in reversed(range(3)):
        mats = [factors[e].K if e == d else factors[e].M for e in range(3)]
        terms.append((2.0 if d == k else 1.0, (mats[2], mats[1], mats[0])))
    return terms


def assemble_RT_parametric(
    p: int,
    n_el: int,
    alpha: int | None = None,
    geometry: GeometryMap | None = None,
    viscosity: ViscosityField | None = None,
    c_pen: float | None = None,
    q: int | None = None,
) -> StokesSystem:
    """
    Assemble the parametric Raviart-Thomas system on the identity map.

    Normal velocity components are eliminated strongly; tangential Dirichlet
    data enter through the Nitsche terms already contained in K~.
    """
    alpha = p - 1 if alpha is None else alpha
    geometry = geometry or make_geometry("identity")
    viscosity = viscosity or constant_viscosity(1.0)
    if not geometry.is_identity:
        raise UnsupportedConfigurationError(
            f"Raviart-Thomas assembly is only available on the identity map, got '{geometry.kind}'"
        )
    if viscosity.constant != 1.0:
        raise UnsupportedConfigurationError(
            "Raviart-Thomas assembly requires unit viscosity"
        )
    c_pen = Config.C_PEN_FACTOR * (alpha + 1) if c_pen is None else c_pen
    spaces = rt_spaces(p, n_el, alpha)
    pres_space = build_space(p, n_el, alpha)
    quad = gauss_rule(spaces[0][0], q or p + 2)
    grid = TensorGrid((quad, quad, quad))

    factors = rt_univariate_factors(p, n_el, alpha, c_pen, quad)
    blocks = [[None] * 3 for _ in range(3)]
    for k in range(3):
        blocks[k][k] = sum(
            coef * _kron3(mats[::-1]) for coef, mats in velocity_block_terms(factors[k], k)
        ).tocsr()

    for r in range(3):
        for s in range(r + 1, 3):
            # ∫ ∂_s v^(r) ∂_r u^(s): derivative of the row basis along s,
            # of the column basis along r
            mats = [
                univariate_mixed(
                    spaces[r][d],
                    spaces[s][d],
                    quad,
                    row_deriv=int(d == s),
                    col_deriv=int(d == r),
                    row_interior=d == r,
                    col_interior=d == s,
                )
                for d in range(3)
            ]
            blocks[r][s] = _kron3(mats)
            blocks[s][r] = blocks[r][s].T.tocsr()

    b_blocks = []
    for r in range(3):
        mats = [
            univariate_mixed(
                pres_space,
                spaces[r][d],
                quad,
                col_deriv=int(d == r),
                col_interior=d == r,
            )
            for d in range(3)
        ]
        b_blocks.append((-_kron3(mats)).tocsr())

    M_p = univariate_KM(pres_space, quad).M
    Q = _kron3([M_p, M_p, M_p])

    w_p = quad.flat_weights @ _table(pres_space, quad, 0, False)
    system = StokesSystem(
        disc="RT",
        degree=p,
        regularity=alpha,
        n_el=n_el,
        velocity_spaces=spaces,
        pressure_spaces=(pres_space,) * 3,
        velocity_interior=tuple(tuple(d == k for d in range(3)) for k in range(3)),
        A_blocks=tuple(tuple(row) for row in blocks),
        B_blocks=tuple(b_blocks),
        Q=Q,
        rhs=np.zeros(0),
        geometry=geometry,
        viscosity=viscosity,
        grid=grid,
        pressure_weights=np.kron(w_p, np.kron(w_p, w_p)),
        pressure_constant=np.ones(pres_space.dim**3),
        c_pen=c_pen,
    )
    system = replace(system, rhs=np.zeros(system.size))
    logger.info(
        f"Assembled RT system p={p}, n_el={n_el}, alpha={alpha}, C_pen={c_pen:g}: "
        f"{system.n_velocity} velocity + {system.n_pressure} pressure dofs, "
        f"nnz(A)={system.A.nnz}"
    )
    return system


def _validate_faces(boundary_values: Mapping) -> dict[Face, np.ndarray]:
    faces = {}
    for key, value in (boundary_values or {}).items():
        try:
            axis, side = key
        except (TypeError, ValueError) as e:
            raise BoundaryDataError(f"Face key {key!r} is not an (axis, side) pair") from e
        if axis not in (1, 2, 3) or side not in (0, 1):
            raise BoundaryDataError(f"Face key {key!r} must have axis in 1..3 and side in 0/1")
        vector = np.asarray(value, dtype=float)
        if vector.shape != (3,) or not np.all(np.isfinite(vector)):
            raise BoundaryDataError(f"Face {key!r} needs a finite 3-vector, got {value!r}")
        faces[(axis, side)] = vector
    return faces


def _face_interior_mask(dims: Sequence[int], axis: int, side: int) -> np.ndarray:
    mask = np.zeros(dims, dtype=bool)
    index = [slice(1, n - 1) for n in dims]
    index[axis - 1] = 0 if side == 0 else dims[axis - 1] - 1
    mask[tuple(index)] = True
    return kron.vec(mask)


def _lift_strong(system: StokesSystem, faces: dict[Face, np.ndarray]) -> np.ndarray:
    pieces = []
    for k, dims in enumerate(system.velocity_full_dims):
        g = np.zeros(int(np.prod(dims)))
        for (axis, side), value in faces.items():
            if value[k] != 0.0:
                g[_face_interior_mask(dims, axis, side)] = value[k]
        pieces.append(g)
    return np.concatenate(pieces)


def _nitsche_rhs(system: StokesSystem, faces: dict[Face, np.ndarray]) -> np.ndarray:
    quad = system.grid.quads[0]
    h = system.velocity_spaces[0][0].mesh_size
    gamma = system.c_pen / h
    pieces = []
    for k in range(3):
        spaces = system.velocity_spaces[k]
        interior = system.velocity_interior[k]
        rhs_k = np.zeros(system.velocity_sizes[k])
        for (axis, side), value in faces.items():
            d = axis - 1
            if value[d] != 0.0:
                raise BoundaryDataError(
                    f"Face {(axis, side)} prescribes a nonzero normal velocity, "
                    "only tangential data can be imposed weakly"
                )
            if d == k or value[k] == 0.0:
                continue
            vectors = []
            for e in range(3):
                if e == d:
                    trace, normal = _boundary_traces(spaces[e], float(side))
                    sign = 1.0 if side == 1 else -1.0
                    vectors.append(2.0 * gamma * trace - sign * normal)
                else:
                    integral = quad.flat_weights @ _table(spaces[e], quad, 0, interior[e])
                    vectors.append(integral)
            rhs_k += value[k] * np.kron(vectors[2], np.kron(vectors[1], vectors[0]))
        pieces.append(rhs_k)
    return np.concatenate(pieces)


def apply_dirichlet_lifting(
    system: StokesSystem, boundary_values: Mapping[Face, Sequence[float]] | None
) -> tuple[StokesSystem, np.ndarray]:
    """
    Impose constant-per-face Dirichlet velocity data.

    Faces are keyed (axis, side) in parametric coordinates, e.g. (3, 1) for
    eta_3 = 1; faces not listed carry zero data. Taylor-Hood data is
    interpolated strongly on the face-interior coefficients and eliminated
    into the right-hand side. Raviart-Thomas data must be tangential and
    enters through the Nitsche right-hand side.

    :return: (system carrying the new right-hand side, right-hand side)
    """
    faces = _validate_faces(boundary_values)
    rhs = system.rhs.copy()
    if system.disc == "TH":
        g = _lift_strong(system, faces)
        if np.any(g):
            keep = system.interior_index
            rhs[: system.n_velocity] -= (system.full_A @ g)[keep]
            rhs[system.n_velocity :] -= system.full_B @ g
        updated = replace(system, rhs=rhs, lifting=g)
    else:
        rhs[: system.n_velocity] += _nitsche_rhs(system, faces)
        updated = replace(system, rhs=rhs)
    logger.info(
        f"Applied boundary data on {len(faces)} faces ({system.disc}), ‖rhs‖={np.linalg.norm(rhs):.4e}"
    )
    return updated, rhs


def _component_tables(system: StokesSystem, k: int, full: bool = False):
    quad = system.grid.quads[0]
    return [
        (
            _table(space, quad, 0, inner and not full),
            _table(space, quad, 1, inner and not full),
        )
        for space, inner in zip(system.velocity_spaces[k], system.velocity_interior[k])
    ]


def load_vector(
    system: StokesSystem, force: Callable[[np.ndarray], np.ndarray]
) -> StokesSystem:
    """Add ∫ f · v dx for a body force f(x) of shape (..., 3) to the velocity rhs."""
    samples = sample_geometry(system.geometry, system.grid)
    f = np.asarray(force(samples.physical), dtype=float)
    weight = samples.weights * samples.abs_det
    pieces = []
    for k in range(3):
        t = f[..., k] * weight
        for d, (values, _) in enumerate(_component_tables(system, k)):
            t = kron.mode_product(t, values.T, d + 1)
        pieces.append(kron.vec(t))
    rhs = system.rhs.copy()
    rhs[: system.n_velocity] += np.concatenate(pieces)
    return replace(system, rhs=rhs)


def expand_velocity(system: StokesSystem, u: np.ndarray) -> np.ndarray:
    """Full-basis velocity coefficients: lifting plus the eliminated-space solution."""
    n_full = sum(int(np.prod(d)) for d in system.velocity_full_dims)
    full = np.zeros(n_full) if system.lifting is None else system.lifting.copy()
    full[system.interior_index] += u
    return full


def pressure_zero_mean(system: StokesSystem, p: np.ndarray) -> np.ndarray:
    """Shift p by a constant pressure so that its integral over the domain vanishes."""
    w, c = system.pressure_weights, system.pressure_constant
    return p - (w @ p) / (w @ c) * c


def velocity_h1_error(
    system: StokesSystem,
    u: np.ndarray,
    grad_exact: Callable[[np.ndarray], np.ndarray],
) -> float:
    """
    H^1 seminorm of u_h - u on the mapped domain.

    :param u: Solution on the eliminated velocity space.
    :param grad_exact: x -> array (..., 3, 3) with entry [k, a] = d u_k / d x_a.
    """
    samples = sample_geometry(system.geometry, system.grid)
    exact = np.asarray(grad_exact(samples.physical), dtype=float)
    full = expand_velocity(system, u)
    bounds = np.cumsum((0,) + tuple(int(np.prod(d)) for d in system.velocity_full_dims))
    weight = samples.weights * samples.abs_det
    total = 0.0
    for k, dims in enumerate(system.velocity_full_dims):
        coeffs = kron.unvec(full[bounds[k] : bounds[k + 1]], dims)
        tables = _component_tables(system, k, full=True)
        grad_hat = []
        for a in range(3):
            t = coeffs
            for d, (values, derivs) in enumerate(tables):
                t = kron.mode_product(t, derivs if d == a else values, d + 1)
            grad_hat.append(t)
        grad_hat = np.stack(grad_hat, axis=-1)
        grad = np.einsum("...ba,...b->...a", samples.jacobian_inv, grad_hat)
        diff = grad - exact[..., k, :]
        total += float(np.sum(weight * np.sum(diff**2, axis=-1)))
    return float(np.sqrt(total))
