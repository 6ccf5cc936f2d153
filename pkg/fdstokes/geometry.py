import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import GeometryError, ParameterError, WeightError

logger = logging.getLogger(__name__)

PointFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class GeometryMap:
    """
    Map G from the parametric cube [0,1]^3 to the physical domain.

    ``evaluate`` and ``jacobian`` take points of shape (..., 3) and return
    shapes (..., 3) and (..., 3, 3) respectively.
    """

    kind: str
    evaluate: PointFn
    jacobian: PointFn

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def determinant(self, eta: np.ndarray) -> np.ndarray:
        return np.linalg.det(self.jacobian(eta))

    def check_nonsingular(self, eta: np.ndarray) -> np.ndarray:
        """Return det J_G at eta, raising if it vanishes anywhere."""
        det = self.determinant(eta)
        scale = max(float(np.max(np.abs(det))), 1.0)
        if np.any(np.abs(det) <= 1e-14 * scale):
            bad = int(np.count_nonzero(np.abs(det) <= 1e-14 * scale))
            raise GeometryError(
                f"Jacobian of the '{self.kind}' map is singular at {bad} quadrature nodes"
            )
        return det


def _identity_map(eta):
    return np.array(eta, dtype=float, copy=True)


def _identity_jacobian(eta):
    eta = np.asarray(eta, dtype=float)
    return np.broadcast_to(np.eye(3), eta.shape[:-1] + (3, 3)).copy()


def _annulus(r_in: float, r_out: float, height: float, angle: float):
    dr = r_out - r_in

    def evaluate(eta):
        eta = np.asarray(eta, dtype=float)
        r = r_in + dr * eta[..., 0]
        theta = angle * eta[..., 1]
        return np.stack(
            [r * np.cos(theta), r * np.sin(theta), height * eta[..., 2]], axis=-1
        )

    def jacobian(eta):
        eta = np.asarray(eta, dtype=float)
        r = r_in + dr * eta[..., 0]
        theta = angle * eta[..., 1]
        J = np.zeros(eta.shape[:-1] + (3, 3))
        J[..., 0, 0] = dr * np.cos(theta)
        J[..., 1, 0] = dr * np.sin(theta)
        J[..., 0, 1] = -angle * r * np.sin(theta)
        J[..., 1, 1] = angle * r * np.cos(theta)
        J[..., 2, 2] = height
        return J

    return evaluate, jacobian


def make_geometry(kind: str, **params) -> GeometryMap:
    """
    Build one of the supported geometry maps.

    :param kind: "identity" (alias "cube"), "eighth_annulus" (alias "annulus")
        or "callable".
    :param params: For the annulus: r_in (1), r_out (2), height (1), angle (pi/4).
        For callable: ``evaluate`` and ``jacobian`` functions.
    """
    kind = kind.lower()
    if kind in ("identity", "cube"):
        return GeometryMap("identity", _identity_map, _identity_jacobian)
    if kind in ("eighth_annulus", "annulus"):
        r_in = float(params.get("r_in", 1.0))
        r_out = float(params.get("r_out", 2.0))
        height = float(params.get("height", 1.0))
        angle = float(params.get("angle", np.pi / 4))
        if not 0 < r_in < r_out or height <= 0 or angle <= 0:
            raise GeometryError(
                f"Invalid annulus parameters r_in={r_in}, r_out={r_out}, height={height}, angle={angle}"
            )
        evaluate, jacobian = _annulus(r_in, r_out, height, angle)
        return GeometryMap("eighth_annulus", evaluate, jacobian)
    if kind == "callable":
        try:
            return GeometryMap("callable", params["evaluate"], params["jacobian"])
        except KeyError as e:
            raise GeometryError(
                "A callable geometry needs both 'evaluate' and 'jacobian' functions"
            ) from e
    raise GeometryError(f"Unknown geometry kind '{kind}'")


@dataclass(frozen=True, eq=False)
class ViscosityField:
    """Kinematic viscosity nu(x) > 0 on the physical domain."""

    evaluate: PointFn
    constant: float | None = None
    label: str = ""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant is not None:
            return np.full(x.shape[:-1], self.constant)
        nu = np.asarray(self.evaluate(x), dtype=float)
        if np.any(nu <= 0):
            raise WeightError(f"Viscosity {self.label} is not positive at all sampled points")
        return nu


def constant_viscosity(nu: float = 1.0) -> ViscosityField:
    if nu <= 0:
        raise ParameterError(f"Viscosity must be positive, got {nu}")
    nu = float(nu)
    return ViscosityField(
        evaluate=lambda x: np.full(np.shape(x)[:-1], nu),
        constant=nu,
        label=f"nu={nu:g}",
    )


VISCOSITY_PROFILES = ("xz", "azimuthal")


def variable_viscosity(k: float, profile: str = "xz", span: float = np.pi / 4) -> ViscosityField:
    """
    Viscosity with contrast parameter k >= 1.

    ``xz``: nu(x) = 1 + (k-1)(1 + cos(arctan(x/z)))/2. On a domain with
    x, z >= 0 the angle stays in [0, pi/2], so nu only covers [(k+1)/2, k].

    ``azimuthal``: the same cosine law in the polar angle phi = arctan2(y, x)
    about the z axis, rescaled by ``span`` so that nu runs from k at phi = 0
    down to 1 at phi = span.
    """
    if k < 1:
        raise ParameterError(f"Viscosity contrast k must be at least 1, got {k}")
    if profile not in VISCOSITY_PROFILES:
        raise ParameterError(f"Unknown viscosity profile '{profile}', expected one of {VISCOSITY_PROFILES}")
    if span <= 0:
        raise ParameterError(f"Viscosity span must be positive, got {span}")
    if k == 1:
        return constant_viscosity(1.0)
    k = float(k)

    def evaluate(x):
        if profile == "xz":
            angle = np.arctan2(x[..., 0], x[..., 2])
        else:
            angle = np.pi * np.arctan2(x[..., 1], x[..., 0]) / span
        return 1.0 + (k - 1.0) * (1.0 + np.cos(angle)) / 2.0

    return ViscosityField(evaluate=evaluate, label=f"k={k:g}/{profile}")
