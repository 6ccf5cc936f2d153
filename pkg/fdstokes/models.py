from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from .config import Config

PRECONDITIONERS = ("pd", "pdg", "pt", "ptg", "pc", "pcg", "ic0")
MINRES_PRECONDITIONERS = ("pd", "pdg", "ic0")
GMRES_PRECONDITIONERS = ("pt", "ptg", "pc", "pcg")


class SolveReport(BaseModel):
    iterations: int = Field(..., ge=0, json_schema_extra={"example": 53})
    residuals: list[float] = Field(
        default_factory=list, json_schema_extra={"example": [1.0, 0.31, 0.02]}
    )
    preconditioned_residuals: list[float] = Field(default_factory=list)
    converged: bool = Field(..., json_schema_extra={"example": True})
    wall_time: float = Field(0.0, ge=0.0, json_schema_extra={"example": 0.74})
    prec_time: float = Field(0.0, ge=0.0, json_schema_extra={"example": 0.11})
    prec_applications: int = Field(0, ge=0)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    @property
    def prec_share(self) -> float:
        return self.prec_time / self.wall_time if self.wall_time > 0 else 0.0


def _pairing_error(prec: str, solver: str) -> str | None:
    if solver == "minres" and prec not in MINRES_PRECONDITIONERS:
        return f"Preconditioner '{prec}' is nonsymmetric and needs gmres"
    if solver == "gmres" and prec not in GMRES_PRECONDITIONERS:
        return f"Preconditioner '{prec}' is run with minres"
    return None


class BenchCase(BaseModel):
    geometry: Literal["cube", "annulus"] = Field(..., json_schema_extra={"example": "cube"})
    disc: Literal["TH", "RT"] = Field("TH", json_schema_extra={"example": "TH"})
    degree: int = Field(..., ge=1, json_schema_extra={"example": 2})
    n_el: int = Field(..., ge=1, json_schema_extra={"example": 8})
    regularity: int | None = Field(None, json_schema_extra={"example": 1})
    nu_k: float = Field(1.0, ge=1.0, json_schema_extra={"example": 100.0})
    viscosity_profile: Literal["azimuthal", "xz"] = Field(
        "azimuthal", json_schema_extra={"example": "azimuthal"}
    )
    prec: Literal["pd", "pdg", "pt", "ptg", "pc", "pcg", "ic0"] = Field(
        "pd", json_schema_extra={"example": "pdg"}
    )
    solver: Literal["minres", "gmres"] = Field(
        "minres", json_schema_extra={"example": "minres"}
    )
    tol: float = Field(default_factory=lambda: Config.KRYLOV_TOL, gt=0.0)
    maxit: int = Field(default_factory=lambda: Config.KRYLOV_MAXIT, ge=1)

    @field_validator("disc", mode="before")
    @classmethod
    def _upper_disc(cls, value):
        return value.upper() if isinstance(value, str) else value

    @field_validator("prec", "solver", "geometry", "viscosity_profile", mode="before")
    @classmethod
    def _lower(cls, value):
        return value.lower() if isinstance(value, str) else value

    @model_validator(mode="after")
    def _check_pairing(self):
        error = _pairing_error(self.prec, self.solver)
        if error:
            raise ValueError(error)
        if self.disc == "RT" and self.geometry != "cube":
            raise ValueError("Raviart-Thomas cases run on the cube only")
        if self.disc == "RT" and self.nu_k != 1.0:
            raise ValueError("Raviart-Thomas cases require constant unit viscosity")
        alpha = self.alpha
        if not -1 <= alpha <= self.degree - 1:
            raise ValueError(f"Regularity {alpha} is invalid for degree {self.degree}")
        return self

    @property
    def alpha(self) -> int:
        return self.degree - 1 if self.regularity is None else self.regularity

    @property
    def key(self) -> str:
        key = f"{self.geometry}/{self.disc}/{self.prec}/{self.solver}/p={self.degree}/nel={self.n_el}/k={self.nu_k:g}"
        if self.nu_k != 1.0 and self.viscosity_profile != "azimuthal":
            key += f"/{self.viscosity_profile}"
        return key


class BenchResult(BaseModel):
    case: BenchCase
    iterations: int = Field(..., ge=0, json_schema_extra={"example": 53})
    converged: bool
    total_time: float = Field(..., ge=0.0)
    setup_time: float = Field(..., ge=0.0)
    assembly_time: float = Field(0.0, ge=0.0)
    solve_time: float = Field(0.0, ge=0.0)
    prec_time: float = Field(0.0, ge=0.0)
    prec_share: float = Field(0.0, ge=0.0)
    velocity_dofs: int = Field(0, ge=0)
    pressure_dofs: int = Field(0, ge=0)
    final_residual: float = Field(float("nan"))
    error: str | None = None

    def row(self) -> dict:
        """Flat CSV row."""
        return {
            "geometry": self.case.geometry,
            "disc": self.case.disc,
            "prec": self.case.prec,
            "solver": self.case.solver,
            "degree": self.case.degree,
            "n_el": self.case.n_el,
            "nu_k": self.case.nu_k,
            "viscosity_profile": self.case.viscosity_profile,
            "iterations": self.iterations,
            "converged": self.converged,
            "total_time": f"{self.total_time:.4f}",
            "setup_time": f"{self.setup_time:.4f}",
            "assembly_time": f"{self.assembly_time:.4f}",
            "solve_time": f"{self.solve_time:.4f}",
            "prec_time": f"{self.prec_time:.4f}",
            "prec_share": f"{self.prec_share:.4f}",
            "velocity_dofs": self.velocity_dofs,
            "pressure_dofs": self.pressure_dofs,
            "final_residual": f"{self.final_residual:.3e}",
            "error": self.error or "",
        }


class SweepConfig(BaseModel):
    name: str = Field("sweep", json_schema_extra={"example": "cube_th_pd"})
    geometry: Literal["cube", "annulus"] = "cube"
    disc: Literal["TH", "RT"] = "TH"
    prec: Literal["pd", "pdg", "pt", "ptg", "pc", "pcg", "ic0"] = "pd"
    solver: Literal["minres", "gmres"] = "minres"
    degrees: list[int] = Field(default_factory=list, json_schema_extra={"example": [2, 3]})
    n_els: list[int] = Field(default_factory=list, json_schema_extra={"example": [4, 8]})
    nu_k: float = Field(1.0, ge=1.0)
    viscosity_profile: Literal["azimuthal", "xz"] = "azimuthal"
    tol: float = Field(default_factory=lambda: Config.KRYLOV_TOL, gt=0.0)
    maxit: int = Field(default_factory=lambda: Config.KRYLOV_MAXIT, ge=1)
    compare_reference: bool = False
    tolerance: float = Field(default_factory=lambda: Config.REGRESSION_TOLERANCE, gt=0.0)

    @field_validator("disc", mode="before")
    @classmethod
    def _upper_disc(cls, value):
        return value.upper() if isinstance(value, str) else value

    @model_validator(mode="after")
    def _check_pairing(self):
        error = _pairing_error(self.prec, self.solver)
        if error:
            raise ValueError(error)
        return self

    def cases(self) -> list[BenchCase]:
        return [
            BenchCase(
                geometry=self.geometry,
                disc=self.disc,
                degree=p,
                n_el=n,
                nu_k=self.nu_k,
                viscosity_profile=self.viscosity_profile,
                prec=self.prec,
                solver=self.solver,
                tol=self.tol,
                maxit=self.maxit,
            )
            for n in self.n_els
            for p in self.degrees
        ]


RESULT_COLUMNS = (
    "geometry",
    "disc",
    "prec",
    "solver",
    "degree",
    "n_el",
    "nu_k",
    "viscosity_profile",
    "iterations",
    "converged",
    "total_time",
    "setup_time",
    "assembly_time",
    "solve_time",
    "prec_time",
    "prec_share",
    "velocity_dofs",
    "pressure_dofs",
    "final_residual",
    "error",
)


class ReferenceDeviation(BaseModel):
    case: str = Field(..., json_schema_extra={"example": "cube/TH/pd/minres/p=2/nel=8/k=1"})
    table: str = Field("", json_schema_extra={"example": "cube_th_pd"})
    observed: int | None = Field(None, json_schema_extra={"example": 55})
    reference: int = Field(..., json_schema_extra={"example": 53})
    deviation: float = Field(..., json_schema_extra={"example": 0.038})
    flagged: bool = False
