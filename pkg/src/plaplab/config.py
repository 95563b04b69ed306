"""Experiment configuration (JSON) and its validation."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator


class ConfigError(ValueError):
    """Invalid configuration; the message lists the offending field paths."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Block):
    dim: Literal[2, 3] = 2
    points: int = Field(33, ge=3)
    lower: float = -1.0
    upper: float = 1.0

    @model_validator(mode="after")
    def _box(self):
        if not self.upper > self.lower:
            raise ValueError("upper must exceed lower")
        return self


class ModelConfig(_Block):
    variant: Literal["pLaplace", "Uhlenbeck", "GeneralGrowth"] = "pLaplace"
    p: float = Field(2.0, gt=1)
    s: float = Field(0.0, ge=0)
    nu: float = Field(1.0, gt=0)
    L: float = Field(1.0, gt=0)
    profile: Literal["power", "power-log"] = "power"
    eps: float = Field(1e-3, gt=0)
    method: Literal["structure", "mollify"] = "structure"


class VConfig(_Block):
    kind: Literal["constant", "indicator", "power", "random-lognormal", "file", "zero"] = "constant"
    amplitude: float = 1.0
    center: Optional[list[float]] = None
    radius: float = Field(0.5, gt=0)
    alpha: float = Field(0.5, ge=0)
    seed: Optional[int] = None
    modes: int = Field(6, ge=1)
    sigma: float = 0.5
    file: Optional[str] = None

    @model_validator(mode="after")
    def _file(self):
        if self.kind == "file" and not self.file:
            raise ValueError("kind 'file' needs a file path")
        return self


class BConfig(_Block):
    law: Literal["power", "const", "power-signed", "zero"] = "power"
    q: float = Field(0.0, ge=0)
    Gamma: float = Field(0.0, ge=0)


class BoundaryConfig(_Block):
    kind: Literal["zero", "linear", "quadratic", "file"] = "zero"
    slope: Optional[list[float]] = None
    file: Optional[str] = None


class SolverConfig(_Block):
    tol: float = Field(1e-8, gt=0)
    cg_rtol: float = Field(1e-10, gt=0)
    max_newton: int = Field(200, ge=1)
    max_picard: int = Field(50, ge=1)
    picard_tol: float = Field(1e-8, gt=0)
    divergence_cap: float = Field(1e6, gt=0)
    growth_window: int = Field(5, ge=2)
    eps_start: Optional[float] = Field(None, gt=0)
    critical_c0: Optional[float] = Field(None, gt=0)
    critical_eps0: Optional[float] = Field(None, gt=0)
    critical_radius: Optional[float] = Field(None, gt=0)


class ProblemConfig(_Block):
    mode: Literal["dirichlet", "fixed-point"] = "dirichlet"
    manufactured: Optional[Literal["quadratic", "linear"]] = None
    boundary: BoundaryConfig = BoundaryConfig()
    V: Optional[VConfig] = None
    b: Optional[BConfig] = None


class PotentialConfig(_Block):
    R: float = Field(0.5, gt=0)
    centers: Optional[list[list[float]]] = None
    centers_file: Optional[str] = None
    region: Literal["centers", "full"] = "centers"
    beta: float = Field(0.5, gt=0)
    p: float = Field(2.0, gt=1)
    rule: Literal["center", "overlap"] = "center"


class LorentzConfig(_Block):
    count: int = Field(20, ge=1)
    dim: Literal[2, 3] = 3
    points: int = Field(9, ge=3)
    params: list[tuple[float, float]] = [(2.0, 1.0), (2.0, 2.0), (3.0, 1.0), (3.0, 2.0)]
    square_identity: bool = True
    tolerance: float = Field(1e-8, gt=0)


class VerifyConfig(_Block):
    estimate: Literal[
        "apl", "aes1", "aes2", "general-growth", "caccioppoli", "oscillation", "degiorgi",
        "lorentz-lipschitz", "lorentz-bound", "linear",
    ] = "apl"
    p_values: list[float] = [2.0]
    refinements: list[int] = [17, 33, 65]
    ball_radius: float = Field(0.8, gt=0)
    inner_radius: float = Field(0.4, gt=0)
    degiorgi_radius: float = Field(0.25, gt=0)
    levels: int = Field(10, ge=1)
    centers: int = Field(100, ge=1)
    t: Optional[float] = Field(None, gt=0)
    q_fractions: list[float] = [0.25, 0.5]
    V_kinds: list[str] = ["constant", "indicator", "power", "random-lognormal"]


class HodgeConfig(_Block):
    count: int = Field(20, ge=1)
    deltas: list[float] = [0.0, 0.05, 0.1, 0.2]
    t: float = Field(2.5, gt=1)
    points: int = Field(65, ge=5)


class SweepConfig(_Block):
    p: list[float] = [1.5, 2.0, 3.0, 4.0]
    points: list[int] = [17, 33, 65]
    eps: list[float] = [1e-3]
    amplitude: list[float] = [1.0]
    manufactured: Literal["quadratic", "linear"] = "quadratic"

    @field_validator("p")
    @classmethod
    def _p(cls, v):
        if any(x <= 1 for x in v):
            raise ValueError("every p must exceed 1")
        return v


class ExperimentConfig(_Block):
    seed: int = 0
    output: Optional[str] = None
    threads: Optional[int] = Field(None, ge=1)
    grid: GridConfig = GridConfig()
    model: ModelConfig = ModelConfig()
    problem: ProblemConfig = ProblemConfig()
    solver: SolverConfig = SolverConfig()
    potential: PotentialConfig = PotentialConfig()
    lorentz: LorentzConfig = LorentzConfig()
    verify: VerifyConfig = VerifyConfig()
    hodge: HodgeConfig = HodgeConfig()
    sweep: SweepConfig = SweepConfig()


def _describe(err):
    lines = []
    for e in err.errors():
        path = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def _check_files(cfg, base):
    paths = []
    if cfg.problem.V is not None and cfg.problem.V.kind == "file":
        paths.append(("problem.V.file", cfg.problem.V.file))
    if cfg.problem.boundary.kind == "file":
        paths.append(("problem.boundary.file", cfg.problem.boundary.file))
    if cfg.potential.centers_file:
        paths.append(("potential.centers_file", cfg.potential.centers_file))
    for where, p in paths:
        if p is None:
            raise ConfigError(f"{where}: a file path is required")
        full = Path(p) if Path(p).is_absolute() else base / p
        if not full.exists():
            raise ConfigError(f"{where}: file not found: {p}")


def resolve(base, path):
    p = Path(path)
    return p if p.is_absolute() else Path(base) / p


def parse_config(data, base="."):
    """Validate a config mapping; raises ConfigError with field paths."""
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_describe(err)) from None
    _check_files(cfg, Path(base))
    return cfg


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return parse_config(data, path.parent)
