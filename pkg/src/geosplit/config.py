from __future__ import annotations

import json
from enum import Enum
from typing import Any, Literal, Optional, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .fetch import load_document
from .prox import ProxFn, ProxKind
from .splitting import Scheme
from .util import ensure_unique


class Family(str, Enum):
    MIN_OP = "min-op"
    PDE_RD = "pde-rd"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MinOpParams(StrictModel):
    d: int = Field(2, ge=1, le=10)
    lo: float = -1.0
    hi: float = 1.0
    # exact FB steps behind the log-sum-exp test targets
    test_horizon: int = Field(20000, ge=1)

    @model_validator(mode="after")
    def _box(self) -> MinOpParams:
        if not self.lo < self.hi:
            raise ValueError("box needs lo < hi")
        return self


class PdeParams(StrictModel):
    nu_lo: float = Field(0.01, gt=0)
    nu_hi: float = Field(0.4, gt=0)
    T: float = Field(1.0, gt=0)
    grid_points: int = Field(2001, ge=81)
    time_steps: int = Field(2000, ge=100)
    reaction: bool = True

    @model_validator(mode="after")
    def _range(self) -> PdeParams:
        if not self.nu_lo < self.nu_hi:
            raise ValueError("nu range needs nu_lo < nu_hi")
        return self


class NoiseConfig(StrictModel):
    kind: Literal["zero", "gaussian"] = "zero"
    std: float = Field(1.0, gt=0)


class ExperimentConfig(StrictModel):
    family: Family
    seed: int = 0
    R: int = Field(ge=1)
    L: int = Field(ge=0)
    M: int = Field(ge=1)
    epochs: int = Field(ge=0)
    lr: float = Field(gt=0)
    batch_size: int = Field(ge=1)
    n_train: int = Field(ge=1)
    n_test: int = Field(ge=1)
    eval_interval: int = Field(ge=1)
    init: Literal["random", "theoretical"] = "random"
    train_samples: bool = False
    noise: NoiseConfig = NoiseConfig()
    minop: Optional[MinOpParams] = None
    pde: Optional[PdeParams] = None

    @model_validator(mode="after")
    def _family_params(self) -> ExperimentConfig:
        if self.family is Family.MIN_OP:
            if self.minop is None or self.pde is not None:
                raise ValueError("min-op configs carry a 'minop' block and no 'pde' block")
            if self.R > self.minop.d:
                raise ValueError(f"rank R={self.R} exceeds the dimension d={self.minop.d}")
        elif self.pde is None or self.minop is not None:
            raise ValueError("pde-rd configs carry a 'pde' block and no 'minop' block")
        if self.init == "theoretical" and (self.M < self.R + 1 or self.L < 1):
            raise ValueError("theoretical init needs M >= R + 1 and L >= 1")
        return self


FAMILY_DEFAULTS: dict[str, dict[str, Any]] = {
    Family.MIN_OP.value: {
        "R": 2,
        "L": 20,
        "M": 20,
        "epochs": 2000,
        "lr": 2e-3,
        "batch_size": 200,
        "n_train": 2000,
        "n_test": 200,
        "eval_interval": 100,
        "minop": {},
    },
    Family.PDE_RD.value: {
        "R": 8,
        "L": 10,
        "M": 20,
        "epochs": 4000,
        "lr": 1e-3,
        "batch_size": 25,
        "n_train": 100,
        "n_test": 25,
        "eval_interval": 250,
        "pde": {},
    },
}


class ProxConfig(StrictModel):
    kind: ProxKind
    lo: Optional[float] = None
    hi: Optional[float] = None
    weight: float = Field(1.0, gt=0)
    c: float = Field(1.0, gt=0)
    alternate_form: bool = False

    def build(self) -> ProxFn:
        return ProxFn.from_dict(self.model_dump())


class ObjectiveConfig(StrictModel):
    kind: Literal["quadratic", "logsumexp", "dirichlet", "logcosh"]
    A: Optional[list[list[float]]] = None
    b: Optional[list[float]] = None
    c: float = 0.0
    nu: Optional[float] = Field(None, gt=0)
    weights: Optional[list[float]] = None
    centers: Optional[list[float]] = None

    @model_validator(mode="after")
    def _fields(self) -> ObjectiveConfig:
        needed = {
            "quadratic": ("A", "b"),
            "logsumexp": ("b",),
            "dirichlet": ("nu",),
            "logcosh": ("weights", "centers"),
        }[self.kind]
        missing = [name for name in needed if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} objective needs {', '.join(missing)}")
        return self


class ScheduleConfig(StrictModel):
    kind: Literal["constant", "decay", "step-coupled"] = "constant"
    L: int = Field(200, ge=0)
    R: Optional[int] = Field(None, ge=1)
    alpha: float = Field(1.0, gt=0, le=1)
    step: Optional[float] = Field(None, gt=0)
    delta: float = Field(1e-6, gt=0)
    C: float = Field(1.0, gt=0)


class ProblemSpec(StrictModel):
    dim: int = Field(ge=1)
    basis: Literal["standard", "hermite"] = "standard"
    prox: ProxConfig
    objective: ObjectiveConfig
    x0: Optional[list[float]] = None
    tau: float = Field(1.0, gt=0)
    scheme: Scheme = Scheme.EXACT
    schedule: ScheduleConfig = ScheduleConfig()
    optimum: Optional[float] = None
    gap_tolerance: Optional[float] = Field(None, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def _shapes(self) -> ProblemSpec:
        if self.x0 is not None and len(self.x0) != self.dim:
            raise ValueError(f"x0 has {len(self.x0)} entries, expected {self.dim}")
        if self.schedule.R is not None and self.schedule.R > self.dim:
            raise ValueError(f"schedule rank {self.schedule.R} exceeds dim {self.dim}")
        if self.objective.kind == "dirichlet" and self.basis != "hermite":
            raise ValueError("the dirichlet objective lives on the hermite basis")
        return self


class ProxCheckConfig(StrictModel):
    seed: int = 0
    resolution: float = Field(1e-4, gt=0)
    samples: int = Field(100, ge=1)
    dim: int = Field(4, ge=1)
    taus: list[float] = [0.1, 1.0, 10.0]
    scale: float = Field(3.0, gt=0)
    tolerance: float = Field(2e-4, gt=0)


class FdCheckConfig(StrictModel):
    seed: int = 0
    dim: int = Field(32, ge=2)
    rate: float = Field(0.5, ge=0)
    deltas: list[float] = [1e-2, 1e-3, 1e-4]
    ranks: list[int] = [4, 8, 16]
    points: int = Field(50, ge=1)
    slope_lo: float = 0.8
    slope_hi: float = 1.2

    @model_validator(mode="after")
    def _ranks(self) -> FdCheckConfig:
        if any(r < 1 or r > self.dim for r in self.ranks):
            raise ValueError(f"ranks must lie in [1, {self.dim}]")
        if len(self.deltas) < 2 or any(d <= 0 for d in self.deltas):
            raise ValueError("need at least two positive deltas to fit a slope")
        return self


class GeoEquivConfig(StrictModel):
    seed: int = 7
    L: int = Field(10, ge=1)
    R: int = Field(8, ge=1)
    basis: Literal["standard", "hermite"] = "hermite"
    instances: int = Field(20, ge=1)
    C: float = Field(1.0, gt=0)
    tolerance: float = Field(1e-12, gt=0)


Schema = TypeVar("Schema", bound=StrictModel)


def with_family_defaults(data: dict[str, Any]) -> dict[str, Any]:
    family = data.get("family")
    defaults = FAMILY_DEFAULTS.get(family, {}) if isinstance(family, str) else {}
    merged = {**defaults, **data}
    for block in ("minop", "pde"):
        if block in defaults and isinstance(data.get(block), dict):
            merged[block] = {**defaults[block], **data[block]}
    return merged


def validate_config(data: dict[str, Any], schema: type[Schema]) -> Schema:
    if schema is ExperimentConfig:
        data = with_family_defaults(data)
    try:
        return schema.model_validate(data)
    except ValidationError as exc:
        keys = ensure_unique(".".join(str(part) for part in err["loc"]) or "config" for err in exc.errors())
        raise ConfigError(f"invalid {schema.__name__}", keys) from exc


def parse_config(source: str, schema: type[Schema]) -> Schema:
    return validate_config(load_document(source).data, schema)


def with_seed(config: Schema, seed: Optional[int]) -> Schema:
    if seed is None:
        return config
    return config.model_copy(update={"seed": seed})


def echo_config(config: StrictModel) -> dict[str, Any]:
    return config.model_dump(mode="json", exclude_none=True)


def echo_json(config: StrictModel) -> str:
    return json.dumps(echo_config(config), sort_keys=True, indent=2) + "\n"
