from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional


class Subcommand(str, Enum):
    PROX_CHECK = "prox-check"
    SOLVE = "solve"
    FD_CHECK = "fd-check"
    GEO_EQUIV = "geo-equiv"
    TRAIN = "train"
    EVAL = "eval"
    REPORT = "report"

    @property
    def needs_config(self) -> bool:
        return self in {Subcommand.SOLVE, Subcommand.TRAIN, Subcommand.EVAL}


@dataclass
class CliInvocation:
    subcommand: Subcommand
    config: Optional[str] = None
    out_dir: Path = Path(".")
    seed: Optional[int] = None
    quiet: bool = False


@dataclass
class ProxCheckRow:
    prox: str
    tau: float
    max_error: float
    firm_nonexpansive: bool
    lipschitz: bool
    passed: bool


@dataclass
class GeoEquivRow:
    instance: int
    prox: str
    L: int
    R: int
    max_dev: float


@dataclass
class GeoEquivResult:
    rows: list[GeoEquivRow] = field(default_factory=list)
    tolerance: float = 1e-12

    @property
    def max_dev(self) -> float:
        return max((row.max_dev for row in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_dev <= self.tolerance


@dataclass
class MetricsRow:
    epoch: int
    train_mse: float
    test_mse: Optional[float] = None


@dataclass
class RunSummary:
    run: str
    epochs: int
    final_train_mse: float
    min_train_mse: float
    final_test_mse: Optional[float]
    min_test_mse: Optional[float]
