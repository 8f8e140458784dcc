"""Finite-rank representation of the Hilbert space: bases, encode/lift/project."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import roots_hermite

from .errors import BasisError, DimensionError, RankError

DOMAIN = (-10.0, 10.0)

# a GridFn off the quadrature nodes must cover this window at this spacing
_GRID_COVER = 8.0
_GRID_MAX_SPACING = 0.25


class BasisKind(str, Enum):
    STANDARD = "standard-euclidean"
    HERMITE = "hermite-gaussian"


@dataclass(frozen=True)
class BasisSpec:
    kind: BasisKind
    max_rank: int
    dim: int | None = None
    node_count: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BasisKind(self.kind))
        if self.max_rank < 1:
            raise BasisError("max_rank must be at least 1")
        if self.kind is BasisKind.STANDARD:
            dim = self.max_rank if self.dim is None else self.dim
            if self.max_rank > dim:
                raise BasisError(f"max_rank {self.max_rank} exceeds dimension {dim}")
            object.__setattr__(self, "dim", dim)
            object.__setattr__(self, "node_count", None)
        else:
            nodes = 4 * self.max_rank if self.node_count is None else self.node_count
            if nodes < 4 * self.max_rank:
                raise BasisError(f"hermite basis needs at least {4 * self.max_rank} quadrature nodes, got {nodes}")
            object.__setattr__(self, "node_count", nodes)
            object.__setattr__(self, "dim", None)

    @classmethod
    def standard(cls, dim: int, max_rank: int | None = None) -> BasisSpec:
        return cls(BasisKind.STANDARD, dim if max_rank is None else max_rank, dim=dim)

    @classmethod
    def hermite(cls, max_rank: int, node_count: int | None = None) -> BasisSpec:
        return cls(BasisKind.HERMITE, max_rank, node_count=node_count)

    @property
    def basis_id(self) -> str:
        if self.kind is BasisKind.STANDARD:
            return f"standard:{self.dim}:{self.max_rank}"
        return f"hermite:{self.max_rank}:{self.node_count}"

    @property
    def is_hermite(self) -> bool:
        return self.kind is BasisKind.HERMITE

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "max_rank": self.max_rank,
            "dim": self.dim,
            "node_count": self.node_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> BasisSpec:
        return cls(
            BasisKind(data["kind"]),
            int(data["max_rank"]),
            dim=data.get("dim"),
            node_count=data.get("node_count"),
        )


@dataclass(frozen=True, eq=False)
class CoeffVec:
    coeffs: np.ndarray
    basis: BasisSpec

    def __post_init__(self) -> None:
        arr = np.array(self.coeffs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise DimensionError("coefficients must be a non-empty 1-D sequence")
        if arr.size > self.basis.max_rank:
            raise RankError(f"rank {arr.size} exceeds max_rank {self.basis.max_rank}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficients must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def zeros(cls, basis: BasisSpec, rank: int) -> CoeffVec:
        return cls(np.zeros(rank), basis)

    @property
    def rank(self) -> int:
        return int(self.coeffs.size)

    @property
    def basis_id(self) -> str:
        return self.basis.basis_id

    def _check(self, other: CoeffVec) -> None:
        if self.basis_id != other.basis_id or self.rank != other.rank:
            raise DimensionError(
                f"cannot combine {self.basis_id}/rank {self.rank} with {other.basis_id}/rank {other.rank}"
            )

    def __add__(self, other: CoeffVec) -> CoeffVec:
        self._check(other)
        return CoeffVec(self.coeffs + other.coeffs, self.basis)

    def __sub__(self, other: CoeffVec) -> CoeffVec:
        self._check(other)
        return CoeffVec(self.coeffs - other.coeffs, self.basis)

    def __mul__(self, scalar: float) -> CoeffVec:
        return CoeffVec(self.coeffs * float(scalar), self.basis)

    __rmul__ = __mul__

    def __neg__(self) -> CoeffVec:
        return CoeffVec(-self.coeffs, self.basis)

    def inner(self, other: CoeffVec) -> float:
        self._check(other)
        return float(self.coeffs @ other.coeffs)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def padded(self, rank: int) -> CoeffVec:
        if rank < self.rank:
            raise RankError(f"cannot pad rank {self.rank} down to {rank}")
        out = np.zeros(rank)
        out[: self.rank] = self.coeffs
        return CoeffVec(out, self.basis)


@dataclass(frozen=True, eq=False)
class GridFn:
    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.array(self.nodes, dtype=np.float64)
        values = np.array(self.values, dtype=np.float64)
        if nodes.ndim != 1 or nodes.shape != values.shape:
            raise DimensionError("nodes and values must be 1-D and of equal length")
        if nodes.size > 1 and not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        nodes.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    def to_csv(self, path: Path) -> None:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["node", "value"])
            for node, value in zip(self.nodes, self.values):
                writer.writerow([repr(float(node)), repr(float(value))])

    @classmethod
    def from_csv(cls, path: Path) -> GridFn:
        with path.open("r", encoding="utf-8", newline="") as handle:
            rows = list(csv.DictReader(handle))
        return cls([float(r["node"]) for r in rows], [float(r["value"]) for r in rows])


def uniform_grid(n: int, lo: float = DOMAIN[0], hi: float = DOMAIN[1]) -> np.ndarray:
    if n < 2:
        raise ValueError("a grid needs at least two points")
    return np.linspace(lo, hi, n)


def hermite_functions(count: int, u: np.ndarray | float) -> np.ndarray:
    """Values of e_0..e_{count-1} at ``u``; the last axis indexes the function.

    Uses the normalised recurrence
    e_{j+1} = sqrt(2/(j+1)) u e_j - sqrt(j/(j+1)) e_{j-1}
    so no factorials appear.
    """
    u = np.asarray(u, dtype=np.float64)
    out = np.empty(u.shape + (count,))
    out[..., 0] = np.pi ** -0.25 * np.exp(-0.5 * u * u)
    if count > 1:
        out[..., 1] = math.sqrt(2.0) * u * out[..., 0]
    for j in range(1, count - 1):
        out[..., j + 1] = math.sqrt(2.0 / (j + 1)) * u * out[..., j] - math.sqrt(j / (j + 1)) * out[..., j - 1]
    return out


def _require_hermite(basis: BasisSpec) -> None:
    if not basis.is_hermite:
        raise BasisError(f"{basis.kind.value} basis has no pointwise representation")


@lru_cache(maxsize=32)
def quadrature(basis: BasisSpec) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and weights with e^{u^2} folded in, so sum(W * phi(u)) ~ int phi."""
    _require_hermite(basis)
    nodes, weights = roots_hermite(basis.node_count)
    folded = np.exp(np.log(weights) + nodes * nodes)
    nodes.setflags(write=False)
    folded.setflags(write=False)
    return nodes, folded


@lru_cache(maxsize=32)
def node_matrix(basis: BasisSpec) -> np.ndarray:
    nodes, _ = quadrature(basis)
    table = hermite_functions(basis.max_rank, nodes)
    table.setflags(write=False)
    return table


def lift_values(basis: BasisSpec, coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    table = node_matrix(basis)[:, : coeffs.shape[-1]]
    return coeffs @ table.T


def encode_values(basis: BasisSpec, values: np.ndarray, rank: int) -> np.ndarray:
    _, weights = quadrature(basis)
    table = node_matrix(basis)[:, :rank]
    return (np.asarray(values, dtype=np.float64) * weights) @ table


def basis_eval(basis: BasisSpec, j: int, u: float) -> float:
    _require_hermite(basis)
    if not 0 <= j < basis.max_rank:
        raise RankError(f"basis index {j} outside [0, {basis.max_rank})")
    return float(hermite_functions(j + 1, u)[j])


def _check_rank(basis: BasisSpec, rank: int) -> None:
    if not 1 <= rank <= basis.max_rank:
        raise RankError(f"rank {rank} outside [1, {basis.max_rank}]")


def encode(x: Union[GridFn, Sequence[float], np.ndarray], basis: BasisSpec, rank: int) -> CoeffVec:
    _check_rank(basis, rank)
    if basis.kind is BasisKind.STANDARD:
        if isinstance(x, GridFn):
            raise BasisError("the standard basis encodes raw vectors, not grid functions")
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape != (basis.dim,):
            raise DimensionError(f"expected a vector of length {basis.dim}, got shape {arr.shape}")
        return CoeffVec(arr[:rank], basis)

    nodes, _ = quadrature(basis)
    if not isinstance(x, GridFn):
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape != nodes.shape:
            raise BasisError(f"raw vectors must hold values at the {nodes.size} quadrature nodes")
        return CoeffVec(encode_values(basis, arr, rank), basis)
    if x.nodes.shape == nodes.shape and np.allclose(x.nodes, nodes, rtol=0.0, atol=1e-12):
        return CoeffVec(encode_values(basis, x.values, rank), basis)
    spacing = float(np.max(np.diff(x.nodes))) if x.nodes.size > 1 else math.inf
    if x.nodes[0] > -_GRID_COVER or x.nodes[-1] < _GRID_COVER or spacing > _GRID_MAX_SPACING:
        raise BasisError(
            f"grid must cover [-{_GRID_COVER}, {_GRID_COVER}] with spacing <= {_GRID_MAX_SPACING} "
            "or sit on the quadrature nodes"
        )
    table = hermite_functions(rank, x.nodes)
    return CoeffVec(trapezoid(x.values[:, None] * table, x.nodes, axis=0), basis)


def lift(z: CoeffVec, nodes: Sequence[float] | np.ndarray | None = None) -> GridFn:
    if z.basis.kind is BasisKind.STANDARD:
        values = np.zeros(z.basis.dim)
        values[: z.rank] = z.coeffs
        return GridFn(np.arange(z.basis.dim, dtype=np.float64), values)
    points = quadrature(z.basis)[0] if nodes is None else np.asarray(nodes, dtype=np.float64)
    return GridFn(points, hermite_functions(z.rank, points) @ z.coeffs)


def project(z: CoeffVec, rank: int, keep_rank: bool = False) -> CoeffVec:
    if not 1 <= rank <= z.rank:
        raise RankError(f"cannot project rank {z.rank} onto rank {rank}")
    if not keep_rank:
        return CoeffVec(z.coeffs[:rank], z.basis)
    out = np.zeros(z.rank)
    out[:rank] = z.coeffs[:rank]
    return CoeffVec(out, z.basis)


def derivative_matrix(basis: BasisSpec, rank: int) -> np.ndarray:
    """Matrix of d/du on e_0..e_{rank-1}: e_j' = sqrt(j/2) e_{j-1} - sqrt((j+1)/2) e_{j+1}."""
    if basis.kind is not BasisKind.HERMITE:
        raise BasisError("derivative matrix is only defined for the hermite basis")
    if rank < 1:
        raise RankError("rank must be positive")
    out = np.zeros((rank, rank))
    for j in range(rank):
        if j >= 1:
            out[j - 1, j] = math.sqrt(j / 2.0)
        if j + 1 < rank:
            out[j + 1, j] = -math.sqrt((j + 1) / 2.0)
    return out
