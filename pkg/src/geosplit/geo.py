from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import DimensionError, ScheduleError
from .hilbert import BasisSpec, CoeffVec
from .prox import ProxFn, apply_prox
from .splitting import ObjectiveG, SplitSchedule

logger = logging.getLogger(__name__)

PARAM_FIELDS = ("A", "B", "b", "gamma", "samples", "readout")


class NoiseKind(str, Enum):
    ZERO = "zero"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = NoiseKind.ZERO
    std: float = 1.0
    seed: int = 0
    # fixed offset added to every draw; empty means the origin
    center: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind is NoiseKind.GAUSSIAN and not self.std > 0:
            raise ValueError("gaussian noise needs a positive std")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "std": self.std, "seed": self.seed, "center": list(self.center)}

    @classmethod
    def from_dict(cls, data: dict) -> NoiseSpec:
        return cls(NoiseKind(data["kind"]), float(data.get("std", 1.0)), int(data.get("seed", 0)), tuple(data.get("center", ())))


def sample_noise_batch(spec: NoiseSpec, basis: BasisSpec, rank: int, n: int) -> np.ndarray:
    if spec.center and len(spec.center) != rank:
        raise DimensionError(f"noise center has {len(spec.center)} coefficients, expected {rank}")
    if spec.kind is NoiseKind.ZERO:
        draws = np.zeros((n, rank))
    else:
        generator = np.random.Generator(np.random.Philox(key=spec.seed % 2**64))
        draws = generator.normal(0.0, spec.std, size=(n, rank))
    return draws + np.asarray(spec.center) if spec.center else draws


def sample_noise(spec: NoiseSpec, basis: BasisSpec, rank: int) -> CoeffVec:
    return CoeffVec(sample_noise_batch(spec, basis, rank, 1)[0], basis)


@dataclass(frozen=True, eq=False)
class GeoParams:
    """Weights of an (L+1)-layer operator plus readout.

    Per-layer arrays are stacked on axis 0: A (L+1, R, R), B (L+1, R, M),
    b (L+1, R), gamma (L+1,), samples (L+1, M, R). readout is (R, R).
    """

    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    samples: np.ndarray
    readout: np.ndarray
    basis: BasisSpec
    prox: ProxFn
    tau: float = 1.0
    noise: NoiseSpec = NoiseSpec()

    def __post_init__(self) -> None:
        for name in PARAM_FIELDS:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        depth, R = self.A.shape[0], self.A.shape[-1]
        M = self.B.shape[-1]
        expected = {
            "A": (depth, R, R),
            "B": (depth, R, M),
            "b": (depth, R),
            "gamma": (depth,),
            "samples": (depth, M, R),
            "readout": (R, R),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if depth < 1:
            raise DimensionError("an operator needs at least one layer")
        if np.any(self.gamma < 0.0) or np.any(self.gamma > 1.0):
            raise ValueError("gates must lie in [0, 1]")
        if R > self.basis.max_rank:
            raise DimensionError(f"rank {R} exceeds the basis max_rank {self.basis.max_rank}")

    @property
    def R(self) -> int:
        return int(self.A.shape[-1])

    @property
    def L(self) -> int:
        return int(self.A.shape[0]) - 1

    @property
    def M(self) -> int:
        return int(self.B.shape[-1])

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def with_arrays(self, **arrays: np.ndarray) -> GeoParams:
        return replace(self, **arrays)


def count_params(params: GeoParams) -> int:
    R, L, M = params.R, params.L, params.M
    return (L + 1) * (R * R + R * M + R + 1) + R * R + (L + 1) * M * R


# Layer algebra shared with the autodiff replay so both paths run identical arithmetic.


def sample_points(X: np.ndarray, samples: np.ndarray, dim: int) -> np.ndarray:
    points = X[:, None, :] + samples[None, :, :]
    if dim == points.shape[-1]:
        return points
    if dim < points.shape[-1]:
        raise DimensionError(f"objective dimension {dim} is below the operator rank {points.shape[-1]}")
    padded = np.zeros(points.shape[:-1] + (dim,))
    padded[..., : points.shape[-1]] = points
    return padded


def layer_preactivation(A: np.ndarray, B: np.ndarray, b: np.ndarray, X: np.ndarray, gvals: np.ndarray) -> np.ndarray:
    return X @ A.T + gvals @ B.T + b


def layer_activation(params: GeoParams, pre: np.ndarray) -> np.ndarray:
    return apply_prox(params.prox, params.tau, pre, params.basis)


def layer_gate(gamma: float, X: np.ndarray, act: np.ndarray) -> np.ndarray:
    return gamma * X + (1.0 - gamma) * act


def _check_input(params: GeoParams, g: ObjectiveG, X0: np.ndarray) -> np.ndarray:
    X0 = np.asarray(X0, dtype=np.float64)
    if X0.ndim != 2 or X0.shape[-1] != params.R:
        raise DimensionError(f"operator input must be shaped (N, {params.R}), got {X0.shape}")
    if g.dim < params.R:
        raise DimensionError(f"objective dimension {g.dim} is below the operator rank {params.R}")
    return X0


def geo_forward_batch(params: GeoParams, g: ObjectiveG, X0: np.ndarray) -> np.ndarray:
    X = _check_input(params, g, X0)
    for l in range(params.L + 1):
        gvals = g.values(sample_points(X, params.samples[l], g.dim))
        pre = layer_preactivation(params.A[l], params.B[l], params.b[l], X, gvals)
        X = layer_gate(params.gamma[l], X, layer_activation(params, pre))
    return X @ params.readout.T


def geo_forward(params: GeoParams, g: ObjectiveG, noise: CoeffVec) -> CoeffVec:
    if noise.rank != params.R:
        raise DimensionError(f"noise has rank {noise.rank}, operator expects {params.R}")
    return CoeffVec(geo_forward_batch(params, g, noise.coeffs[None, :])[0], params.basis)


def _theoretical_samples(R: int, M: int, delta: float) -> np.ndarray:
    samples = np.zeros((M, R))
    samples[np.arange(R), np.arange(R)] = delta
    return samples


def build_theoretical_geo(
    f: ProxFn,
    schedule: SplitSchedule,
    basis: BasisSpec,
    tau: float = 1.0,
    noise: NoiseSpec = NoiseSpec(),
    width: int | None = None,
    enforce_decay: bool = True,
) -> GeoParams:
    """Weights under which the forward pass reproduces the projected FB iterate z_L.

    Sample points are delta*e_i plus a zero point; row i of B holds -lambda/delta in
    column i and +lambda/delta in the zero-point column, so the B branch produces
    -lambda times the rank-R divided difference. Layer L is a pass-through.
    """
    if enforce_decay and not schedule.decay_compliant():
        raise ScheduleError("theoretical weights need a schedule satisfying the decay condition")
    R, L, delta = schedule.R, schedule.L, schedule.delta
    M = R + 1 if width is None else width
    if M < R + 1:
        raise DimensionError(f"theoretical weights need width >= {R + 1}, got {M}")
    A = np.broadcast_to(np.eye(R), (L + 1, R, R)).copy()
    B = np.zeros((L + 1, R, M))
    for l, lam in enumerate(schedule.lambdas):
        B[l, np.arange(R), np.arange(R)] = -lam / delta
        B[l, :, R] = lam / delta
    gamma = np.array([1.0 - a for a in schedule.alphas[:L]] + [1.0])
    samples = np.broadcast_to(_theoretical_samples(R, M, delta), (L + 1, M, R)).copy()
    logger.debug("theoretical weights: R=%d L=%d M=%d delta=%g", R, L, M, delta)
    return GeoParams(A, B, np.zeros((L + 1, R)), gamma, samples, np.eye(R), basis, f, tau, noise)


def init_geo(
    R: int,
    L: int,
    M: int,
    basis: BasisSpec,
    prox: ProxFn,
    tau: float,
    rng: np.random.Generator,
    delta: float = 0.01,
    noise: NoiseSpec = NoiseSpec(),
) -> GeoParams:
    depth = L + 1
    A = np.eye(R) + 0.01 * rng.standard_normal((depth, R, R))
    B = 0.01 * rng.standard_normal((depth, R, M))
    directions = [delta * row for row in np.eye(R)] + [np.zeros(R)]
    while len(directions) < M:
        v = rng.standard_normal(R)
        directions.append(delta * v / np.linalg.norm(v))
    samples = np.broadcast_to(np.asarray(directions[:M]), (depth, M, R)).copy()
    return GeoParams(A, B, np.zeros((depth, R)), np.full(depth, 0.5), samples, np.eye(R), basis, prox, tau, noise)


def geo_to_dict(params: GeoParams) -> dict:
    layers = [
        {
            "A": params.A[l].tolist(),
            "B": params.B[l].tolist(),
            "b": params.b[l].tolist(),
            "gamma": float(params.gamma[l]),
            "samples": params.samples[l].tolist(),
        }
        for l in range(params.L + 1)
    ]
    return {
        "R": params.R,
        "L": params.L,
        "M": params.M,
        "basis": params.basis.to_dict(),
        "basis_id": params.basis.basis_id,
        "prox": params.prox.to_dict(),
        "tau": params.tau,
        "noise": params.noise.to_dict(),
        "layers": layers,
        "readout": params.readout.tolist(),
    }


def geo_from_dict(data: dict) -> GeoParams:
    layers = data["layers"]
    basis = BasisSpec.from_dict(data["basis"])
    if basis.basis_id != data.get("basis_id", basis.basis_id):
        raise ValueError(f"basis id {data['basis_id']} does not match the stored basis")
    params = GeoParams(
        A=np.array([layer["A"] for layer in layers]),
        B=np.array([layer["B"] for layer in layers]).reshape(len(layers), data["R"], data["M"]),
        b=np.array([layer["b"] for layer in layers]),
        gamma=np.array([layer["gamma"] for layer in layers]),
        samples=np.array([layer["samples"] for layer in layers]).reshape(len(layers), data["M"], data["R"]),
        readout=np.array(data["readout"]),
        basis=basis,
        prox=ProxFn.from_dict(data["prox"]),
        tau=float(data["tau"]),
        noise=NoiseSpec.from_dict(data["noise"]),
    )
    if params.L != data["L"]:
        raise DimensionError(f"document declares L={data['L']} but holds {params.L + 1} layers")
    return params


def geo_to_json(params: GeoParams) -> str:
    return json.dumps(geo_to_dict(params), sort_keys=True, indent=2) + "\n"


def geo_from_json(text: str) -> GeoParams:
    return geo_from_dict(json.loads(text))
