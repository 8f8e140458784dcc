from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DimensionError, ObjectiveError
from .geo import (
    PARAM_FIELDS,
    GeoParams,
    layer_activation,
    layer_gate,
    layer_preactivation,
    sample_points,
)
from .hilbert import CoeffVec
from .prox import kink_distance, kink_signature, pointwise_values_of, prox_vjp
from .splitting import ObjectiveG

logger = logging.getLogger(__name__)

DEFAULT_TRAINABLE = ("A", "B", "b", "gamma", "readout")

LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class TapeNode:
    op: str
    layer: int
    inputs: tuple[int, ...]
    values: dict[str, np.ndarray]


@dataclass
class Tape:
    params: GeoParams
    nodes: list[TapeNode] = field(default_factory=list)
    output: int = -1

    def append(self, node: TapeNode) -> int:
        if any(i >= len(self.nodes) for i in node.inputs):
            raise ValueError("tape inputs must precede their consumer")
        self.nodes.append(node)
        return len(self.nodes) - 1

    def __len__(self) -> int:
        return len(self.nodes)

    def preactivations(self) -> np.ndarray:
        basis = self.params.basis
        return np.stack([pointwise_values_of(basis, n.values["pre"]) for n in self.nodes if n.op == "preact"])


@dataclass(frozen=True)
class GeoGradients:
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    samples: np.ndarray
    readout: np.ndarray
    inputs: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}


def record_batch(params: GeoParams, g: ObjectiveG, X0: np.ndarray) -> tuple[np.ndarray, Tape]:
    if not g.has_gradient:
        raise ObjectiveError("recording needs an objective with an analytic gradient")
    X = np.asarray(X0, dtype=np.float64)
    if X.ndim != 2 or X.shape[-1] != params.R:
        raise DimensionError(f"operator input must be shaped (N, {params.R}), got {X.shape}")
    tape = Tape(params)
    state = tape.append(TapeNode("input", -1, (), {"state": X}))
    for l in range(params.L + 1):
        points = sample_points(X, params.samples[l], g.dim)
        gvals = g.values(points)
        sample = tape.append(TapeNode("sample", l, (state,), {"gvals": gvals, "ggrads": g.gradients(points)}))
        pre = layer_preactivation(params.A[l], params.B[l], params.b[l], X, gvals)
        preact = tape.append(TapeNode("preact", l, (state, sample), {"pre": pre}))
        act = layer_activation(params, pre)
        activation = tape.append(TapeNode("activation", l, (preact,), {"act": act}))
        X_next = layer_gate(params.gamma[l], X, act)
        state = tape.append(TapeNode("gate", l, (state, activation), {"state": X_next}))
        X = X_next
    out = X @ params.readout.T
    tape.output = tape.append(TapeNode("readout", params.L + 1, (state,), {"out": out}))
    return out, tape


def forward_record(params: GeoParams, g: ObjectiveG, noise: CoeffVec) -> tuple[CoeffVec, Tape]:
    if noise.rank != params.R:
        raise DimensionError(f"noise has rank {noise.rank}, operator expects {params.R}")
    out, tape = record_batch(params, g, noise.coeffs[None, :])
    return CoeffVec(out[0], params.basis), tape


def backward(tape: Tape, seed: np.ndarray | CoeffVec) -> GeoGradients:
    params = tape.params
    seed = np.atleast_2d(seed.coeffs if isinstance(seed, CoeffVec) else np.asarray(seed, dtype=np.float64))
    nodes = tape.nodes
    grads = {name: np.zeros_like(value) for name, value in params.arrays().items()}

    readout = nodes[tape.output]
    final = nodes[readout.inputs[0]].values["state"]
    grads["readout"] = seed.T @ final
    bar = seed @ params.readout

    gate_id = readout.inputs[0]
    while nodes[gate_id].op == "gate":
        gate = nodes[gate_id]
        l = gate.layer
        prev_id, act_id = gate.inputs
        X = nodes[prev_id].values["state"]
        act = nodes[act_id].values["act"]
        preact = nodes[nodes[act_id].inputs[0]]
        sample = nodes[preact.inputs[1]]
        gamma = params.gamma[l]

        grads["gamma"][l] = np.sum(bar * (X - act))
        pre_bar = prox_vjp(params.prox, params.tau, preact.values["pre"], (1.0 - gamma) * bar, params.basis)
        gvals = sample.values["gvals"]
        grads["A"][l] = pre_bar.T @ X
        grads["B"][l] = pre_bar.T @ gvals
        grads["b"][l] = pre_bar.sum(axis=0)
        g_bar = pre_bar @ params.B[l]
        routed = g_bar[..., None] * sample.values["ggrads"][..., : params.R]
        grads["samples"][l] = routed.sum(axis=0)
        bar = gamma * bar + pre_bar @ params.A[l] + routed.sum(axis=1)
        gate_id = prev_id
    return GeoGradients(inputs=bar, **grads)


def mse_loss(output: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = np.atleast_2d(output) - np.atleast_2d(target)
    n = diff.shape[0]
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def _perturbed(params: GeoParams, name: str, index: tuple, value: float) -> GeoParams:
    array = getattr(params, name).copy()
    array[index] = value
    return params.with_arrays(**{name: array})


def grad_check(
    params: GeoParams,
    g: ObjectiveG,
    noise: np.ndarray | CoeffVec,
    loss_fn: LossFn,
    h: float = 1e-6,
    floor: float = 1e-3,
    fields: tuple[str, ...] = PARAM_FIELDS,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error of backward against central differences of the loss.

    Coordinates whose perturbation moves a pre-activation across a kink, or moves
    one lying within 10h of a kink, are skipped.
    """
    X0 = np.atleast_2d(noise.coeffs if isinstance(noise, CoeffVec) else noise)
    out, tape = record_batch(params, g, X0)
    _, loss_seed = loss_fn(out)
    analytic = backward(tape, loss_seed).as_dict()
    base = tape.preactivations()
    near = kink_distance(params.prox, params.tau, base) < 10.0 * h
    signature = kink_signature(params.prox, params.tau, base)

    coords = [(name, idx) for name in fields for idx in np.ndindex(getattr(params, name).shape)]
    if max_coords is not None and len(coords) > max_coords:
        picks = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    worst, skipped = 0.0, 0
    for name, idx in coords:
        value = float(getattr(params, name)[idx])
        if name == "gamma" and (value - h < 0.0 or value + h > 1.0):
            skipped += 1
            continue
        losses, pres = [], []
        for shifted in (value + h, value - h):
            out_s, tape_s = record_batch(_perturbed(params, name, idx, shifted), g, X0)
            losses.append(loss_fn(out_s)[0])
            pres.append(tape_s.preactivations())
        moved = (pres[0] != base) | (pres[1] != base)
        crossed = any(np.any(kink_signature(params.prox, params.tau, p) != signature) for p in pres)
        if crossed or np.any(moved & near):
            skipped += 1
            continue
        numeric = (losses[0] - losses[1]) / (2.0 * h)
        exact = float(analytic[name][idx])
        rel = abs(numeric - exact) / max(abs(numeric), abs(exact), floor)
        worst = max(worst, rel)
    logger.debug("grad check: %d coordinates, %d skipped near kinks, worst %.3e", len(coords), skipped, worst)
    return worst


@dataclass(frozen=True)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # unconstrained angle behind the gates, gamma = sin(theta)^2
    theta: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, values: dict[str, np.ndarray], lr: float = 1e-3, **kwargs) -> AdamState:
        m = {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in values.items()}
        v = {k: np.zeros_like(np.asarray(val, dtype=np.float64)) for k, val in values.items()}
        return cls(m, v, lr=lr, **kwargs)

    @classmethod
    def for_params(cls, params: GeoParams, lr: float = 1e-3, trainable: tuple[str, ...] = DEFAULT_TRAINABLE, **kwargs):
        values = {name: getattr(params, name) for name in trainable}
        return cls.zeros_like(values, lr=lr, **kwargs)


def adam_update(values: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    t = state.t + 1
    new_values, m, v = dict(values), {}, {}
    for key, m_prev in state.m.items():
        grad = np.asarray(grads[key], dtype=np.float64)
        if grad.shape != m_prev.shape or np.shape(values[key]) != m_prev.shape:
            raise DimensionError(f"{key}: gradient shape {grad.shape} does not match {m_prev.shape}")
        m[key] = state.beta1 * m_prev + (1.0 - state.beta1) * grad
        v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * grad * grad
        m_hat = m[key] / (1.0 - state.beta1**t)
        v_hat = v[key] / (1.0 - state.beta2**t)
        new_values[key] = values[key] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_values, replace(state, m=m, v=v, t=t)


def adam_step(params: GeoParams, grads: GeoGradients, state: AdamState) -> tuple[GeoParams, AdamState]:
    raw = grads.as_dict()
    values = {name: getattr(params, name) for name in state.m}
    if "gamma" in state.m:
        theta = np.arcsin(np.sqrt(params.gamma)) if state.theta is None else state.theta
        values["gamma"] = theta
        raw = dict(raw, gamma=raw["gamma"] * np.sin(2.0 * theta))
    updated, state = adam_update(values, raw, state)
    if "gamma" in state.m:
        state = replace(state, theta=updated["gamma"])
        updated["gamma"] = np.sin(updated["gamma"]) ** 2
    return params.with_arrays(**updated), state
