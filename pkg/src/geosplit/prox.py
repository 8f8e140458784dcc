from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ProxError
from .hilbert import BasisSpec, CoeffVec, encode_values, lift_values, node_matrix, project, quadrature

# indicator values outside the box within this tolerance still count as feasible
FEASIBILITY_TOL = 1e-9

_GRID_CAP = 4097
_PENALTY = 1e12


class ProxKind(str, Enum):
    ZERO = "zero"
    BOX = "indicator-box"
    L1 = "l1-norm"
    QUADRATIC = "quadratic"
    REACTION = "reaction"


@dataclass(frozen=True)
class ProxFn:
    kind: ProxKind
    lo: float = -math.inf
    hi: float = math.inf
    weight: float = 1.0
    c: float = 1.0
    alternate_form: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ProxKind(self.kind))
        lo = -math.inf if self.lo is None else float(self.lo)
        hi = math.inf if self.hi is None else float(self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if self.kind is ProxKind.BOX and not lo < hi:
            raise ProxError(f"box needs lo < hi, got [{lo}, {hi}]")
        if self.weight <= 0:
            raise ProxError("l1 weight must be positive")
        if self.c <= 0:
            raise ProxError("quadratic coefficient must be positive")

    @classmethod
    def zero(cls) -> ProxFn:
        return cls(ProxKind.ZERO)

    @classmethod
    def box(cls, lo: float = -math.inf, hi: float = math.inf) -> ProxFn:
        return cls(ProxKind.BOX, lo=lo, hi=hi)

    @classmethod
    def l1(cls, weight: float = 1.0) -> ProxFn:
        return cls(ProxKind.L1, weight=weight)

    @classmethod
    def quadratic(cls, c: float = 1.0) -> ProxFn:
        return cls(ProxKind.QUADRATIC, c=c)

    @classmethod
    def reaction(cls, alternate_form: bool = False) -> ProxFn:
        return cls(ProxKind.REACTION, alternate_form=alternate_form)

    @property
    def label(self) -> str:
        if self.kind is ProxKind.BOX:
            return f"indicator-box({self.lo:g},{self.hi:g})"
        if self.kind is ProxKind.L1:
            return f"l1-norm({self.weight:g})"
        if self.kind is ProxKind.QUADRATIC:
            return f"quadratic({self.c:g})"
        if self.kind is ProxKind.REACTION and self.alternate_form:
            return "reaction(alternate)"
        return self.kind.value

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "lo": None if math.isinf(self.lo) else self.lo,
            "hi": None if math.isinf(self.hi) else self.hi,
            "weight": self.weight,
            "c": self.c,
            "alternate_form": self.alternate_form,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ProxFn:
        return cls(
            ProxKind(data["kind"]),
            lo=data.get("lo"),
            hi=data.get("hi"),
            weight=float(data.get("weight", 1.0)),
            c=float(data.get("c", 1.0)),
            alternate_form=bool(data.get("alternate_form", False)),
        )


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ProxError(f"prox scale tau must be positive, got {tau}")


def prox_pointwise(f: ProxFn, tau: float, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if f.kind is ProxKind.ZERO:
        return u.copy()
    if f.kind is ProxKind.BOX:
        return np.clip(u, f.lo, f.hi)
    if f.kind is ProxKind.L1:
        return np.sign(u) * np.maximum(np.abs(u) - tau * f.weight, 0.0)
    if f.kind is ProxKind.QUADRATIC:
        return u / (1.0 + tau * f.c)
    if f.alternate_form:
        return u - 0.25 * np.minimum(u, 0.0)
    return np.where(u >= 0.0, u, u / (1.0 + 0.5 * tau))


def prox_pointwise_derivative(f: ProxFn, tau: float, u: np.ndarray) -> np.ndarray:
    """Derivative of the pointwise prox; kinks follow a fixed one-sided convention."""
    u = np.asarray(u, dtype=np.float64)
    if f.kind is ProxKind.ZERO:
        return np.ones_like(u)
    if f.kind is ProxKind.BOX:
        return ((u >= f.lo) & (u <= f.hi)).astype(np.float64)
    if f.kind is ProxKind.L1:
        return (np.abs(u) > tau * f.weight).astype(np.float64)
    if f.kind is ProxKind.QUADRATIC:
        return np.full_like(u, 1.0 / (1.0 + tau * f.c))
    slope = 0.75 if f.alternate_form else 1.0 / (1.0 + 0.5 * tau)
    return np.where(u >= 0.0, 1.0, slope)


def pointwise_value(f: ProxFn, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if f.kind is ProxKind.ZERO:
        return np.zeros_like(u)
    if f.kind is ProxKind.BOX:
        outside = (u < f.lo - FEASIBILITY_TOL) | (u > f.hi + FEASIBILITY_TOL)
        return np.where(outside, math.inf, 0.0)
    if f.kind is ProxKind.L1:
        return f.weight * np.abs(u)
    if f.kind is ProxKind.QUADRATIC:
        return 0.5 * f.c * u * u
    return np.where(u < 0.0, 0.25 * u * u, 0.0)


def _kinks(f: ProxFn, tau: float) -> list[float]:
    if f.kind is ProxKind.BOX:
        return [k for k in (f.lo, f.hi) if math.isfinite(k)]
    if f.kind is ProxKind.L1:
        return [-tau * f.weight, tau * f.weight]
    if f.kind is ProxKind.REACTION:
        return [0.0]
    return []


def kink_distance(f: ProxFn, tau: float, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    out = np.full(u.shape, math.inf)
    for kink in _kinks(f, tau):
        out = np.minimum(out, np.abs(u - kink))
    return out


def kink_signature(f: ProxFn, tau: float, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros(u.shape, dtype=np.int64)
    for kink in _kinks(f, tau):
        out += (u >= kink).astype(np.int64)
    return out


def _acts_linearly(f: ProxFn) -> bool:
    return f.kind in (ProxKind.ZERO, ProxKind.QUADRATIC)


def pointwise_values_of(basis: BasisSpec, coeffs: np.ndarray) -> np.ndarray:
    if basis.is_hermite:
        return lift_values(basis, coeffs)
    return np.asarray(coeffs, dtype=np.float64)


def apply_prox(f: ProxFn, tau: float, coeffs: np.ndarray, basis: BasisSpec) -> np.ndarray:
    """prox_{tau f} on coefficient arrays shaped (..., r).

    Over the hermite basis pointwise functions act by lift -> pointwise prox ->
    encode on the quadrature nodes, which returns a rank-r coefficient array.
    """
    _check_tau(tau)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if not basis.is_hermite or _acts_linearly(f):
        return prox_pointwise(f, tau, coeffs)
    values = lift_values(basis, coeffs)
    return encode_values(basis, prox_pointwise(f, tau, values), coeffs.shape[-1])


def apply_sigma(f: ProxFn, tau: float, coeffs: np.ndarray, basis: BasisSpec, rank: int) -> np.ndarray:
    out = apply_prox(f, tau, coeffs, basis)
    out[..., rank:] = 0.0
    return out


def prox_vjp(f: ProxFn, tau: float, coeffs: np.ndarray, cotangent: np.ndarray, basis: BasisSpec) -> np.ndarray:
    _check_tau(tau)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if not basis.is_hermite or _acts_linearly(f):
        return cotangent * prox_pointwise_derivative(f, tau, coeffs)
    rank = np.shape(coeffs)[-1]
    _, weights = quadrature(basis)
    table = node_matrix(basis)[:, :rank]
    slope = prox_pointwise_derivative(f, tau, lift_values(basis, coeffs))
    return ((cotangent @ table.T) * slope * weights) @ table


def fn_values(f: ProxFn, coeffs: np.ndarray, basis: BasisSpec) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if not basis.is_hermite:
        return pointwise_value(f, coeffs).sum(axis=-1)
    _, weights = quadrature(basis)
    values = pointwise_value(f, lift_values(basis, coeffs))
    if f.kind is ProxKind.BOX:
        return np.where(np.isinf(values).any(axis=-1), math.inf, 0.0)
    return (values * weights).sum(axis=-1)


def prox_eval(f: ProxFn, tau: float, x: CoeffVec) -> CoeffVec:
    return CoeffVec(apply_prox(f, tau, x.coeffs, x.basis), x.basis)


def sigma_f(f: ProxFn, tau: float, x: CoeffVec, rank: int) -> CoeffVec:
    return project(prox_eval(f, tau, x), rank, keep_rank=True)


def fn_value(f: ProxFn, x: CoeffVec) -> float:
    return float(fn_values(f, x.coeffs, x.basis))


def _slope_bound(f: ProxFn, tau: float) -> float:
    if f.kind is ProxKind.L1:
        return tau * f.weight
    if f.kind is ProxKind.BOX:
        return max((abs(k) for k in (f.lo, f.hi) if math.isfinite(k)), default=0.0)
    return 0.0


def _search_objective(f: ProxFn, tau: float, s: np.ndarray, u: np.ndarray) -> np.ndarray:
    if f.kind is ProxKind.BOX:
        gap = np.maximum(f.lo - s, 0.0) + np.maximum(s - f.hi, 0.0)
        penalty = np.where(gap > 0.0, _PENALTY * (1.0 + gap), 0.0)
    else:
        penalty = tau * pointwise_value(f, s)
    return penalty + 0.5 * (s - u) ** 2


def scalar_prox_search(f: ProxFn, tau: float, u: np.ndarray, resolution: float) -> np.ndarray:
    """Minimise tau*f(s) + (s-u)^2/2 independently for every entry of ``u``.

    A grid scan over [u - B, u + B] brackets the minimiser to one cell, then
    ternary refinement shrinks the bracket below the resolution.
    """
    _check_tau(tau)
    if not resolution > 0:
        raise ProxError("resolution must be positive")
    flat = np.asarray(u, dtype=np.float64).ravel()
    bound = 1.0 + np.abs(flat) + _slope_bound(f, tau)
    points = int(min(math.ceil(2.0 * float(bound.max()) / resolution), _GRID_CAP - 1)) + 1
    ticks = np.linspace(0.0, 1.0, points)
    grid = (flat - bound)[:, None] + (2.0 * bound)[:, None] * ticks[None, :]
    best = np.argmin(_search_objective(f, tau, grid, flat[:, None]), axis=1)
    cell = 2.0 * bound / (points - 1)
    centre = grid[np.arange(flat.size), best]
    lo, hi = centre - cell, centre + cell
    while float(np.max(hi - lo)) > resolution / 8.0:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        left = _search_objective(f, tau, m1, flat) <= _search_objective(f, tau, m2, flat)
        hi = np.where(left, m2, hi)
        lo = np.where(left, lo, m1)
    return (0.5 * (lo + hi)).reshape(np.shape(u))


def prox_bruteforce(f: ProxFn, tau: float, x: CoeffVec, resolution: float) -> CoeffVec:
    basis = x.basis
    if not basis.is_hermite:
        return CoeffVec(scalar_prox_search(f, tau, x.coeffs, resolution), basis)
    values = lift_values(basis, x.coeffs)
    solved = scalar_prox_search(f, tau, values, resolution)
    return CoeffVec(encode_values(basis, solved, x.rank), basis)
