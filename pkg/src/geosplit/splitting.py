"""Forward-backward splitting: exact, divided-difference and projected iterations."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError, ObjectiveError, RankError, ScheduleError
from .hilbert import BasisSpec, CoeffVec
from .prox import ProxFn, apply_prox, apply_sigma, fn_values

logger = logging.getLogger(__name__)

# affine objectives have no curvature; keep 1/lambda finite
MIN_LIPSCHITZ = 1e-12
DIVERGENCE_NORM = 1e8

Evaluator = Callable[[np.ndarray, dict], np.ndarray]


@dataclass(frozen=True, eq=False)
class ObjectiveG:
    """A smooth objective, possibly a batch of N instances sharing one form.

    ``evaluator(points, params)`` maps points shaped (N, K, n) to values (N, K);
    ``gradient`` (same signature) returns (N, K, n). Batched parameters carry the
    instance index on axis 0; a batch of one broadcasts against any N.
    """

    evaluator: Evaluator
    lipschitz: float
    dim: int
    gradient: Evaluator | None = None
    params: dict = field(default_factory=dict)
    kind: str = "custom"
    verify: bool = True

    def __post_init__(self) -> None:
        if self.lipschitz < 0 or not math.isfinite(self.lipschitz):
            raise ObjectiveError(f"gradient Lipschitz bound must be finite and non-negative, got {self.lipschitz}")
        if self.lipschitz < MIN_LIPSCHITZ:
            object.__setattr__(self, "lipschitz", MIN_LIPSCHITZ)
        if self.gradient is not None and self.verify:
            error = gradient_consistency(self)
            if not error < 1e-4:
                raise ObjectiveError(f"analytic gradient disagrees with finite differences (rel. error {error:.2e})")

    @property
    def has_gradient(self) -> bool:
        return self.gradient is not None

    @property
    def batch_size(self) -> int:
        for value in self.params.values():
            return int(np.shape(value)[0])
        return 1

    def _points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 3 or points.shape[-1] != self.dim:
            raise DimensionError(f"objective expects points shaped (N, K, {self.dim}), got {points.shape}")
        return points

    def values(self, points: np.ndarray) -> np.ndarray:
        return self.evaluator(self._points(points), self.params)

    def gradients(self, points: np.ndarray) -> np.ndarray:
        if self.gradient is None:
            raise ObjectiveError("objective has no analytic gradient")
        return self.gradient(self._points(points), self.params)

    def subset(self, index: np.ndarray | Sequence[int]) -> ObjectiveG:
        if not self.params:
            return self
        index = np.asarray(index)
        return replace(self, params={k: v[index] for k, v in self.params.items()}, verify=False)

    def __call__(self, x: CoeffVec) -> float:
        return float(self.values(_as_points(x.coeffs, self.dim))[0, 0])

    def grad(self, x: CoeffVec) -> CoeffVec:
        return CoeffVec(self.gradients(_as_points(x.coeffs, self.dim))[0, 0], x.basis)


def _as_points(coeffs: np.ndarray, dim: int) -> np.ndarray:
    if coeffs.shape[-1] != dim:
        raise DimensionError(f"objective is defined on {dim} coefficients, got {coeffs.shape[-1]}")
    return np.asarray(coeffs, dtype=np.float64)[None, None, :]


def gradient_consistency(g: ObjectiveG, count: int = 5, h: float = 1e-6) -> float:
    rng = np.random.default_rng(0)
    points = rng.standard_normal((g.batch_size, count, g.dim))
    analytic = g.gradients(points)
    numeric = np.empty_like(analytic)
    for i in range(g.dim):
        step = np.zeros(g.dim)
        step[i] = h
        numeric[..., i] = (g.values(points + step) - g.values(points - step)) / (2.0 * h)
    scale = np.maximum(np.linalg.norm(analytic, axis=-1), 1.0)
    return float(np.max(np.linalg.norm(numeric - analytic, axis=-1) / scale))


def _batched(array: np.ndarray, ndim: int) -> np.ndarray:
    array = np.asarray(array, dtype=np.float64)
    return array[None] if array.ndim == ndim else array


def _quadratic_value(x: np.ndarray, p: dict) -> np.ndarray:
    ax = np.matmul(x, np.swapaxes(p["A"], -1, -2))
    return 0.5 * np.sum(x * ax, axis=-1) + np.sum(x * p["b"][:, None, :], axis=-1) + p["c"][:, None]


def _quadratic_grad(x: np.ndarray, p: dict) -> np.ndarray:
    return np.matmul(x, np.swapaxes(p["A"], -1, -2)) + p["b"][:, None, :]


def quadratic_objective(A: np.ndarray, b: np.ndarray, c: np.ndarray | float = 0.0, verify: bool = True) -> ObjectiveG:
    A = _batched(A, 2)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    b = _batched(b, 1)
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (A.shape[0],)).copy()
    eigs = np.linalg.eigvalsh(A)
    if np.min(eigs) < -1e-10:
        raise ObjectiveError("quadratic objective needs a positive semidefinite matrix")
    return ObjectiveG(
        _quadratic_value,
        float(np.max(eigs)),
        A.shape[-1],
        gradient=_quadratic_grad,
        params={"A": A, "b": b, "c": c},
        kind="quadratic",
        verify=verify,
    )


def _lse_terms(x: np.ndarray, p: dict) -> np.ndarray:
    terms = x * p["b"][:, None, :]
    with np.errstate(divide="ignore"):
        logc = np.broadcast_to(np.log(p["c"])[:, None, None], terms.shape[:-1] + (1,))
    return np.concatenate([terms, logc], axis=-1)


def _lse_value(x: np.ndarray, p: dict) -> np.ndarray:
    return logsumexp(_lse_terms(x, p), axis=-1)


def _lse_grad(x: np.ndarray, p: dict) -> np.ndarray:
    terms = _lse_terms(x, p)
    weights = np.exp(terms - logsumexp(terms, axis=-1, keepdims=True))
    return weights[..., :-1] * p["b"][:, None, :]


def logsumexp_objective(b: np.ndarray, c: np.ndarray | float = 0.0, verify: bool = True) -> ObjectiveG:
    b = _batched(b, 1)
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (b.shape[0],)).copy()
    if np.any(c < 0):
        raise ObjectiveError("log-sum-exp offset c must be non-negative")
    return ObjectiveG(
        _lse_value,
        float(np.max(b * b)),
        b.shape[-1],
        gradient=_lse_grad,
        params={"b": b, "c": c},
        kind="logsumexp",
        verify=verify,
    )


def _dirichlet_value(x: np.ndarray, p: dict) -> np.ndarray:
    dx = np.matmul(x, p["D"].T)
    return 0.5 * p["nu"][:, None] * np.sum(dx * dx, axis=-1)


def _dirichlet_grad(x: np.ndarray, p: dict) -> np.ndarray:
    return p["nu"][:, None, None] * np.matmul(np.matmul(x, p["D"].T), p["D"])


def dirichlet_energy(nu: np.ndarray | float, D: np.ndarray, verify: bool = True) -> ObjectiveG:
    nu = np.atleast_1d(np.asarray(nu, dtype=np.float64))
    D = np.asarray(D, dtype=np.float64)
    if np.any(nu <= 0):
        raise ObjectiveError("diffusion coefficient must be positive")
    curvature = float(np.linalg.norm(D.T @ D, 2))

    def value(x: np.ndarray, p: dict) -> np.ndarray:
        return _dirichlet_value(x, {"nu": p["nu"], "D": D})

    def grad(x: np.ndarray, p: dict) -> np.ndarray:
        return _dirichlet_grad(x, {"nu": p["nu"], "D": D})

    return ObjectiveG(
        value, float(np.max(nu)) * curvature, D.shape[1], gradient=grad, params={"nu": nu}, kind="dirichlet", verify=verify
    )


def _logcosh(t: np.ndarray) -> np.ndarray:
    return np.logaddexp(t, -t) - math.log(2.0)


def logcosh_objective(weights: np.ndarray, centers: np.ndarray, verify: bool = True) -> ObjectiveG:
    w = _batched(weights, 1)
    c = _batched(centers, 1)

    def value(x: np.ndarray, p: dict) -> np.ndarray:
        return np.sum(p["w"][:, None, :] * _logcosh(x - p["c"][:, None, :]), axis=-1)

    def grad(x: np.ndarray, p: dict) -> np.ndarray:
        return p["w"][:, None, :] * np.tanh(x - p["c"][:, None, :])

    return ObjectiveG(
        value, float(np.max(w)), w.shape[-1], gradient=grad, params={"w": w, "c": c}, kind="logcosh", verify=verify
    )


def ellipsoidal_objective(dim: int, rate: float, seed: int = 0) -> ObjectiveG:
    centers = np.random.default_rng(seed).uniform(-1.0, 1.0, dim)
    return logcosh_objective(np.exp(-rate * np.arange(dim)), centers)


def scalar_objective(
    fn: Callable[[np.ndarray], float],
    dim: int,
    lipschitz: float,
    gradient: Callable[[np.ndarray], np.ndarray] | None = None,
) -> ObjectiveG:
    def value(x: np.ndarray, _: dict) -> np.ndarray:
        return np.apply_along_axis(lambda v: float(fn(v)), -1, x)

    grad = None
    if gradient is not None:

        def grad(x: np.ndarray, _: dict) -> np.ndarray:
            return np.apply_along_axis(lambda v: np.asarray(gradient(v), dtype=np.float64), -1, x)

    return ObjectiveG(value, lipschitz, dim, gradient=grad)


class Scheme(str, Enum):
    EXACT = "exact"
    APPROX = "approx"
    PROJECTED = "projected"


@dataclass(frozen=True)
class SplitSchedule:
    L: int
    alphas: tuple[float, ...]
    lambdas: tuple[float, ...]
    delta: float
    R: int
    lipschitz: float
    kind: str = "custom"
    decay_constant: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "lambdas", tuple(float(a) for a in self.lambdas))
        object.__setattr__(self, "lipschitz", max(float(self.lipschitz), MIN_LIPSCHITZ))
        if self.L < 0:
            raise ScheduleError("horizon L must be non-negative")
        if len(self.alphas) != self.L + 1 or len(self.lambdas) != self.L + 1:
            raise ScheduleError(f"schedule of horizon {self.L} needs {self.L + 1} alphas and lambdas")
        if not self.delta > 0:
            raise ScheduleError("divided-difference step delta must be positive")
        if self.R < 1:
            raise ScheduleError("rank R must be positive")
        for l, (alpha, lam) in enumerate(zip(self.alphas, self.lambdas)):
            check_step(alpha, lam, self.lipschitz, index=l)
        if self.decay_constant is not None and not self.decay_compliant():
            raise ScheduleError(f"alphas violate the decay condition for C={self.decay_constant}")

    def decay_bound(self, l: int, constant: float | None = None) -> float:
        constant = self.decay_constant if constant is None else constant
        base = max(1.0 if constant is None else constant, 1.0)
        return 2.0 ** (-l - self.L) * base ** (-max(self.L - l - 1, 0))

    def decay_compliant(self, constant: float | None = None) -> bool:
        return all(a <= self.decay_bound(l, constant) * (1.0 + 1e-12) for l, a in enumerate(self.alphas))


def check_step(alpha: float, lam: float, lipschitz: float, index: int | None = None) -> None:
    where = "" if index is None else f" at l={index}"
    if not 0.0 < alpha <= 1.0:
        raise ScheduleError(f"alpha must lie in (0, 1]{where}, got {alpha}")
    if not 0.0 < lam < 1.0 / lipschitz:
        raise ScheduleError(f"step lambda must lie in (0, 1/{lipschitz:g}){where}, got {lam}")
    if alpha * lam * lipschitz > 1.0:
        raise ScheduleError(f"alpha * lambda * Lipschitz exceeds 1{where}")


def _fd_step(L: int, R: int) -> float:
    return 2.0 ** (-L) / R


def decay_schedule(L: int, C: float, lipschitz: float, R: int) -> SplitSchedule:
    """Largest gates allowed by alpha_l <= 2^{-l-L} max(C,1)^{-(L-l-1)+}."""
    if L < 1:
        raise ScheduleError("decay schedule needs L >= 1")
    lipschitz = max(lipschitz, MIN_LIPSCHITZ)
    base = max(C, 1.0)
    alphas = [2.0 ** (-l - L) * base ** (-max(L - l - 1, 0)) for l in range(L + 1)]
    step = 1.0 / (2.0 * lipschitz)
    logger.debug("decay schedule L=%d C=%g step=%g", L, C, step)
    return SplitSchedule(L, tuple(alphas), (step,) * (L + 1), _fd_step(L, R), R, lipschitz, "decay", float(C))


def step_coupled_schedule(L: int, lipschitz: float, R: int) -> SplitSchedule:
    """alpha_l = min(1, lambda_l 2^{2l-L}), the gate constraint of the divided-difference estimate."""
    if L < 1:
        raise ScheduleError("step-coupled schedule needs L >= 1")
    lipschitz = max(lipschitz, MIN_LIPSCHITZ)
    step = 1.0 / (2.0 * lipschitz)
    alphas = [min(1.0, step * 2.0 ** (2 * l - L)) for l in range(L + 1)]
    return SplitSchedule(L, tuple(alphas), (step,) * (L + 1), _fd_step(L, R), R, lipschitz, "step-coupled")


def constant_schedule(
    L: int,
    lipschitz: float,
    R: int,
    alpha: float = 1.0,
    step: float | None = None,
    delta: float = 1e-6,
) -> SplitSchedule:
    lipschitz = max(lipschitz, MIN_LIPSCHITZ)
    step = 0.9 / lipschitz if step is None else step
    return SplitSchedule(L, (alpha,) * (L + 1), (step,) * (L + 1), delta, R, lipschitz, "constant")


def fd_grad_array(g: ObjectiveG, X: np.ndarray, delta: float, R: int) -> np.ndarray:
    if not delta > 0:
        raise ScheduleError(f"divided-difference step must be positive, got {delta}")
    n = X.shape[-1]
    if not 1 <= R <= n:
        raise RankError(f"rank {R} outside [1, {n}]")
    points = np.repeat(X[:, None, :], R + 1, axis=1)
    idx = np.arange(R)
    points[:, idx, idx] += delta
    vals = g.values(points)
    out = np.zeros_like(X)
    out[:, :R] = (vals[:, :R] - vals[:, R:]) / delta
    return out


def _require_gradient(g: ObjectiveG) -> None:
    if not g.has_gradient:
        raise ObjectiveError("the exact scheme needs an analytic gradient")


def exact_update(X: np.ndarray, f: ProxFn, g: ObjectiveG, alpha: float, lam: float, basis: BasisSpec, tau: float = 1.0):
    grad = g.gradients(X[:, None, :])[:, 0, :]
    return (1.0 - alpha) * X + alpha * apply_prox(f, tau, X - lam * grad, basis)


def approx_update(X, f, g, alpha, lam, delta, R, basis, tau=1.0):
    grad = fd_grad_array(g, X, delta, R)
    return (1.0 - alpha) * X + alpha * apply_prox(f, tau, X - lam * grad, basis)


def projected_update(X, f, g, alpha, lam, delta, R, basis, tau=1.0):
    grad = fd_grad_array(g, X, delta, R)
    return (1.0 - alpha) * X + alpha * apply_sigma(f, tau, X - lam * grad, basis, R)


def fd_grad(g: ObjectiveG, x: CoeffVec, delta: float, R: int) -> CoeffVec:
    if R > x.basis.max_rank:
        raise RankError(f"rank {R} exceeds max_rank {x.basis.max_rank}")
    _as_points(x.coeffs, g.dim)
    return CoeffVec(fd_grad_array(g, x.coeffs[None, :], delta, R)[0], x.basis)


def fb_step(x: CoeffVec, f: ProxFn, g: ObjectiveG, alpha: float, lam: float, tau: float = 1.0) -> CoeffVec:
    _require_gradient(g)
    check_step(alpha, lam, g.lipschitz)
    return CoeffVec(exact_update(x.coeffs[None, :], f, g, alpha, lam, x.basis, tau)[0], x.basis)


def approx_fb_step(x, f, g, alpha, lam, delta, R, tau: float = 1.0) -> CoeffVec:
    check_step(alpha, lam, g.lipschitz)
    return CoeffVec(approx_update(x.coeffs[None, :], f, g, alpha, lam, delta, R, x.basis, tau)[0], x.basis)


def projected_fb_step(z, f, g, alpha, lam, delta, R, tau: float = 1.0) -> CoeffVec:
    check_step(alpha, lam, g.lipschitz)
    return CoeffVec(projected_update(z.coeffs[None, :], f, g, alpha, lam, delta, R, z.basis, tau)[0], z.basis)


@dataclass(frozen=True)
class Trajectory:
    iterates: tuple[CoeffVec, ...]
    losses: tuple[float, ...]
    scheme: Scheme
    diverged: bool = False

    def __post_init__(self) -> None:
        if len(self.iterates) != len(self.losses):
            raise DimensionError("trajectory needs one loss per iterate")

    @property
    def final(self) -> CoeffVec:
        return self.iterates[-1]

    def gaps(self, optimum: float) -> np.ndarray:
        return np.asarray(self.losses) - optimum


def objective_losses(f: ProxFn, g: ObjectiveG, X: np.ndarray, basis: BasisSpec) -> np.ndarray:
    return fn_values(f, X, basis) + g.values(X[:, None, :])[:, 0]


def _advance(scheme: Scheme, X, f, g, schedule: SplitSchedule, l: int, basis, tau):
    alpha, lam = schedule.alphas[l], schedule.lambdas[l]
    if scheme is Scheme.EXACT:
        return exact_update(X, f, g, alpha, lam, basis, tau)
    if scheme is Scheme.APPROX:
        return approx_update(X, f, g, alpha, lam, schedule.delta, schedule.R, basis, tau)
    return projected_update(X, f, g, alpha, lam, schedule.delta, schedule.R, basis, tau)


def _check_run(schedule: SplitSchedule, g: ObjectiveG, rank: int) -> None:
    if schedule.R > rank:
        raise ScheduleError(f"schedule rank {schedule.R} exceeds iterate rank {rank}")
    for l, (alpha, lam) in enumerate(zip(schedule.alphas, schedule.lambdas)):
        check_step(alpha, lam, g.lipschitz, index=l)


def run_scheme(
    x0: CoeffVec,
    schedule: SplitSchedule,
    f: ProxFn,
    g: ObjectiveG,
    scheme: Scheme | str,
    tau: float = 1.0,
) -> Trajectory:
    scheme = Scheme(scheme)
    if scheme is Scheme.EXACT:
        _require_gradient(g)
    _check_run(schedule, g, x0.rank)
    basis = x0.basis
    X = np.array(x0.coeffs)[None, :]
    if scheme is Scheme.PROJECTED:
        X[:, schedule.R :] = 0.0
    iterates = [CoeffVec(X[0], basis)]
    losses = [float(objective_losses(f, g, X, basis)[0])]
    diverged = False
    for l in range(schedule.L):
        X = _advance(scheme, X, f, g, schedule, l, basis, tau)
        if not np.all(np.isfinite(X)) or float(np.linalg.norm(X)) > DIVERGENCE_NORM:
            logger.warning("%s scheme diverged at iteration %d", scheme.value, l + 1)
            diverged = True
            break
        iterates.append(CoeffVec(X[0], basis))
        losses.append(float(objective_losses(f, g, X, basis)[0]))
    return Trajectory(tuple(iterates), tuple(losses), scheme, diverged)


def run_batch(
    X0: np.ndarray,
    schedule: SplitSchedule,
    f: ProxFn,
    g: ObjectiveG,
    scheme: Scheme | str,
    basis: BasisSpec,
    tau: float = 1.0,
) -> np.ndarray:
    scheme = Scheme(scheme)
    _check_run(schedule, g, X0.shape[-1])
    X = np.array(X0, dtype=np.float64)
    if scheme is Scheme.PROJECTED:
        X[:, schedule.R :] = 0.0
    for l in range(schedule.L):
        X = _advance(scheme, X, f, g, schedule, l, basis, tau)
    return X


def long_horizon_optimum(
    f: ProxFn,
    g: ObjectiveG,
    X0: np.ndarray,
    basis: BasisSpec,
    L: int = 5000,
    tau: float = 1.0,
    lipschitz: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Reference minimisers and optimal values from a long exact FB run.

    With per-instance ``lipschitz`` bounds each row steps at 0.9 / L_i instead of
    the batch-wide bound.
    """
    _require_gradient(g)
    if lipschitz is None:
        schedule = constant_schedule(L, g.lipschitz, X0.shape[-1])
        X = run_batch(X0, schedule, f, g, Scheme.EXACT, basis, tau)
    else:
        steps = 0.9 / np.maximum(np.asarray(lipschitz, dtype=np.float64), MIN_LIPSCHITZ)
        X = np.array(X0, dtype=np.float64)
        for _ in range(L):
            X = exact_update(X, f, g, 1.0, steps[:, None], basis, tau)
    return X, objective_losses(f, g, X, basis)


def box_qp_argmin(A: np.ndarray, b: np.ndarray, lo: float | np.ndarray, hi: float | np.ndarray) -> np.ndarray:
    """Exact minimiser of x^T A x / 2 + b^T x over a box, by active-set enumeration.

    Each coordinate is fixed at its lower bound, its upper bound or left free;
    the KKT point whose free block is feasible and whose bound multipliers
    carry the right sign is the minimiser.
    """
    A = 0.5 * (np.asarray(A, dtype=np.float64) + np.asarray(A, dtype=np.float64).T)
    b = np.asarray(b, dtype=np.float64)
    d = b.size
    if d > 10:
        raise ValueError("active-set enumeration is limited to d <= 10")
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (d,))
    scale = 1e-9 * (1.0 + np.abs(A).max() + np.abs(b).max())
    best, best_value = None, math.inf
    for pattern in itertools.product((-1, 0, 1), repeat=d):
        state = np.asarray(pattern)
        if np.any((state == -1) & ~np.isfinite(lo)) or np.any((state == 1) & ~np.isfinite(hi)):
            continue
        x = np.where(state == -1, lo, np.where(state == 1, hi, 0.0))
        free = state == 0
        if free.any():
            fixed = ~free
            rhs = -(b[free] + A[np.ix_(free, fixed)] @ x[fixed])
            try:
                x[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                continue
            if np.any(x[free] < lo[free] - scale) or np.any(x[free] > hi[free] + scale):
                continue
        grad = A @ x + b
        if np.any(grad[state == -1] < -scale) or np.any(grad[state == 1] > scale):
            continue
        value = 0.5 * x @ A @ x + b @ x
        if value < best_value:
            best, best_value = np.clip(x, lo, hi), value
    if best is None:
        raise ObjectiveError("no KKT point found; is the quadratic strictly convex?")
    return best


@dataclass(frozen=True)
class DeviationReport:
    exact_vs_approx: float
    approx_vs_projected: float
    sup_exact_vs_approx: float
    sup_approx_vs_projected: float
    schedule_kind: str
    L: int


def deviation_report(x0: CoeffVec, schedule: SplitSchedule, f: ProxFn, g: ObjectiveG, tau: float = 1.0) -> DeviationReport:
    exact = run_scheme(x0, schedule, f, g, Scheme.EXACT, tau)
    approx = run_scheme(x0, schedule, f, g, Scheme.APPROX, tau)
    projected = run_scheme(x0, schedule, f, g, Scheme.PROJECTED, tau)

    def gaps(a: Trajectory, b: Trajectory) -> list[float]:
        return [(u - v).norm() for u, v in zip(a.iterates, b.iterates)]

    ea = gaps(exact, approx)
    ap = gaps(approx, projected)
    return DeviationReport(
        exact_vs_approx=ea[-1],
        approx_vs_projected=ap[-1],
        sup_exact_vs_approx=max(ea),
        sup_approx_vs_projected=max(ap),
        schedule_kind=schedule.kind,
        L=schedule.L,
    )


@dataclass(frozen=True)
class FdSweepRow:
    delta: float
    R: int
    in_rank_error: float
    tail: float
    error: float
    bound: float


def fd_error_sweep(
    g: ObjectiveG,
    deltas: Sequence[float],
    ranks: Sequence[int],
    points: int = 50,
    seed: int = 0,
) -> tuple[list[FdSweepRow], dict[int, float]]:
    """Divided-difference error against the analytic gradient over (delta, R).

    Returns the rows and, per R, the log-log slope of the in-rank error in delta.
    The bound column is 2 (R delta lambda + tail(R)).
    """
    _require_gradient(g)
    X = np.random.default_rng(seed).standard_normal((points, g.dim))
    exact = g.gradients(X[None, :, :])[0]
    rows: list[FdSweepRow] = []
    slopes: dict[int, float] = {}
    for R in ranks:
        tail = float(np.max(np.linalg.norm(exact[:, R:], axis=-1))) if R < g.dim else 0.0
        in_rank = []
        for delta in deltas:
            approx = fd_grad_array(g, X, delta, R)
            inside = float(np.max(np.linalg.norm(approx[:, :R] - exact[:, :R], axis=-1)))
            total = float(np.max(np.linalg.norm(approx - exact, axis=-1)))
            bound = 2.0 * (R * delta * g.lipschitz + tail)
            rows.append(FdSweepRow(float(delta), int(R), inside, tail, total, bound))
            in_rank.append(inside)
        slopes[int(R)] = float(np.polyfit(np.log(deltas), np.log(in_rank), 1)[0])
    return rows, slopes


def fit_loss_gap_model(Ls: Sequence[int], gaps: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares fit gap ~ c1/L + c2 2^{1-L}; returns (c1, c2, R^2)."""
    Ls = np.asarray(Ls, dtype=np.float64)
    gaps = np.asarray(gaps, dtype=np.float64)
    design = np.column_stack([1.0 / Ls, 2.0 ** (1.0 - Ls)])
    coef, *_ = np.linalg.lstsq(design, gaps, rcond=None)
    resid = gaps - design @ coef
    total = float(np.sum((gaps - gaps.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / total if total > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2
