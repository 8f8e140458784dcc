from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import FdCheckConfig, GeoEquivConfig, ProblemSpec, ProxCheckConfig
from .geo import NoiseKind, NoiseSpec, build_theoretical_geo, geo_forward, sample_noise
from .hilbert import BasisSpec, CoeffVec, derivative_matrix
from .models import GeoEquivResult, GeoEquivRow, ProxCheckRow
from .prox import ProxFn, ProxKind, apply_prox, scalar_prox_search
from .splitting import (
    FdSweepRow,
    ObjectiveG,
    Scheme,
    SplitSchedule,
    Trajectory,
    box_qp_argmin,
    constant_schedule,
    decay_schedule,
    dirichlet_energy,
    ellipsoidal_objective,
    fd_error_sweep,
    logcosh_objective,
    logsumexp_objective,
    long_horizon_optimum,
    quadratic_objective,
    run_scheme,
    step_coupled_schedule,
)
from .util import substream

logger = logging.getLogger(__name__)

PROX_CATALOG = (
    ProxFn.zero(),
    ProxFn.box(0.0, math.inf),
    ProxFn.box(-1.0, 1.0),
    ProxFn.l1(1.0),
    ProxFn.quadratic(1.0),
    ProxFn.reaction(),
)

SLACK = 1e-12


def prox_check(config: ProxCheckConfig) -> list[ProxCheckRow]:
    rng = substream(config.seed, "check")
    basis = BasisSpec.standard(config.dim)
    rows: list[ProxCheckRow] = []
    for f in PROX_CATALOG:
        for tau in config.taus:
            X = rng.normal(0.0, config.scale, (config.samples, config.dim))
            Y = rng.normal(0.0, config.scale, (config.samples, config.dim))
            closed = apply_prox(f, tau, X, basis)
            brute = scalar_prox_search(f, tau, X, config.resolution)
            error = float(np.max(np.abs(closed - brute)))
            dp = closed - apply_prox(f, tau, Y, basis)
            dx = X - Y
            firm = bool(np.all(np.sum(dp * dp, axis=-1) <= np.sum(dp * dx, axis=-1) + SLACK))
            lipschitz = bool(np.all(np.linalg.norm(dp, axis=-1) <= np.linalg.norm(dx, axis=-1) + SLACK))
            passed = error <= config.tolerance and firm and lipschitz
            rows.append(ProxCheckRow(f.label, float(tau), error, firm, lipschitz, passed))
            logger.debug("prox %s tau=%g: max error %.2e", f.label, tau, error)
    return rows


@dataclass
class FdCheckResult:
    rows: list[FdSweepRow]
    slopes: dict[int, float]
    slope_lo: float
    slope_hi: float

    @property
    def passed(self) -> bool:
        slopes_ok = all(self.slope_lo <= s <= self.slope_hi for s in self.slopes.values())
        return slopes_ok and all(row.error <= row.bound for row in self.rows)


def fd_check(config: FdCheckConfig) -> FdCheckResult:
    g = ellipsoidal_objective(config.dim, config.rate, seed=config.seed)
    rows, slopes = fd_error_sweep(g, config.deltas, config.ranks, points=config.points, seed=config.seed)
    return FdCheckResult(rows, slopes, config.slope_lo, config.slope_hi)


def _random_prox(kind: int, rng: np.random.Generator) -> ProxFn:
    if kind == 0:
        return ProxFn.box(-rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0))
    if kind == 1:
        return ProxFn.l1(rng.uniform(0.1, 1.0))
    if kind == 2:
        return ProxFn.quadratic(rng.uniform(0.5, 2.0))
    if kind == 3:
        return ProxFn.reaction()
    return ProxFn.zero()


def geo_equivalence(config: GeoEquivConfig) -> GeoEquivResult:
    rng = substream(config.seed, "check")
    R = config.R
    result = GeoEquivResult(tolerance=config.tolerance)
    for i in range(config.instances):
        f = _random_prox(i % 5, rng)
        if config.basis == "hermite":
            basis, dim = BasisSpec.hermite(R), R
        else:
            dim = R + 2
            basis = BasisSpec.standard(dim)
        G = rng.standard_normal((dim, dim))
        g = quadratic_objective(G.T @ G / dim + 0.1 * np.eye(dim), rng.standard_normal(dim))
        schedule = decay_schedule(config.L, config.C, g.lipschitz, R)
        noise_spec = NoiseSpec(NoiseKind.GAUSSIAN, 1.0, int(rng.integers(0, 2**32)))
        params = build_theoretical_geo(f, schedule, basis, 1.0, noise_spec)
        noise = sample_noise(noise_spec, basis, R)
        out = geo_forward(params, g, noise)
        final = run_scheme(noise.padded(dim), schedule, f, g, Scheme.PROJECTED).final.coeffs
        deviation = max(float(np.max(np.abs(out.coeffs - final[:R]))), float(np.max(np.abs(final[R:]), initial=0.0)))
        result.rows.append(GeoEquivRow(i, f.label, config.L, R, deviation))
    logger.info("geo-equiv: max deviation %.3e over %d instances", result.max_dev, config.instances)
    return result


@dataclass
class SolveResult:
    trajectory: Trajectory
    optimum: float
    schedule: SplitSchedule

    @property
    def final_gap(self) -> float:
        return float(self.trajectory.losses[-1] - self.optimum)


def problem_basis(spec: ProblemSpec) -> BasisSpec:
    if spec.basis == "hermite":
        return BasisSpec.hermite(spec.dim)
    return BasisSpec.standard(spec.dim)


def problem_objective(spec: ProblemSpec, basis: BasisSpec) -> ObjectiveG:
    o = spec.objective
    if o.kind == "quadratic":
        return quadratic_objective(np.array(o.A), np.array(o.b), o.c)
    if o.kind == "logsumexp":
        return logsumexp_objective(np.array(o.b), o.c)
    if o.kind == "dirichlet":
        return dirichlet_energy(o.nu, derivative_matrix(basis, spec.dim + 1)[:, : spec.dim])
    return logcosh_objective(np.array(o.weights), np.array(o.centers))


def problem_schedule(spec: ProblemSpec, g: ObjectiveG) -> SplitSchedule:
    s = spec.schedule
    R = spec.dim if s.R is None else s.R
    if s.kind == "decay":
        return decay_schedule(s.L, s.C, g.lipschitz, R)
    if s.kind == "step-coupled":
        return step_coupled_schedule(s.L, g.lipschitz, R)
    return constant_schedule(s.L, g.lipschitz, R, alpha=s.alpha, step=s.step, delta=s.delta)


def reference_optimum(spec: ProblemSpec, f: ProxFn, g: ObjectiveG, basis: BasisSpec, x0: CoeffVec) -> float:
    o = spec.objective
    if o.kind == "quadratic" and f.kind is ProxKind.BOX and not basis.is_hermite and spec.dim <= 10:
        argmin = box_qp_argmin(np.array(o.A), np.array(o.b), f.lo, f.hi)
        return float(g.values(argmin[None, None, :])[0, 0])
    _, values = long_horizon_optimum(f, g, x0.coeffs[None, :], basis, L=20000, tau=spec.tau)
    return float(values[0])


def solve_problem(spec: ProblemSpec) -> SolveResult:
    basis = problem_basis(spec)
    f = spec.prox.build()
    g = problem_objective(spec, basis)
    x0 = CoeffVec(np.zeros(spec.dim) if spec.x0 is None else np.array(spec.x0), basis)
    schedule = problem_schedule(spec, g)
    trajectory = run_scheme(x0, schedule, f, g, spec.scheme, spec.tau)
    optimum = spec.optimum if spec.optimum is not None else reference_optimum(spec, f, g, basis, x0)
    return SolveResult(trajectory, optimum, schedule)
