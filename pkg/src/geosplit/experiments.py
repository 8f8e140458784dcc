from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .autodiff import DEFAULT_TRAINABLE, AdamState, adam_step, backward, mse_loss, record_batch
from .config import ExperimentConfig, Family
from .errors import PdeSolverError, TrainingDivergedError
from .geo import GeoParams, NoiseSpec, build_theoretical_geo, geo_forward_batch, init_geo, sample_noise_batch
from .hilbert import DOMAIN, BasisSpec, CoeffVec, GridFn, derivative_matrix, encode, quadrature, uniform_grid
from .models import MetricsRow
from .prox import ProxFn, fn_values
from .splitting import (
    ObjectiveG,
    Scheme,
    SplitSchedule,
    Trajectory,
    box_qp_argmin,
    constant_schedule,
    decay_schedule,
    dirichlet_energy,
    fit_loss_gap_model,
    logsumexp_objective,
    long_horizon_optimum,
    quadratic_objective,
    run_scheme,
)
from .util import substream, substream_seed

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e3
HIT_TOLERANCE = 0.15


@dataclass(frozen=True, eq=False)
class LabeledInstance:
    kind: str
    params: dict[str, np.ndarray]
    target: CoeffVec
    optimum: float
    truncation_energy: float = 0.0


@dataclass(frozen=True, eq=False)
class Dataset:
    kind: str
    basis: BasisSpec
    params: dict[str, np.ndarray]
    targets: np.ndarray
    optima: np.ndarray
    truncation_energy: np.ndarray

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    def __getitem__(self, index: int) -> LabeledInstance:
        return LabeledInstance(
            self.kind,
            {k: v[index] for k, v in self.params.items()},
            CoeffVec(self.targets[index], self.basis),
            float(self.optima[index]),
            float(self.truncation_energy[index]),
        )

    @property
    def rank(self) -> int:
        return int(self.targets.shape[-1])

    def objective(self) -> ObjectiveG:
        return instance_objective(self.kind, self.params, self.basis, self.rank)


def instance_objective(kind: str, params: dict[str, np.ndarray], basis: BasisSpec, rank: int) -> ObjectiveG:
    if kind == "quadratic":
        return quadratic_objective(params["A"], params["b"], params["c"])
    if kind == "logsumexp":
        return logsumexp_objective(params["b"], params["c"])
    if kind == "dirichlet":
        return dirichlet_energy(params["nu"], derivative_matrix(basis, rank + 1)[:, :rank])
    raise ValueError(f"unknown objective kind {kind!r}")


def family_prox(config: ExperimentConfig) -> tuple[ProxFn, float]:
    if config.family is Family.MIN_OP:
        return ProxFn.box(config.minop.lo, config.minop.hi), 1.0
    return ProxFn.reaction(), config.pde.T / max(config.L, 1)


def dataset_to_json(dataset: Dataset) -> str:
    document = {
        "kind": dataset.kind,
        "basis": dataset.basis.to_dict(),
        "params": {k: np.asarray(v).tolist() for k, v in dataset.params.items()},
        "targets": dataset.targets.tolist(),
        "optima": dataset.optima.tolist(),
        "truncation_energy": dataset.truncation_energy.tolist(),
    }
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def gen_minop_dataset(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    p = config.minop
    rng = substream(config.seed, "dataset")
    d, R = p.d, config.R
    basis = BasisSpec.standard(d)
    box = ProxFn.box(p.lo, p.hi)

    G = rng.standard_normal((config.n_train, d, d))
    A = np.swapaxes(G, -1, -2) @ G + 0.1 * np.eye(d)
    b = rng.uniform(-2.0, 2.0, (config.n_train, d))
    c = rng.uniform(-2.0, 2.0, config.n_train)
    argmins = np.array([box_qp_argmin(A[k], b[k], p.lo, p.hi) for k in range(config.n_train)])
    train_g = quadratic_objective(A, b, c)
    train_optima = train_g.values(argmins[:, None, :])[:, 0]
    train = Dataset(
        "quadratic",
        basis,
        {"A": A, "b": b, "c": c},
        argmins[:, :R],
        train_optima,
        np.zeros(config.n_train),
    )

    signs = rng.choice([-1.0, 1.0], size=config.n_test)
    b_test = signs[:, None] * rng.uniform(0.0, 2.0, (config.n_test, d))
    c_test = rng.uniform(0.0, 2.0, config.n_test)
    test_g = logsumexp_objective(b_test, c_test)
    argmins, optima = long_horizon_optimum(
        box, test_g, np.zeros((config.n_test, d)), basis, L=p.test_horizon, lipschitz=np.max(b_test**2, axis=1)
    )
    test = Dataset("logsumexp", basis, {"b": b_test, "c": c_test}, argmins[:, :R], optima, np.zeros(config.n_test))
    logger.info("min-op dataset: %d train quadratics, %d test log-sum-exp (d=%d)", len(train), len(test), d)
    return train, test


def initial_condition(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return 5.0 * u * np.exp(-u * u)


def heat_solution(nu: float, T: float, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    spread = 1.0 + 4.0 * nu * T
    return 5.0 * u * np.exp(-u * u / spread) * spread**-1.5


def _check_grid(nodes: np.ndarray) -> float:
    if nodes.ndim != 1 or nodes.size < 3:
        raise PdeSolverError("the reference solver needs at least three grid nodes")
    spacing = np.diff(nodes)
    h = float(spacing[0])
    if not np.allclose(spacing, h, rtol=1e-9, atol=0.0) or h <= 0:
        raise PdeSolverError("the reference solver needs a uniform increasing grid")
    if not (math.isclose(nodes[0], DOMAIN[0], abs_tol=1e-9) and math.isclose(nodes[-1], DOMAIN[1], abs_tol=1e-9)):
        raise PdeSolverError(f"the grid must span [{DOMAIN[0]:g}, {DOMAIN[1]:g}]")
    return h


def pde_reference(nu: float, T: float, nodes: np.ndarray, steps: int, reaction: bool = True) -> GridFn:
    """y(T, .) for y_t = nu y'' - min(y, 0)/2, y(0, u) = 5u exp(-u^2), zero boundary.

    Crank-Nicolson diffusion, with the reaction applied as two half-step
    resolvents y / (1 + dt/4) on negative values around each diffusion step.
    """
    if not nu > 0 or not T > 0:
        raise PdeSolverError("nu and T must be positive")
    if steps < 100:
        raise PdeSolverError(f"use at least 100 time steps, got {steps}")
    nodes = np.asarray(nodes, dtype=np.float64)
    h = _check_grid(nodes)
    dt = T / steps
    r = nu * dt / (2.0 * h * h)
    interior = nodes.size - 2
    banded = np.empty((2, interior))
    banded[0, 0] = 0.0
    banded[0, 1:] = -r
    banded[1, :] = 1.0 + 2.0 * r
    factor = cholesky_banded(banded)
    half = 1.0 / (1.0 + 0.25 * dt)

    y = initial_condition(nodes)
    y[0] = y[-1] = 0.0
    ceiling = 10.0 * float(np.max(np.abs(y)))
    for step in range(steps):
        if reaction:
            y = np.where(y < 0.0, y * half, y)
        inner = y[1:-1]
        rhs = (1.0 - 2.0 * r) * inner
        rhs[1:] += r * inner[:-1]
        rhs[:-1] += r * inner[1:]
        y[1:-1] = cho_solve_banded((factor, False), rhs)
        if reaction:
            y = np.where(y < 0.0, y * half, y)
        if not np.all(np.isfinite(y)) or float(np.max(np.abs(y))) > ceiling:
            raise PdeSolverError(f"reference solution blew up at step {step + 1} (nu={nu:g})")
    return GridFn(nodes, y)


def gen_pde_dataset(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    p = config.pde
    rng = substream(config.seed, "dataset")
    R = config.R
    basis = BasisSpec.hermite(R)
    wide = BasisSpec.hermite(2 * R)
    grid = uniform_grid(p.grid_points)
    nus = rng.uniform(p.nu_lo, p.nu_hi, config.n_train + config.n_test)
    targets, energy = [], []
    for nu in nus:
        coeffs = encode(pde_reference(nu, p.T, grid, p.time_steps, p.reaction), wide, 2 * R).coeffs
        total = float(coeffs @ coeffs)
        targets.append(coeffs[:R])
        energy.append(float(coeffs[R:] @ coeffs[R:]) / total if total > 0 else 0.0)
    targets = np.asarray(targets)
    energy = np.asarray(energy)
    logger.info("pde dataset: %d train / %d test nu values, max truncation %.2e", config.n_train, config.n_test, energy.max())

    def split(index: slice) -> Dataset:
        count = len(nus[index])
        return Dataset("dirichlet", basis, {"nu": nus[index]}, targets[index], np.zeros(count), energy[index])

    return split(slice(0, config.n_train)), split(slice(config.n_train, None))


def generate_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if config.family is Family.MIN_OP:
        return gen_minop_dataset(config)
    return gen_pde_dataset(config)


def pde_splitting_scheme(nu: float, T: float, steps: int, basis: BasisSpec, R: int, reaction: bool = True) -> Trajectory:
    grid = uniform_grid(2001)
    x0 = encode(GridFn(grid, initial_condition(grid)), basis, R)
    g = dirichlet_energy(nu, derivative_matrix(basis, R + 1)[:, :R])
    f = ProxFn.reaction() if reaction else ProxFn.zero()
    dt = T / steps
    schedule = SplitSchedule(steps, (1.0,) * (steps + 1), (dt,) * (steps + 1), 1e-6, R, g.lipschitz, kind="pde")
    return run_scheme(x0, schedule, f, g, Scheme.EXACT, tau=dt)


def _lifted(out: np.ndarray, dim: int) -> np.ndarray:
    if out.shape[-1] == dim:
        return out
    padded = np.zeros(out.shape[:-1] + (dim,))
    padded[..., : out.shape[-1]] = out
    return padded


@dataclass(frozen=True, eq=False)
class EvalSummary:
    mse: float
    sup_errors: np.ndarray
    rel_l2: np.ndarray
    gaps: np.ndarray

    def hit_rate(self, tolerance: float = HIT_TOLERANCE) -> float:
        return float(np.mean(self.sup_errors <= tolerance))

    @property
    def median_rel_l2(self) -> float:
        return float(np.median(self.rel_l2))

    def to_dict(self) -> dict:
        finite = self.gaps[np.isfinite(self.gaps)]
        return {
            "test_mse": self.mse,
            "hit_rate": self.hit_rate(),
            "median_rel_l2": self.median_rel_l2,
            "max_sup_error": float(self.sup_errors.max()),
            "gap_mean": float(finite.mean()) if finite.size else None,
            "gap_max": float(finite.max()) if finite.size else None,
            "infeasible": int(self.gaps.size - finite.size),
        }


def evaluate(params: GeoParams, dataset: Dataset, g: ObjectiveG, X0: np.ndarray) -> EvalSummary:
    out = geo_forward_batch(params, g, X0)
    diff = out - dataset.targets
    norms = np.linalg.norm(dataset.targets, axis=-1)
    lifted = _lifted(out, g.dim)
    values = fn_values(params.prox, lifted, dataset.basis) + g.values(lifted[:, None, :])[:, 0]
    return EvalSummary(
        mse=float(np.sum(diff * diff) / len(dataset)),
        sup_errors=np.max(np.abs(diff), axis=-1),
        rel_l2=np.linalg.norm(diff, axis=-1) / np.maximum(norms, 1e-12),
        gaps=values - dataset.optima,
    )


def loss_gap_eval(params: GeoParams, instance: LabeledInstance, basis: BasisSpec | None = None) -> float:
    """l_{f,g}(G(g)) minus the instance's reference optimum.

    For pde-rd instances the optimum is the minimum of f + g_nu, which is 0 at
    the origin, so the gap at the PDE target y(T) is l(y(T)) > 0 and not 0.
    """
    basis = instance.target.basis if basis is None else basis
    batched = {k: np.asarray(v)[None] for k, v in instance.params.items()}
    g = instance_objective(instance.kind, batched, basis, params.R)
    X0 = sample_noise_batch(params.noise, params.basis, params.R, 1)
    lifted = _lifted(geo_forward_batch(params, g, X0), g.dim)
    value = float(fn_values(params.prox, lifted, basis)[0] + g.values(lifted[:, None, :])[0, 0])
    return value - instance.optimum


@dataclass(frozen=True)
class LossGapFit:
    depths: tuple[int, ...]
    mean_gaps: tuple[float, ...]
    c1: float
    c2: float
    r2: float


def loss_gap_diagnostic(
    depths: tuple[int, ...] = (8, 16, 32), instances: int = 20, d: int = 3, seed: int = 0
) -> LossGapFit:
    """Mean loss gap of theoretical operators over box quadratics, fitted to c1/L + c2 2^{1-L}.

    The operators follow constant-step schedules (alpha = 1, lambda = 0.9/Lip); under
    a decay-compliant schedule the gates stay shut and the gap does not move with L.
    """
    rng = substream(seed, "check")
    basis = BasisSpec.standard(d)
    box = ProxFn.box(-1.0, 1.0)
    Q, _ = np.linalg.qr(rng.standard_normal((instances, d, d)))
    eigs = rng.uniform(1.0, 4.0, (instances, d))
    A = Q @ (eigs[..., None] * np.swapaxes(Q, -1, -2))
    b = rng.uniform(-3.0, 3.0, (instances, d))
    c = np.zeros(instances)
    argmins = np.array([box_qp_argmin(A[k], b[k], -1.0, 1.0) for k in range(instances)])
    g = quadratic_objective(A, b, c)
    optima = g.values(argmins[:, None, :])[:, 0]
    dataset = Dataset("quadratic", basis, {"A": A, "b": b, "c": c}, argmins, optima, np.zeros(instances))

    means = []
    for L in depths:
        schedule = constant_schedule(L, g.lipschitz, d)
        params = build_theoretical_geo(box, schedule, basis, enforce_decay=False)
        means.append(float(np.mean([loss_gap_eval(params, dataset[k]) for k in range(instances)])))
        logger.info("loss gap at L=%d: %.3e", L, means[-1])
    c1, c2, r2 = fit_loss_gap_model(depths, means)
    return LossGapFit(tuple(depths), tuple(means), c1, c2, r2)


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def pde_step_schedule(config: ExperimentConfig, lipschitz: float) -> SplitSchedule:
    L = config.L
    step = min(config.pde.T / L, 0.9 / lipschitz)
    if step < config.pde.T / L:
        logger.warning("time step capped at %.3g for stability; operator covers t <= %.3g", step, step * L)
    return SplitSchedule(L, (1.0,) * (L + 1), (step,) * (L + 1), 1e-6, config.R, lipschitz, kind="pde")


def initial_params(
    config: ExperimentConfig, prox: ProxFn, tau: float, basis: BasisSpec, g: ObjectiveG, noise: NoiseSpec
) -> GeoParams:
    if config.init == "theoretical" and config.family is Family.PDE_RD:
        schedule = pde_step_schedule(config, g.lipschitz)
        return build_theoretical_geo(prox, schedule, basis, schedule.lambdas[0], noise, config.M, enforce_decay=False)
    if config.init == "theoretical":
        schedule = decay_schedule(config.L, 1.0, g.lipschitz, config.R)
        return build_theoretical_geo(prox, schedule, basis, tau, noise, width=config.M)
    rng = substream(config.seed, "init")
    return init_geo(config.R, config.L, config.M, basis, prox, tau, rng, noise=noise)


@dataclass
class ExperimentResult:
    params: GeoParams
    metrics: list[MetricsRow] = field(default_factory=list)
    evaluation: EvalSummary | None = None
    train_size: int = 0
    test_size: int = 0

    def to_dict(self) -> dict:
        return {
            "epochs": self.metrics[-1].epoch if self.metrics else 0,
            "initial_train_mse": self.metrics[0].train_mse if self.metrics else None,
            "final_train_mse": self.metrics[-1].train_mse if self.metrics else None,
            "initial_test_mse": self.metrics[0].test_mse if self.metrics else None,
            "n_train": self.train_size,
            "n_test": self.test_size,
            "evaluation": self.evaluation.to_dict() if self.evaluation else None,
        }


def experiment_noise(config: ExperimentConfig, basis: BasisSpec) -> tuple[NoiseSpec, np.ndarray, np.ndarray]:
    """The noise spec plus fixed input draws for the train and test instances.

    pde-rd inputs are centred on the encoded initial condition.
    """
    center: tuple[float, ...] = ()
    if config.family is Family.PDE_RD:
        nodes, _ = quadrature(basis)
        center = tuple(encode(GridFn(nodes, initial_condition(nodes)), basis, config.R).coeffs)
    spec = NoiseSpec(config.noise.kind, config.noise.std, substream_seed(config.seed, "noise"), center)
    draws = sample_noise_batch(spec, basis, config.R, config.n_train + config.n_test)
    return spec, draws[: config.n_train], draws[config.n_train :]


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    train, test = generate_datasets(config)
    prox, tau = family_prox(config)
    basis = train.basis
    noise, X_train, X_test = experiment_noise(config, basis)
    g_train, g_test = train.objective(), test.objective()
    params = initial_params(config, prox, tau, basis, g_train, noise)
    trainable = DEFAULT_TRAINABLE + (("samples",) if config.train_samples else ())
    state = AdamState.for_params(params, lr=config.lr, trainable=trainable)
    shuffle = substream(config.seed, "shuffle")

    def train_mse(p: GeoParams) -> float:
        return mse_loss(geo_forward_batch(p, g_train, X_train), train.targets)[0]

    def test_mse(p: GeoParams) -> float:
        return mse_loss(geo_forward_batch(p, g_test, X_test), test.targets)[0]

    initial = train_mse(params)
    metrics = [MetricsRow(0, initial, test_mse(params))]
    logger.info("epoch 0: train %.4e test %.4e", initial, metrics[0].test_mse)
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for index in minibatches(len(train), config.batch_size, shuffle):
            out, tape = record_batch(params, g_train.subset(index), X_train[index])
            loss, seed = mse_loss(out, train.targets[index])
            params, state = adam_step(params, backward(tape, seed), state)
            total += loss * len(index)
        epoch_mse = total / len(train)
        if not math.isfinite(epoch_mse) or epoch_mse > DIVERGENCE_FACTOR * max(initial, 1e-12):
            raise TrainingDivergedError(
                f"train MSE {epoch_mse:.3e} at epoch {epoch} exceeds {DIVERGENCE_FACTOR:g} x initial {initial:.3e}"
            )
        row = MetricsRow(epoch, epoch_mse)
        if epoch % config.eval_interval == 0 or epoch == config.epochs:
            row.test_mse = test_mse(params)
            logger.info("epoch %d: train %.4e test %.4e", epoch, epoch_mse, row.test_mse)
        metrics.append(row)
    evaluation = evaluate(params, test, g_test, X_test)
    return ExperimentResult(params, metrics, evaluation, len(train), len(test))


def evaluate_model(params: GeoParams, config: ExperimentConfig) -> EvalSummary:
    _, test = generate_datasets(config)
    _, _, X_test = experiment_noise(config, test.basis)
    return evaluate(params, test, test.objective(), X_test)
