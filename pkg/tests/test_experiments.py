import math

import numpy as np
import pytest

from geosplit.config import ExperimentConfig, validate_config
from geosplit.errors import PdeSolverError
from geosplit.experiments import (
    dataset_to_json,
    evaluate_model,
    experiment_noise,
    family_prox,
    gen_minop_dataset,
    gen_pde_dataset,
    heat_solution,
    initial_condition,
    initial_params,
    loss_gap_diagnostic,
    loss_gap_eval,
    pde_reference,
    pde_splitting_scheme,
    pde_step_schedule,
    run_experiment,
)
from geosplit.geo import GeoParams, NoiseSpec, geo_forward_batch, geo_to_json
from geosplit.hilbert import BasisSpec, CoeffVec, GridFn, derivative_matrix, encode, quadrature, uniform_grid
from geosplit.prox import ProxFn, fn_values
from geosplit.splitting import Scheme, dirichlet_energy, long_horizon_optimum, quadratic_objective, run_scheme


def _minop(**overrides):
    data = {
        "family": "min-op",
        "seed": 3,
        "R": 2,
        "L": 3,
        "M": 4,
        "epochs": 0,
        "n_train": 8,
        "n_test": 4,
        "batch_size": 4,
        "eval_interval": 1,
        "minop": {"d": 2, "test_horizon": 3000},
    }
    data.update(overrides)
    return validate_config(data, ExperimentConfig)


def _pde(**overrides):
    data = {
        "family": "pde-rd",
        "seed": 1,
        "R": 6,
        "L": 3,
        "M": 8,
        "epochs": 0,
        "n_train": 3,
        "n_test": 2,
        "batch_size": 3,
        "eval_interval": 1,
        "pde": {"grid_points": 401, "time_steps": 200},
    }
    data.update(overrides)
    return validate_config(data, ExperimentConfig)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_minop_train_targets_solve_the_box_quadratics():
    train, _ = gen_minop_dataset(_minop())
    assert len(train) == 8
    assert np.all(np.abs(train.targets) <= 1.0)
    g = train.objective()
    lipschitz = np.linalg.eigvalsh(train.params["A"])[:, -1]
    X, values = long_horizon_optimum(
        ProxFn.box(-1.0, 1.0), g, np.zeros((8, 2)), train.basis, L=5000, lipschitz=lipschitz
    )
    np.testing.assert_allclose(X, train.targets, atol=1e-6)
    np.testing.assert_allclose(values, train.optima, atol=1e-7)


def test_minop_test_targets_sit_in_the_corner_against_the_signs():
    _, test = gen_minop_dataset(_minop(n_test=30))
    b = test.params["b"]
    strong = np.min(np.abs(b), axis=1) > 0.1
    assert strong.any()
    expected = -np.sign(b[strong])
    np.testing.assert_allclose(test.targets[strong], expected, atol=1e-12)
    assert test.kind == "logsumexp"


def test_datasets_are_deterministic():
    first = gen_minop_dataset(_minop())
    second = gen_minop_dataset(_minop())
    for a, b in zip(first, second):
        assert dataset_to_json(a) == dataset_to_json(b)
    other = gen_minop_dataset(_minop(seed=4))
    assert dataset_to_json(other[0]) != dataset_to_json(first[0])


def test_dataset_indexing():
    train, _ = gen_minop_dataset(_minop())
    instance = train[2]
    assert instance.kind == "quadratic"
    assert instance.target.coeffs.tolist() == train.targets[2].tolist()
    assert instance.params["A"].shape == (2, 2)
    assert train.rank == 2


@pytest.mark.parametrize("nu", [0.01, 0.1, 0.4])
def test_reference_solver_matches_the_heat_kernel(nu):
    grid = uniform_grid(2001)
    y = pde_reference(nu, 1.0, grid, 2000, reaction=False)
    assert _rel(y.values, heat_solution(nu, 1.0, grid)) < 1e-3


def test_reference_solver_self_refinement():
    grid = uniform_grid(2001)
    coarse = pde_reference(0.1, 1.0, grid, 1000)
    fine = pde_reference(0.1, 1.0, grid, 2000)
    assert _rel(coarse.values, fine.values) < 1e-4


def test_reaction_alone_damps_only_the_negative_lobe():
    grid = uniform_grid(2001)
    y = pde_reference(1e-9, 1.0, grid, 2000)
    y0 = initial_condition(grid)
    negative = (grid > -3.0) & (grid < -0.5)
    positive = (grid > 0.5) & (grid < 3.0)
    np.testing.assert_allclose(y.values[negative] / y0[negative], math.exp(-0.5), rtol=1e-4)
    np.testing.assert_allclose(y.values[positive] / y0[positive], 1.0, rtol=1e-4)


def test_reference_solver_rejects_bad_inputs():
    grid = uniform_grid(401)
    with pytest.raises(PdeSolverError):
        pde_reference(0.1, 1.0, grid, 50)
    with pytest.raises(PdeSolverError):
        pde_reference(0.1, 1.0, np.linspace(-5.0, 5.0, 401), 200)
    with pytest.raises(PdeSolverError):
        pde_reference(0.1, 1.0, np.concatenate([grid[:200], grid[201:]]), 200)
    with pytest.raises(PdeSolverError):
        pde_reference(0.0, 1.0, grid, 200)


def test_same_nu_gives_identical_targets():
    grid = uniform_grid(401)
    a = pde_reference(0.2, 1.0, grid, 200)
    b = pde_reference(0.2, 1.0, grid, 200)
    assert a.values.tolist() == b.values.tolist()


def test_pde_dataset():
    train, test = gen_pde_dataset(_pde())
    assert (len(train), len(test)) == (3, 2)
    assert train.targets.shape == (3, 6)
    assert train.kind == "dirichlet"
    assert np.all((train.params["nu"] >= 0.01) & (train.params["nu"] <= 0.4))
    assert np.all(train.truncation_energy < 0.05)
    assert np.all(test.optima == 0.0)


def test_dirichlet_energy_of_the_initial_condition():
    basis = BasisSpec.hermite(24)
    grid = uniform_grid(2001)
    z = encode(GridFn(grid, initial_condition(grid)), basis, 24)
    nu = 0.3
    g = dirichlet_energy(nu, derivative_matrix(basis, 25)[:, :24])
    exact = 0.5 * nu * 18.75 * math.sqrt(math.pi / 2.0)
    assert g(z) == pytest.approx(exact, rel=1e-6)


def test_hermite_splitting_tracks_the_reference():
    basis = BasisSpec.hermite(12)
    grid = uniform_grid(2001)
    for reaction, tolerance in ((False, 1e-2), (True, 5e-2)):
        trajectory = pde_splitting_scheme(0.1, 1.0, 400, basis, 12, reaction=reaction)
        reference = encode(pde_reference(0.1, 1.0, grid, 2000, reaction=reaction), basis, 12)
        assert not trajectory.diverged
        assert _rel(trajectory.final.coeffs, reference.coeffs) < tolerance


def _constant_output(target, basis):
    R = target.size
    return GeoParams(
        A=np.zeros((1, R, R)),
        B=np.zeros((1, R, 1)),
        b=target[None, :],
        gamma=np.zeros(1),
        samples=np.zeros((1, 1, R)),
        readout=np.eye(R),
        basis=basis,
        prox=ProxFn.box(-1.0, 1.0),
    )


def test_loss_gap_is_zero_at_the_target_and_nonnegative_elsewhere():
    _, test = gen_minop_dataset(_minop())
    instance = test[0]
    at_target = _constant_output(instance.target.coeffs, test.basis)
    assert abs(loss_gap_eval(at_target, instance)) <= 1e-9
    elsewhere = _constant_output(np.array([0.3, -0.2]), test.basis)
    assert loss_gap_eval(elsewhere, instance) >= -1e-9


def test_loss_gap_on_a_quadratic_instance():
    train, _ = gen_minop_dataset(_minop())
    instance = train[0]
    params = _constant_output(np.zeros(2), train.basis)
    g = quadratic_objective(instance.params["A"], instance.params["b"], instance.params["c"])
    expected = float(g.values(np.zeros((1, 1, 2)))[0, 0]) - instance.optimum
    assert loss_gap_eval(params, instance) == pytest.approx(expected)
    assert expected >= 0.0


def test_zero_epochs_records_the_initial_state():
    result = run_experiment(_minop())
    assert len(result.metrics) == 1
    assert result.metrics[0].epoch == 0
    assert result.metrics[0].test_mse is not None
    summary = result.to_dict()
    assert summary["n_train"] == 8
    assert summary["evaluation"]["test_mse"] == pytest.approx(result.metrics[0].test_mse)


def test_short_training_lowers_the_train_mse():
    result = run_experiment(_minop(epochs=20, lr=1e-2))
    assert len(result.metrics) == 21
    assert result.metrics[-1].train_mse < result.metrics[0].train_mse
    assert all(row.test_mse is not None for row in result.metrics)


def test_training_is_deterministic():
    first = run_experiment(_minop(epochs=3, lr=1e-2))
    second = run_experiment(_minop(epochs=3, lr=1e-2))
    assert [(m.epoch, m.train_mse, m.test_mse) for m in first.metrics] == [
        (m.epoch, m.train_mse, m.test_mse) for m in second.metrics
    ]
    assert geo_to_json(first.params) == geo_to_json(second.params)


def test_theoretical_initialisation_and_evaluation():
    config = _minop(init="theoretical", epochs=1, lr=1e-3)
    result = run_experiment(config)
    assert result.params.M == 4
    summary = evaluate_model(result.params, config)
    assert summary.mse == pytest.approx(result.evaluation.mse)
    assert 0.0 <= summary.hit_rate() <= 1.0


def test_pde_experiment_runs_with_gaussian_noise():
    result = run_experiment(_pde(epochs=2, lr=1e-3, noise={"kind": "gaussian", "std": 0.1}))
    assert len(result.metrics) == 3
    assert result.params.prox.kind.value == "reaction"
    assert result.params.tau == pytest.approx(1.0 / 3)


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_minop_desk_run(seed):
    result = run_experiment(validate_config({"family": "min-op", "seed": seed}, ExperimentConfig))
    assert result.evaluation.mse < 0.05
    assert result.evaluation.hit_rate() >= 0.8
    assert result.metrics[-1].train_mse <= result.metrics[0].train_mse


@pytest.mark.slow
def test_pde_desk_run():
    passed = 0
    for seed in range(3):
        result = run_experiment(validate_config({"family": "pde-rd", "seed": seed}, ExperimentConfig))
        final_test = [m.test_mse for m in result.metrics if m.test_mse is not None][-1]
        if result.evaluation.median_rel_l2 < 0.1 and final_test < 0.25 * result.metrics[0].test_mse:
            passed += 1
    assert passed >= 2


def test_theoretical_loss_gap_follows_the_depth_model():
    fit = loss_gap_diagnostic()
    assert fit.depths == (8, 16, 32)
    assert all(gap >= -1e-9 for gap in fit.mean_gaps)
    assert fit.mean_gaps[0] > fit.mean_gaps[1] > fit.mean_gaps[2]
    assert fit.r2 >= 0.95


def test_pde_loss_gap_is_measured_against_the_zero_optimum():
    _, test = gen_pde_dataset(_pde())
    instance = test[0]
    basis, R = test.basis, test.rank
    target = instance.target.coeffs
    # gates shut: the operator returns its input, which is the target itself
    params = GeoParams(
        A=np.zeros((1, R, R)),
        B=np.zeros((1, R, 1)),
        b=np.zeros((1, R)),
        gamma=np.ones(1),
        samples=np.zeros((1, 1, R)),
        readout=np.eye(R),
        basis=basis,
        prox=ProxFn.reaction(),
        noise=NoiseSpec(center=tuple(target)),
    )
    g = dirichlet_energy(instance.params["nu"], derivative_matrix(basis, R + 1)[:, :R])
    expected = float(fn_values(ProxFn.reaction(), target[None, :], basis)[0] + g(instance.target))
    assert instance.optimum == 0.0
    assert expected > 0.0
    assert loss_gap_eval(params, instance) == pytest.approx(expected, rel=1e-12)


def test_pde_inputs_are_centred_on_the_initial_condition():
    config = _pde()
    basis = BasisSpec.hermite(config.R)
    spec, X_train, X_test = experiment_noise(config, basis)
    nodes, _ = quadrature(basis)
    center = encode(GridFn(nodes, initial_condition(nodes)), basis, config.R).coeffs
    np.testing.assert_allclose(X_train, np.broadcast_to(center, X_train.shape))
    np.testing.assert_allclose(X_test, np.broadcast_to(center, X_test.shape))
    assert spec.center == tuple(center)
    _, X_minop, _ = experiment_noise(_minop(), BasisSpec.standard(2))
    assert not X_minop.any()


def test_pde_theoretical_operator_takes_explicit_time_steps():
    config = _pde(L=10, init="theoretical")
    train, _ = gen_pde_dataset(config)
    prox, tau = family_prox(config)
    basis = train.basis
    noise, X_train, _ = experiment_noise(config, basis)
    params = initial_params(config, prox, tau, basis, train.objective(), noise)
    assert params.tau == pytest.approx(0.1)
    assert params.gamma.tolist() == [0.0] * 10 + [1.0]
    g = train.objective().subset([0])
    schedule = pde_step_schedule(config, train.objective().lipschitz)
    expected = run_scheme(CoeffVec(X_train[0], basis), schedule, prox, g, Scheme.PROJECTED, tau=0.1).final
    out = geo_forward_batch(params, g, X_train[:1])[0]
    np.testing.assert_allclose(out, expected.coeffs, atol=1e-8)


def test_pde_theoretical_init_beats_random_init():
    wins = 0
    for seed in range(10):
        theoretical = run_experiment(_pde(seed=seed, L=10, M=7, init="theoretical"))
        random = run_experiment(_pde(seed=seed, L=10, M=7))
        wins += theoretical.metrics[0].test_mse <= random.metrics[0].test_mse
    assert wins >= 9
