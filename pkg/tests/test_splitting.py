import math

import numpy as np
import pytest

from geosplit.errors import ObjectiveError, RankError, ScheduleError
from geosplit.hilbert import BasisSpec, CoeffVec
from geosplit.prox import ProxFn
from geosplit.splitting import (
    Scheme,
    SplitSchedule,
    approx_fb_step,
    box_qp_argmin,
    check_step,
    constant_schedule,
    decay_schedule,
    deviation_report,
    ellipsoidal_objective,
    fb_step,
    fd_error_sweep,
    fd_grad,
    fit_loss_gap_model,
    logsumexp_objective,
    long_horizon_optimum,
    objective_losses,
    projected_fb_step,
    quadratic_objective,
    run_batch,
    run_scheme,
    scalar_objective,
    step_coupled_schedule,
)


def _well_conditioned(rng, d):
    G = rng.standard_normal((d, d))
    return G.T @ G / d + np.eye(d)


def test_quadratic_value_and_gradient():
    basis = BasisSpec.standard(2)
    g = quadratic_objective(np.diag([2.0, 4.0]), np.array([1.0, -1.0]), 3.0)
    x = CoeffVec([1.0, 1.0], basis)
    assert g(x) == pytest.approx(0.5 * (2.0 + 4.0) + 0.0 + 3.0)
    assert g.grad(x).coeffs.tolist() == [3.0, 3.0]
    assert g.lipschitz == pytest.approx(4.0)


def test_batched_objective_subset():
    rng = np.random.default_rng(0)
    A = np.stack([_well_conditioned(rng, 3) for _ in range(3)])
    g = quadratic_objective(A, rng.standard_normal((3, 3)))
    assert g.batch_size == 3
    one = g.subset([1])
    assert one.batch_size == 1
    point = rng.standard_normal((1, 1, 3))
    assert one.values(point)[0, 0] == pytest.approx(g.values(np.repeat(point, 3, axis=0))[1, 0])


def test_inconsistent_gradient_is_rejected():
    with pytest.raises(ObjectiveError):
        scalar_objective(lambda v: float(v @ v), 2, 2.0, gradient=lambda v: 3.0 * v)


def test_logsumexp_objective():
    basis = BasisSpec.standard(2)
    g = logsumexp_objective(np.array([1.0, 2.0]), 1.0)
    x = CoeffVec([0.0, 0.0], basis)
    assert g(x) == pytest.approx(math.log(3.0))
    np.testing.assert_allclose(g.grad(x).coeffs, [1.0 / 3.0, 2.0 / 3.0])
    assert g.lipschitz == pytest.approx(4.0)
    with pytest.raises(ObjectiveError):
        logsumexp_objective(np.array([1.0]), -1.0)


def test_fd_grad_is_exact_on_linear_objectives():
    basis = BasisSpec.standard(3)
    g = quadratic_objective(np.zeros((3, 3)), np.array([0.5, -2.0, 4.0]))
    out = fd_grad(g, CoeffVec([1.0, 2.0, 3.0], basis), 1e-3, 2)
    np.testing.assert_allclose(out.coeffs, [0.5, -2.0, 0.0], atol=1e-9)


def test_fd_grad_rejects_bad_rank_and_step():
    basis = BasisSpec.standard(3)
    g = quadratic_objective(np.eye(3), np.zeros(3))
    x = CoeffVec([1.0, 2.0, 3.0], basis)
    with pytest.raises(RankError):
        fd_grad(g, x, 1e-3, 4)
    with pytest.raises(ScheduleError):
        fd_grad(g, x, 0.0, 2)


def test_step_validation():
    check_step(1.0, 0.5, 1.0)
    with pytest.raises(ScheduleError):
        check_step(0.0, 0.5, 1.0)
    with pytest.raises(ScheduleError):
        check_step(1.0, 1.0, 1.0)
    with pytest.raises(ScheduleError):
        check_step(1.5, 0.1, 1.0)


def test_decay_schedule_shape():
    schedule = decay_schedule(4, 1.0, 2.0, 2)
    assert schedule.delta == pytest.approx(2.0**-4 / 2)
    assert schedule.lambdas == (0.25,) * 5
    assert schedule.alphas[0] == pytest.approx(2.0**-4)
    assert schedule.decay_compliant()
    with pytest.raises(ScheduleError):
        decay_schedule(0, 1.0, 2.0, 2)


def test_decay_violation_is_rejected():
    with pytest.raises(ScheduleError):
        SplitSchedule(2, (1.0, 1.0, 1.0), (0.1, 0.1, 0.1), 1e-3, 1, 1.0, "decay", 1.0)
    assert not constant_schedule(3, 1.0, 1).decay_compliant(1.0)


def test_step_coupled_schedule():
    schedule = step_coupled_schedule(4, 1.0, 1)
    assert schedule.alphas[0] == pytest.approx(0.5 / 16.0)
    assert schedule.alphas[-1] == 1.0
    assert all(0.0 < a <= 1.0 for a in schedule.alphas)


def test_single_steps_agree_on_full_rank_linear_objective():
    basis = BasisSpec.standard(2)
    g = quadratic_objective(np.eye(2), np.array([1.0, -1.0]))
    x = CoeffVec([0.5, 0.5], basis)
    box = ProxFn.box(-1.0, 1.0)
    exact = fb_step(x, box, g, 1.0, 0.5)
    np.testing.assert_allclose(exact.coeffs, [-0.25, 0.75])
    approx = approx_fb_step(x, box, g, 1.0, 0.5, 1e-7, 2)
    projected = projected_fb_step(x, box, g, 1.0, 0.5, 1e-7, 2)
    np.testing.assert_allclose(approx.coeffs, exact.coeffs, atol=1e-6)
    assert projected.coeffs.tolist() == approx.coeffs.tolist()


def test_exact_step_needs_gradient():
    g = scalar_objective(lambda v: float(v @ v), 2, 2.0)
    with pytest.raises(ObjectiveError):
        fb_step(CoeffVec([1.0, 1.0], BasisSpec.standard(2)), ProxFn.zero(), g, 1.0, 0.1)


def test_box_qp_argmin_corner():
    x = box_qp_argmin(np.eye(2), np.array([-2.0, -2.0]), -1.0, 1.0)
    assert x.tolist() == [1.0, 1.0]


def test_box_qp_argmin_matches_long_run():
    rng = np.random.default_rng(4)
    A = _well_conditioned(rng, 4)
    b = 2.0 * rng.standard_normal(4)
    g = quadratic_objective(A, b)
    X, _ = long_horizon_optimum(ProxFn.box(-1.0, 1.0), g, np.zeros((1, 4)), BasisSpec.standard(4), L=5000)
    np.testing.assert_allclose(X[0], box_qp_argmin(A, b, -1.0, 1.0), atol=1e-8)


def test_exact_scheme_rate_on_box_quadratics():
    rng = np.random.default_rng(2024)
    n, d = 50, 6
    A = np.stack([_well_conditioned(rng, d) for _ in range(n)])
    b = rng.uniform(-3.0, 3.0, (n, d))
    g = quadratic_objective(A, b)
    f = ProxFn.box(-1.0, 1.0)
    basis = BasisSpec.standard(d)
    argmins = np.stack([box_qp_argmin(A[i], b[i], -1.0, 1.0) for i in range(n)])
    optimum = g.values(argmins[:, None, :])[:, 0]

    def gaps(L):
        X = run_batch(np.zeros((n, d)), constant_schedule(L, g.lipschitz, d), f, g, Scheme.EXACT, basis)
        return objective_losses(f, g, X, basis) - optimum

    early, late = gaps(20), gaps(160)
    assert np.all(late <= 2.0 * (20 / 160) * early + 1e-12)
    assert np.all(gaps(500) <= 1e-6)


def test_trajectory_records_every_iterate():
    basis = BasisSpec.standard(3)
    g = quadratic_objective(np.eye(3), np.array([1.0, 0.0, -1.0]))
    traj = run_scheme(CoeffVec([0.0, 0.0, 0.0], basis), constant_schedule(30, 1.0, 3), ProxFn.zero(), g, "exact")
    assert len(traj.iterates) == 31
    assert len(traj.losses) == 31
    assert not traj.diverged
    np.testing.assert_allclose(traj.final.coeffs, [-1.0, 0.0, 1.0], atol=1e-10)
    assert traj.gaps(-1.0)[-1] == pytest.approx(0.0, abs=1e-12)


def test_projected_scheme_starts_from_the_projection():
    basis = BasisSpec.standard(3)
    g = quadratic_objective(np.eye(3), np.zeros(3))
    traj = run_scheme(CoeffVec([1.0, 1.0, 1.0], basis), constant_schedule(2, 1.0, 2), ProxFn.zero(), g, "projected")
    assert traj.iterates[0].coeffs.tolist() == [1.0, 1.0, 0.0]
    assert all(x.coeffs[2] == 0.0 for x in traj.iterates)


def test_divergence_is_flagged():
    # declared Lipschitz bound far below the true curvature
    g = scalar_objective(lambda v: 50.0 * float(v @ v), 1, 1.0, gradient=lambda v: 100.0 * v)
    traj = run_scheme(CoeffVec([1.0], BasisSpec.standard(1)), constant_schedule(50, 1.0, 1), ProxFn.zero(), g, "exact")
    assert traj.diverged
    assert len(traj.iterates) < 51


def test_schedule_rank_above_iterate_rank():
    g = quadratic_objective(np.eye(2), np.zeros(2))
    with pytest.raises(ScheduleError):
        run_scheme(CoeffVec([1.0, 1.0], BasisSpec.standard(2)), constant_schedule(2, 1.0, 3), ProxFn.zero(), g, "approx")


def test_projected_matches_approx_at_full_rank():
    rng = np.random.default_rng(9)
    basis = BasisSpec.standard(4)
    g = quadratic_objective(_well_conditioned(rng, 4), rng.standard_normal(4))
    x0 = CoeffVec(rng.standard_normal(4), basis)
    report = deviation_report(x0, decay_schedule(8, 1.0, g.lipschitz, 4), ProxFn.box(-1.0, 1.0), g)
    assert report.approx_vs_projected == 0.0
    assert report.exact_vs_approx < 1e-3


@pytest.mark.parametrize("L", [6, 10, 14])
def test_projection_deviation_shrinks_with_depth(L):
    rng = np.random.default_rng(L)
    basis = BasisSpec.hermite(8)
    R = 4
    g = quadratic_objective(_well_conditioned(rng, 8), np.zeros(8))
    coeffs = np.zeros(8)
    coeffs[:R] = 0.1 * rng.standard_normal(R)
    report = deviation_report(CoeffVec(coeffs, basis), decay_schedule(L, 1.0, g.lipschitz, R), ProxFn.box(-0.2, 0.2), g)
    assert report.approx_vs_projected <= 2.0 ** (1 - L)


def test_fd_error_is_first_order_in_delta():
    g = ellipsoidal_objective(16, 0.5, seed=1)
    rows, slopes = fd_error_sweep(g, [1e-2, 1e-3, 1e-4], [4, 8], points=20, seed=1)
    assert len(rows) == 6
    assert all(0.8 <= s <= 1.2 for s in slopes.values())
    assert all(row.error <= row.bound for row in rows)
    assert rows[0].tail > rows[3].tail


def test_loss_gap_model_recovers_synthetic_constants():
    Ls = [2, 4, 8, 16, 32]
    gaps = [0.3 / L + 0.5 * 2.0 ** (1 - L) for L in Ls]
    c1, c2, r2 = fit_loss_gap_model(Ls, gaps)
    assert c1 == pytest.approx(0.3)
    assert c2 == pytest.approx(0.5)
    assert r2 == pytest.approx(1.0)


DELTAS = (1e-2, 1e-3, 1e-4)


def _delta_slope(errors):
    return float(np.polyfit(np.log10(DELTAS), np.log10(errors), 1)[0])


@pytest.mark.parametrize("prox", [ProxFn.zero(), ProxFn.quadratic(0.5)], ids=lambda f: f.label)
def test_divided_difference_step_error_is_first_order(prox):
    rng = np.random.default_rng(31)
    basis = BasisSpec.standard(4)
    g = quadratic_objective(_well_conditioned(rng, 4), rng.standard_normal(4))
    x = CoeffVec(rng.standard_normal(4), basis)
    lam = 0.9 / g.lipschitz
    exact = fb_step(x, prox, g, 1.0, lam)
    errors = [(approx_fb_step(x, prox, g, 1.0, lam, delta, 4) - exact).norm() for delta in DELTAS]
    assert 8.0 <= errors[0] / errors[1] <= 12.0
    assert 0.9 <= _delta_slope(errors) <= 1.1


def test_scheme_deviation_is_proportional_to_delta():
    rng = np.random.default_rng(32)
    basis = BasisSpec.standard(4)
    g = quadratic_objective(_well_conditioned(rng, 4), rng.standard_normal(4))
    x0 = CoeffVec(rng.standard_normal(4), basis)
    errors = [
        deviation_report(x0, constant_schedule(20, g.lipschitz, 4, delta=delta), ProxFn.zero(), g).exact_vs_approx
        for delta in DELTAS
    ]
    assert all(e > 0.0 for e in errors)
    assert 0.9 <= _delta_slope(errors) <= 1.1
    assert errors[1] / errors[0] == pytest.approx(0.1, rel=0.05)
