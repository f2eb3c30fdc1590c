import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiekit.errors import DimensionError
from fiekit.fie import (FieConfig, GeneralObjective, KFunction, PriorData, QuadraticObjective, SolverSettings,
                        eval_objective, objective_gradient, records_to_csv, run_fie_sequence, solve_fie)
from fiekit.lyapunov import LinearSystem
from fiekit.model import BoxSet, SystemModel, rollout

from oracles import central_difference, fie_least_squares, random_linear_system, random_spd


def scalar_prior(T=1):
    return PriorData(0, np.zeros(1), np.zeros((T, 1)), np.zeros((T, 1)))


def test_objective_zero_at_prior():
    cfg = FieConfig(QuadraticObjective(np.eye(2), np.eye(1), np.eye(1)), 0.9)
    prior = PriorData(0, [1.0, 2.0], np.ones((3, 1)), np.full((3, 1), 4.0))
    assert eval_objective(cfg, prior.x_bar, prior.w_bar, prior.y_bar, prior, 3) == 0.0


def test_quadratic_objective_hand_value():
    cfg = FieConfig(QuadraticObjective([[1.0]], [[1.0]], [[1.0]]), 0.5)
    val = eval_objective(cfg, [1.0], [[1.0]], [[2.0]], scalar_prior(), 1)
    assert val == pytest.approx(11.0, rel=1e-14)


def test_general_objective_hand_value():
    cfg = FieConfig(GeneralObjective(KFunction.quadratic(), KFunction.quadratic(), KFunction.quadratic()), 0.5)
    val = eval_objective(cfg, [1.0], [[1.0]], [[2.0]], scalar_prior(), 1)
    assert val == pytest.approx(22.0, rel=1e-14)


def test_objective_shift_invariance_in_t0():
    cfg = FieConfig(QuadraticObjective([[2.0]], [[1.0]], [[3.0]]), 0.7)
    a = eval_objective(cfg, [1.0], [[0.5], [1.0]], [[2.0], [0.0]], scalar_prior(2), 2)
    pb = PriorData(5, np.zeros(1), np.zeros((2, 1)), np.zeros((2, 1)))
    b = eval_objective(cfg, [1.0], [[0.5], [1.0]], [[2.0], [0.0]], pb, 7)
    assert a == b


def test_objective_length_mismatch():
    cfg = FieConfig(QuadraticObjective([[1.0]], [[1.0]], [[1.0]]), 0.5)
    with pytest.raises(DimensionError):
        eval_objective(cfg, [0.0], np.zeros((2, 1)), np.zeros((2, 1)), scalar_prior(1), 1)


def test_config_validation():
    with pytest.raises(ValueError):
        FieConfig(QuadraticObjective([[1.0]], [[1.0]], [[1.0]]), 1.0)
    with pytest.raises(ValueError):
        QuadraticObjective([[1.0, 2.0], [2.0, 1.0]], [[1.0]], [[1.0]])
    with pytest.raises(ValueError):
        QuadraticObjective([[1.0, 0.5], [0.0, 1.0]], [[1.0]], [[1.0]])


def test_kfunction_class_k():
    assert KFunction.quadratic(2.0).check_class_k()
    assert KFunction.power(1.0, 1.5).check_class_k()
    assert not KFunction.custom(lambda s: 1.0 + s).check_class_k()
    assert KFunction.custom(lambda s: s / (1.0 + s)).check_class_k()
    with pytest.raises(ValueError):
        KFunction.power(1.0, 0.5)


def _linear_case(rng, n_x=3, n_w=2, n_y=2, T=8):
    sys_ = random_linear_system(rng, n_x, n_w, n_y, 1, radius=0.95)
    x0 = rng.standard_normal(n_x)
    w = 0.1 * rng.standard_normal((T, n_w))
    tr = rollout(sys_.to_model(), x0, w)
    return sys_, x0, w, tr


def test_noise_free_exact_prior_recovers_truth():
    rng = np.random.default_rng(4)
    sys_, x0, _, tr = _linear_case(rng)
    T = tr.T
    tr = rollout(sys_.to_model(), x0, np.zeros((T, 2)))
    cfg = FieConfig(QuadraticObjective(np.eye(3), np.eye(2), np.eye(2)), 0.9)
    rec = solve_fie(sys_.to_model(), cfg, PriorData(0, x0, np.zeros((T, 2)), tr.y), T)
    assert abs(rec.z_hat[0] - tr.z[-1, 0]) <= 1e-9
    assert rec.objective_value <= 1e-18
    assert rec.solver_stats.converged


@pytest.mark.parametrize("eta", [0.5, 0.9, 0.99])
def test_matches_least_squares_oracle(eta):
    rng = np.random.default_rng(int(eta * 100))
    sys_, x0, _, tr = _linear_case(rng, 4, 2, 2, 12)
    P, Q, R = random_spd(rng, 4), random_spd(rng, 2), random_spd(rng, 2)
    x_bar = x0 + rng.standard_normal(4)
    w_bar = np.zeros((12, 2))
    cfg = FieConfig(QuadraticObjective(P, Q, R), eta)
    rec = solve_fie(sys_.to_model(), cfg, PriorData(0, x_bar, w_bar, tr.y), 12)
    _, z_ref = fie_least_squares(sys_, P, Q, R, eta, x_bar, w_bar, tr.y)
    assert abs(rec.z_hat[0] - z_ref[0]) <= 1e-6 * max(1.0, abs(z_ref[0]))


def test_optimal_value_below_truth_value():
    rng = np.random.default_rng(9)
    sys_, x0, w, tr = _linear_case(rng)
    W = BoxSet.symmetric(np.full(2, 0.5))
    model = sys_.to_model(W=W)
    cfg = FieConfig(QuadraticObjective(np.eye(3), np.eye(2), np.eye(2)), 0.9)
    y_bar = tr.y + 0.05 * rng.standard_normal(tr.y.shape)
    prior = PriorData(0, x0 + 0.3, np.zeros_like(w), y_bar)
    rec = solve_fie(model, cfg, prior, tr.T)
    truth_val = eval_objective(cfg, x0, w, tr.y, prior, tr.T)
    assert rec.objective_value <= truth_val + 1e-9
    assert np.all(np.abs(rec.w_hat_seq) <= 0.5 + 1e-12)


def test_active_noise_box_is_respected_and_optimal():
    # with one step the noise only enters its own prior term: the optimum is the clipped prior
    model = SystemModel(1, 1, 1, 1, f=lambda x, w, t: x + w, h=lambda x, w, t: x,
                        phi=lambda x: x, W=BoxSet.symmetric([1.0]),
                        jac_f=lambda x, w, t: (np.eye(1), np.eye(1)), jac_h=lambda x, w, t: (np.eye(1), np.zeros((1, 1))))
    cfg = FieConfig(QuadraticObjective([[1e6]], [[1.0]], [[1.0]]), 0.9)
    prior = PriorData(0, [0.0], [[2.0]], [[0.0]])
    rec = solve_fie(model, cfg, prior, 1)
    assert rec.w_hat_seq[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert rec.solver_stats.converged


def test_state_box_enforced_by_penalty():
    model = SystemModel(1, 1, 1, 1, f=lambda x, w, t: x + w, h=lambda x, w, t: x, phi=lambda x: x,
                        X=BoxSet([-10.0], [1.0]))
    cfg = FieConfig(QuadraticObjective([[1.0]], [[1.0]], [[1.0]]), 0.9)
    prior = PriorData(0, [0.0], np.zeros((3, 1)), np.full((3, 1), 5.0))
    rec = solve_fie(model, cfg, prior, 3)
    assert rec.solver_stats.max_violation <= 1e-8
    assert np.all(rec.x_hat_seq <= 1.0 + 1e-8)


def test_general_objective_uses_gradient_method():
    model = SystemModel(1, 1, 1, 1, f=lambda x, w, t: 0.8 * x + w, h=lambda x, w, t: x, phi=lambda x: x)
    obj = GeneralObjective(KFunction.power(1.0, 1.5), KFunction.power(1.0, 1.5), KFunction.quadratic())
    cfg = FieConfig(obj, 0.9, SolverSettings(max_iter=500))
    prior = PriorData(0, [1.0], np.zeros((4, 1)), np.array([[0.5], [0.2], [0.1], [0.0]]))
    rec = solve_fie(model, cfg, prior, 4)
    assert rec.solver_stats.method == "gradient"
    start = eval_objective(cfg, prior.x_bar, prior.w_bar, [[1.0], [0.8], [0.64], [0.512]], prior, 4)
    assert rec.objective_value < start


def test_quadratic_general_objective_routes_to_lm():
    model = SystemModel(1, 1, 1, 1, f=lambda x, w, t: 0.8 * x + w, h=lambda x, w, t: x, phi=lambda x: x)
    cfg = FieConfig(GeneralObjective(), 0.9)
    prior = PriorData(0, [1.0], np.zeros((3, 1)), np.ones((3, 1)))
    rec = solve_fie(model, cfg, prior, 3)
    assert rec.solver_stats.method == "lm"


def _nonlinear_model():
    def f(x, w, t):
        return np.array([x[0] + 0.1 * np.sin(x[1]) + w[0], 0.9 * x[1] + 0.05 * x[0] ** 2 + w[1]])

    def h(x, w, t):
        return np.array([np.tanh(x[0]) + x[1] * x[0] + w[1]])

    return SystemModel(2, 2, 1, 1, f, h, phi=lambda x: x[:1] + x[1:])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8))
def test_gradient_matches_finite_differences(seed, T):
    rng = np.random.default_rng(seed)
    model = _nonlinear_model()
    cfg = FieConfig(QuadraticObjective(random_spd(rng, 2), random_spd(rng, 2), random_spd(rng, 1)), 0.8)
    prior = PriorData(0, rng.standard_normal(2), 0.1 * rng.standard_normal((T, 2)), rng.standard_normal((T, 1)))
    v = np.concatenate([rng.standard_normal(2), 0.1 * rng.standard_normal(2 * T)])

    def value(u):
        return objective_gradient(model, cfg, prior, T, u[:2], u[2:].reshape(T, 2))[0]

    _, gx, gw = objective_gradient(model, cfg, prior, T, v[:2], v[2:].reshape(T, 2))
    g = np.concatenate([gx, gw.ravel()])
    fd = central_difference(value, v)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


def test_sequence_requires_measurements():
    model = _nonlinear_model()
    cfg = FieConfig(QuadraticObjective(np.eye(2), np.eye(2), np.eye(1)), 0.9)
    with pytest.raises(ValueError):
        run_fie_sequence(model, cfg, np.zeros(2), np.zeros((0, 1)))


def test_sequence_error_decays_on_contractive_system():
    model = SystemModel(1, 1, 1, 1, f=lambda x, w, t: 0.7 * x + w, h=lambda x, w, t: x, phi=lambda x: x)
    cfg = FieConfig(QuadraticObjective([[1.0]], [[1.0]], [[1.0]]), 0.9)
    tr = rollout(model, np.array([0.0]), np.zeros((15, 1)))
    recs = run_fie_sequence(model, cfg, np.array([3.0]), tr.y)
    err = np.array([abs(r.z_hat[0] - tr.z[r.t, 0]) for r in recs])
    assert len(recs) == 15 and [r.t for r in recs] == list(range(1, 16))
    assert np.all(np.diff(err[2:]) <= 1e-15)
    assert err[-1] < 1e-3 * err[0]


def test_records_csv_columns():
    model = SystemModel(1, 1, 1, 1, f=lambda x, w, t: 0.7 * x + w, h=lambda x, w, t: x, phi=lambda x: x)
    cfg = FieConfig(QuadraticObjective([[1.0]], [[1.0]], [[1.0]]), 0.9)
    recs = run_fie_sequence(model, cfg, np.array([1.0]), np.zeros((3, 1)))
    text = records_to_csv(recs)
    head, first = text.split("\n")[:2]
    assert head == "source,t,z_hat_0,objective,iterations,converged,wall_time_ms"
    assert first.startswith("fie,1,")
