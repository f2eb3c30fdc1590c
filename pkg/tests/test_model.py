import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiekit.errors import DimensionError, InfeasibleError
from fiekit.model import (BoxSet, NoiseSampler, SystemModel, Trajectory, check_solution,
                          concat_trajectories, rollout, simulate)


def scalar_model(a=0.5, W=None):
    return SystemModel(1, 1, 1, 1, f=lambda x, w, t: a * x + w, h=lambda x, w, t: x,
                       phi=lambda x: x, W=W)


def identity_model(n=2):
    return SystemModel(n, n, n, 1, f=lambda x, w, t: x, h=lambda x, w, t: x, phi=lambda x: x[:1])


def test_boxset_membership_and_projection():
    box = BoxSet([-1.0, -np.inf], [1.0, 2.0])
    assert box.contains([0.5, -1e9])
    assert not box.contains([1.5, 0.0])
    np.testing.assert_array_equal(box.project([3.0, 5.0]), [1.0, 2.0])
    np.testing.assert_array_equal(box.violation([3.0, 0.0]), [2.0, 0.0])
    assert BoxSet.unbounded(3).is_unbounded


def test_boxset_rejects_crossed_bounds():
    with pytest.raises((InfeasibleError, ValueError)):
        BoxSet([1.0], [0.0])


def test_rollout_identity_dynamics_is_constant():
    x0 = np.array([0.3, -2.0])
    tr = rollout(identity_model(), x0, np.zeros((3, 2)))
    assert tr.T == 3
    np.testing.assert_array_equal(tr.x, np.tile(x0, (4, 1)))


def test_rollout_halving_recursion():
    tr = rollout(scalar_model(), np.array([1.0]), np.zeros((3, 1)))
    np.testing.assert_array_equal(tr.x[:, 0], [1.0, 0.5, 0.25, 0.125])
    np.testing.assert_array_equal(tr.z[:, 0], tr.x[:, 0])


def test_rollout_empty_horizon():
    tr = rollout(scalar_model(), np.array([2.0]), np.zeros((0, 1)))
    assert tr.T == 0 and tr.x.shape == (1, 1) and tr.w.shape == (0, 1) and tr.y.shape == (0, 1)
    assert tr.z[0, 0] == 2.0


def test_rollout_dimension_errors():
    with pytest.raises(DimensionError):
        rollout(scalar_model(), np.array([1.0, 2.0]), np.zeros((2, 1)))
    with pytest.raises(DimensionError):
        rollout(scalar_model(), np.array([1.0]), np.zeros((2, 3)))


def test_check_solution_accepts_rollout_and_flags_defects():
    m = scalar_model(W=BoxSet.symmetric([0.1]))
    w = np.array([[0.05], [-0.02], [0.0]])
    tr = rollout(m, np.array([1.0]), w)
    rep = check_solution(m, tr, tol=0.0)
    assert rep.is_solution and rep.max_defect == 0.0

    x = tr.x.copy()
    x[2] += 1.0
    bad = check_solution(m, Trajectory(0, x, tr.w, tr.y, tr.z))
    assert not bad.is_solution and bad.max_defect >= 1.0 - 1e-12

    w_out = w.copy()
    w_out[1] = 0.5
    tr2 = rollout(m, np.array([1.0]), w_out)
    rep2 = check_solution(m, tr2)
    assert not rep2.is_solution
    assert ("W", 1) in [(s, k) for s, k, _ in rep2.constraint_violations]


def test_simulate_zero_width_noise_matches_rollout():
    m = scalar_model()
    tr = simulate(m, np.array([1.0]), NoiseSampler(BoxSet.symmetric([0.0]), 3), None, 5)
    ref = rollout(m, np.array([1.0]), np.zeros((5, 1)))
    np.testing.assert_array_equal(tr.x, ref.x)


def test_simulate_is_seeded():
    m = scalar_model()
    box = BoxSet.symmetric([0.3])
    a = simulate(m, np.array([1.0]), NoiseSampler(box, 11), None, 20)
    b = simulate(m, np.array([1.0]), NoiseSampler(box, 11), None, 20)
    np.testing.assert_array_equal(a.x, b.x)
    assert np.all(np.abs(a.w) <= 0.3)


def test_simulate_sampler_dimension_mismatch():
    with pytest.raises(DimensionError):
        simulate(scalar_model(), np.array([1.0]), NoiseSampler(BoxSet.symmetric([0.1, 0.1]), 0), None, 2)


def test_sampler_needs_bounded_box():
    with pytest.raises(InfeasibleError):
        NoiseSampler(BoxSet.unbounded(2), 0)


def test_trajectory_csv_roundtrip():
    m = scalar_model()
    tr = rollout(m, np.array([1.0]), np.array([[0.1], [0.2]]))
    text = tr.to_csv()
    lines = text.split("\n")
    assert lines[0] == "t,x_0,w_0,y_0,z_0"
    assert lines[3] == "2,0.5,,,0.5"  # final row leaves w and y empty
    back = Trajectory.from_csv(io.StringIO(text))
    np.testing.assert_array_equal(back.x, tr.x)
    np.testing.assert_array_equal(back.w, tr.w)


def test_model_evaluations_are_repeatable():
    m = scalar_model()
    assert m.step(np.array([0.3]), np.array([0.1]), 0) == m.step(np.array([0.3]), np.array([0.1]), 0)


def test_finite_difference_jacobians_without_analytic_ones():
    m = SystemModel(2, 1, 1, 1, f=lambda x, w, t: np.array([x[0] * x[1], np.sin(x[0]) + w[0]]),
                    h=lambda x, w, t: np.array([x[0] ** 2]), phi=lambda x: x[:1])
    x = np.array([0.7, -1.2])
    A, G = m.linearize_dynamics(x, np.zeros(1), 0)
    np.testing.assert_allclose(A, [[x[1], x[0]], [np.cos(x[0]), 0.0]], atol=1e-6)
    np.testing.assert_allclose(G, [[0.0], [1.0]], atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 2 ** 32 - 1))
def test_rollout_composition(t1, t2, seed):
    rng = np.random.default_rng(seed)
    m = SystemModel(2, 2, 1, 1, f=lambda x, w, t: np.array([np.cos(x[1]) + w[0], 0.9 * x[0] + 0.01 * t + w[1]]),
                    h=lambda x, w, t: x[:1], phi=lambda x: x[1:])
    x0 = rng.standard_normal(2)
    w = rng.standard_normal((t1 + t2, 2))
    full = rollout(m, x0, w, 3)
    first = rollout(m, x0, w[:t1], 3)
    second = rollout(m, first.x[-1], w[t1:], 3 + t1)
    joined = concat_trajectories(first, second)
    np.testing.assert_array_equal(joined.x, full.x)
    np.testing.assert_array_equal(joined.z, full.z)
    assert check_solution(m, full, 0.0).is_solution
