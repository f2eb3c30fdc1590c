import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiekit import powersys as ps
from fiekit.errors import ConfigError
from fiekit.model import check_solution, rollout


def test_default_sizes():
    m = ps.build_discrete_model()
    assert (m.n_x, m.n_y, m.n_z, m.n_w) == (16, 8, 1, 24)
    p = ps.PowerSystemParams()
    assert p.edges == ((1, 2), (2, 3), (3, 4), (4, 1))


def test_branch_flow_values():
    p = ps.PowerSystemParams()
    assert np.all(ps.branch_flow(p, np.full(4, 0.3)) == 0)
    f = ps.branch_flow(p, np.array([np.pi / 2, 0, 0, 0]))
    assert f[0] == pytest.approx(3.0, rel=1e-15)


def test_flow_antisymmetry():
    theta = np.array([0.2, -0.1, 0.4, 0.0])
    a = ps.PowerSystemParams(edges=((1, 2), (2, 3), (3, 4), (4, 1)))
    b = ps.PowerSystemParams(edges=((2, 1), (2, 3), (3, 4), (4, 1)))
    assert ps.branch_flow(b, theta)[0] == -ps.branch_flow(a, theta)[0]
    np.testing.assert_allclose(ps.power_outflow(a, theta), ps.power_outflow(b, theta), rtol=0, atol=1e-15)


def test_two_bus_outflow():
    p = ps.PowerSystemParams(n_buses=2, edges=((1, 2),))
    flow = ps.branch_flow(p, np.array([0.3, -0.2]))[0]
    np.testing.assert_array_equal(ps.power_outflow(p, np.array([0.3, -0.2])), [flow, -flow])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_outflow_conserves_power(theta):
    assert abs(np.sum(ps.power_outflow(ps.PowerSystemParams(), np.array(theta)))) <= 1e-12


def test_rhs_examples():
    p = ps.PowerSystemParams()
    np.testing.assert_array_equal(ps.continuous_rhs(p, np.zeros(16)), np.zeros(16))
    one = ps.PowerSystemParams(n_buses=1, edges=(), M=2.0, D=1.0)
    assert ps.continuous_rhs(one, np.array([0.0, 1.0, 0.0, 0.0]))[1] == -0.5


def test_steady_state_is_fixed_point():
    p = ps.PowerSystemParams(M=(1.0, 2.0, 3.0, 4.0), x_line=(0.5, 1.0, 1.5, 2.0))
    x = ps.steady_state(p, [0.1, -0.05, 0.2, 0.0], [1.0, 0.7, 1.2, 0.9])
    rhs = ps.continuous_rhs(p, x)
    assert np.max(np.abs(rhs)) <= 1e-15
    tr = rollout(ps.build_discrete_model(p), x, np.zeros((10, 24)))
    assert np.max(np.abs(tr.x - x)) <= 1e-14
    assert np.all(tr.z == tr.z[0])


def test_euler_step_definition():
    p = ps.PowerSystemParams()
    m = ps.build_discrete_model(p)
    x = np.random.default_rng(0).uniform(-1, 1, 16)
    np.testing.assert_array_equal(m.step(x, np.zeros(24), 0), x + p.dt * ps.continuous_rhs(p, x))


def test_noise_within_bounds_and_solution_check():
    p = ps.PowerSystemParams()
    model, tr, x_bar = ps.simulate_run(p, 3, 50)
    assert np.max(np.abs(tr.w[:, :16])) <= 5e-3 and np.max(np.abs(tr.w[:, 16:])) <= 5e-2
    assert check_solution(model, tr, 0.0).is_solution
    assert np.max(np.abs(x_bar[8:12] - tr.x[0, 8:12])) <= 0.5
    np.testing.assert_array_equal(np.delete(x_bar, range(8, 12)), np.delete(tr.x[0], range(8, 12)))


def test_simulation_is_deterministic():
    a = ps.simulate_run(ps.PowerSystemParams(), 4, 20)[1]
    b = ps.simulate_run(ps.PowerSystemParams(), 4, 20)[1]
    np.testing.assert_array_equal(a.x, b.x)


def test_analytic_jacobian_matches_differences():
    m = ps.build_discrete_model()
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 16)
    w = rng.uniform(-1e-3, 1e-3, 24)
    A, G = m.linearize_dynamics(x, w, 0)
    h = 1e-6
    A_fd = np.column_stack([(m.step(x + h * e, w, 0) - m.step(x - h * e, w, 0)) / (2 * h) for e in np.eye(16)])
    np.testing.assert_allclose(A, A_fd, atol=1e-9)


def test_curvature_matches_differences():
    m = ps.build_discrete_model(ps.PowerSystemParams(M=(1.0, 2.0, 0.5, 1.0)))
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, 16)
    lam = rng.standard_normal(16)
    w = np.zeros(24)
    H = m.dynamics_curvature(x, w, 0, lam)
    h = 1e-5

    def grad(v):
        return m.linearize_dynamics(v, w, 0)[0].T @ lam

    H_fd = np.column_stack([(grad(x + h * e) - grad(x - h * e)) / (2 * h) for e in np.eye(16)])
    np.testing.assert_allclose(H, H_fd, atol=1e-8)
    np.testing.assert_allclose(H, H.T, atol=0)


def test_detectability_probe():
    rep = ps.detectability_probe()
    assert rep.output_gap <= 1e-10
    assert rep.load_gap >= 0.1 and rep.state_gap >= 0.1
    assert rep.deadbeat_error <= 1e-9
    same = ps.detectability_probe(x_a=rep.x_a, x_b=rep.x_a)
    assert same.output_gap == 0 and same.functional_gap == 0


@pytest.mark.parametrize("bad, field", [
    ({"edges": [[1, 5]]}, "edges[0]"),
    ({"M": [1.0, -1.0, 1.0, 1.0]}, "M"),
    ({"dt": 0}, "dt"),
    ({"colour": 1}, "colour"),
])
def test_param_validation(bad, field):
    with pytest.raises(ConfigError) as exc:
        ps.PowerSystemParams.from_dict(bad)
    assert exc.value.field == field


def test_params_json_roundtrip():
    p = ps.PowerSystemParams(M=(1.0, 2.0, 3.0, 4.0))
    import json
    assert ps.PowerSystemParams.from_json(json.dumps(p.to_dict())) == p
