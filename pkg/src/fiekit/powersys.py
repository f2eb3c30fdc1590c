"""Four-bus swing-equation benchmark.

State ``x = [theta, omega, P_load, P_mech]`` (``n_x = 4 N``), Euler-discretised
with additive process noise; measurements ``y = [omega, P_mech] + w_y``; the
functional of interest is the total load ``z = sum(P_load)``.

Bus indices in configuration files are 1-based.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigError
from .model import BoxSet, NoiseSampler, SystemModel, rollout, simulate


@dataclass(frozen=True)
class PowerSystemParams:
    """Physical constants of the benchmark.

    The per-bus and per-line defaults (all ones) are placeholders; override
    them from JSON when reproducing a specific grid.
    """

    n_buses: int = 4
    edges: Optional[tuple] = None
    M: Optional[tuple] = None
    D: Optional[tuple] = None
    V: Optional[tuple] = None
    x_line: Optional[tuple] = None
    dt: float = 0.01
    wx_bound: float = 5e-3
    wy_bound: float = 5e-2

    def __post_init__(self):
        n = self.n_buses
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
            raise ConfigError("n_buses", "must be a positive integer")
        edges = self.edges
        if edges is None:
            edges = tuple((i + 1, (i + 1) % n + 1) for i in range(n)) if n > 1 else ()
        if not isinstance(edges, (list, tuple)):
            raise ConfigError("edges", "must be a list of [i, j] pairs")
        checked = []
        for k, e in enumerate(edges):
            if (not isinstance(e, (list, tuple)) or len(e) != 2
                    or not all(isinstance(v, (int, np.integer)) and not isinstance(v, bool) for v in e)):
                raise ConfigError(f"edges[{k}]", f"must be a pair of integer bus indices, got {e!r}")
            if not all(1 <= v <= n for v in e) or e[0] == e[1]:
                raise ConfigError(f"edges[{k}]", f"invalid edge {list(e)} for {n} buses (1-based)")
            checked.append((int(e[0]), int(e[1])))
        object.__setattr__(self, "edges", tuple(checked))
        specs = (("M", n, "positive"), ("D", n, "non-negative"), ("V", n, "positive"),
                 ("x_line", len(checked), "positive"))
        for name, size, rule in specs:
            raw = getattr(self, name)
            try:
                vals = np.broadcast_to(np.asarray(1.0 if raw is None else raw, dtype=float), (size,))
            except (ValueError, TypeError):
                raise ConfigError(name, f"needs {size} numeric entries") from None
            bad = (vals < 0) if rule == "non-negative" else (vals <= 0)
            if np.any(bad) or not np.all(np.isfinite(vals)):
                raise ConfigError(name, f"entries must be finite and {rule}")
            object.__setattr__(self, name, tuple(float(v) for v in vals))
        for name in ("dt", "wx_bound", "wy_bound"):
            try:
                v = float(getattr(self, name))
            except (TypeError, ValueError):
                raise ConfigError(name, "must be a number") from None
            if not np.isfinite(v) or not (v > 0 if name == "dt" else v >= 0):
                raise ConfigError(name, "must be positive" if name == "dt" else "must be non-negative")
            object.__setattr__(self, name, v)

    @property
    def n_x(self):
        return 4 * self.n_buses

    @property
    def n_y(self):
        return 2 * self.n_buses

    @property
    def n_w(self):
        return self.n_x + self.n_y

    def arrays(self):
        """``(src, dst, coef, M, D)`` in the layout the kernels expect."""
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2) - 1
        V = np.asarray(self.V)
        coef = 3.0 * V[e[:, 0]] * V[e[:, 1]] / np.asarray(self.x_line)
        return (np.ascontiguousarray(e[:, 0]), np.ascontiguousarray(e[:, 1]), coef,
                np.asarray(self.M, dtype=float), np.asarray(self.D, dtype=float))

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("params", "must be a JSON object")
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown power system parameter")
        return cls(**d)

    @classmethod
    def from_json(cls, path_or_text):
        text = path_or_text
        if not str(path_or_text).lstrip().startswith("{"):
            with open(path_or_text, encoding="utf-8") as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        d = asdict(self)
        d["edges"] = [list(e) for e in self.edges]
        for k in ("M", "D", "V", "x_line"):
            d[k] = list(d[k])
        return d


def branch_flow(params: PowerSystemParams, theta) -> np.ndarray:
    """Line flows ``3 |V_i||V_j| / x_ij * sin(theta_i - theta_j)`` in edge order."""
    src, dst, coef, _, _ = params.arrays()
    theta = np.asarray(theta, dtype=float)
    return coef * np.sin(theta[src] - theta[dst])


def power_outflow(params: PowerSystemParams, theta) -> np.ndarray:
    src, dst, coef, _, _ = params.arrays()
    return kernels.power_outflow(np.ascontiguousarray(theta, dtype=float), src, dst, coef)


def continuous_rhs(params: PowerSystemParams, x) -> np.ndarray:
    src, dst, coef, M, D = params.arrays()
    return kernels.power_rhs(np.ascontiguousarray(x, dtype=float), src, dst, coef, M, D)


def build_discrete_model(params: PowerSystemParams = PowerSystemParams()) -> SystemModel:
    """Euler-discretised model with noise ``w = [w_x, w_y]`` bounded in the infinity norm."""
    src, dst, coef, M, Dmp = params.arrays()
    n = params.n_buses
    nx, ny, nw = params.n_x, params.n_y, params.n_w
    dt = params.dt
    G = np.hstack([np.eye(nx), np.zeros((nx, ny))])
    C = np.zeros((ny, nx))
    C[:n, n:2 * n] = np.eye(n)
    C[n:, 3 * n:] = np.eye(n)
    Dout = np.hstack([np.zeros((ny, nx)), np.eye(ny)])
    for arr in (G, C, Dout):
        arr.setflags(write=False)

    def f(x, w, t):
        return kernels.power_step(np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(w, dtype=float),
                                  dt, src, dst, coef, M, Dmp)

    def h(x, w, t):
        return C @ x + w[nx:]

    def phi(x):
        return np.array([np.sum(x[2 * n:3 * n])])

    def jac_f(x, w, t):
        return kernels.power_step_jacobian(np.ascontiguousarray(x, dtype=float), dt, src, dst, coef, M, Dmp), G

    def jac_h(x, w, t):
        return C, Dout

    def hess_f(x, w, t, lam):
        return kernels.power_curvature(np.ascontiguousarray(x, dtype=float),
                                       np.ascontiguousarray(lam, dtype=float), dt, src, dst, coef, M)

    W = BoxSet.symmetric(np.concatenate([np.full(nx, params.wx_bound), np.full(ny, params.wy_bound)]))
    return SystemModel(nx, nw, ny, 1, f, h, phi, X=None, W=W, jac_f=jac_f, jac_h=jac_h,
                       hess_f=hess_f, name="powersys")


def noise_samplers(params: PowerSystemParams, seed: int, noise: bool = True):
    """Independent uniform samplers for process and measurement noise."""
    scale = 1.0 if noise else 0.0
    ss = np.random.SeedSequence(seed)
    sx, sy = ss.spawn(2)
    return (NoiseSampler(BoxSet.symmetric(np.full(params.n_x, scale * params.wx_bound)),
                         int(sx.generate_state(1)[0])),
            NoiseSampler(BoxSet.symmetric(np.full(params.n_y, scale * params.wy_bound)),
                         int(sy.generate_state(1)[0])))


def steady_state(params: PowerSystemParams, theta, p_load) -> np.ndarray:
    """Equilibrium with ``omega = 0`` and ``P_mech = P_load + dP(theta)``."""
    theta = np.asarray(theta, dtype=float)
    p_load = np.asarray(p_load, dtype=float)
    return np.concatenate([theta, np.zeros(params.n_buses), p_load,
                           p_load + power_outflow(params, theta)])


def default_initial_state(params: PowerSystemParams, rng) -> np.ndarray:
    n = params.n_buses
    p_load = rng.uniform(0.5, 1.5, n)
    theta = rng.uniform(-0.1, 0.1, n)
    return steady_state(params, theta, p_load)


def default_prior(params: PowerSystemParams, x0, rng, load_perturbation: float = 0.5) -> np.ndarray:
    """True state with the loads perturbed uniformly by up to ``load_perturbation``."""
    n = params.n_buses
    x_bar = np.array(x0, dtype=float)
    x_bar[2 * n:3 * n] += rng.uniform(-load_perturbation, load_perturbation, n)
    return x_bar


def default_fie_weights(params: PowerSystemParams, prior_std=(10.0, 10.0, 10.0, 10.0)):
    """Inverse-covariance weights for the quadratic FIE objective.

    Noise variances follow from the uniform bounds (``b^2 / 3``); ``prior_std``
    gives the prior standard deviation per block (theta, omega, load, mech).
    The wide default lets the data override the prior quickly: a constant
    frequency disturbance and a load offset look alike over short windows,
    so a tight load prior slows convergence of the total-load estimate.
    """
    n = params.n_buses
    var_x = params.wx_bound ** 2 / 3.0
    var_y = params.wy_bound ** 2 / 3.0
    P = np.diag(np.repeat(1.0 / np.square(prior_std), n))
    Q = np.diag(np.concatenate([np.full(params.n_x, 1.0 / var_x), np.full(params.n_y, 1.0 / var_y)]))
    R = np.diag(np.full(params.n_y, 1.0 / var_y))
    return P, Q, R


@dataclass(frozen=True)
class ProbeReport:
    output_gap: float
    functional_gap: float
    state_gap: float
    load_gap: float
    deadbeat_error: float
    x_a: np.ndarray = field(repr=False)
    x_b: np.ndarray = field(repr=False)


def detectability_probe(params: PowerSystemParams = PowerSystemParams(), seed: int = 0, steps: int = 50,
                        x_a: Optional[np.ndarray] = None, x_b: Optional[np.ndarray] = None) -> ProbeReport:
    """Two steady states with equal measured outputs but different angles and loads.

    Both are simulated noise-free for ``steps`` steps. ``output_gap`` is the
    largest output difference, ``functional_gap`` the largest total-load
    difference, ``state_gap``/``load_gap`` the largest state/per-bus-load
    difference, and ``deadbeat_error`` the worst deadbeat reconstruction error
    over both trajectories.
    """
    from .estimators import build_deadbeat_matrices, deadbeat_sequence

    model = build_discrete_model(params)
    n = params.n_buses
    if x_a is None or x_b is None:
        rng = np.random.default_rng(seed)
        theta_a = rng.uniform(-0.2, 0.2, n)
        load_a = rng.uniform(0.5, 1.5, n)
        x_a = steady_state(params, theta_a, load_a)
        theta_b = theta_a + rng.uniform(-0.3, 0.3, n)
        load_b = x_a[3 * n:] - power_outflow(params, theta_b)
        x_b = np.concatenate([theta_b, np.zeros(n), load_b, x_a[3 * n:]])
    w = np.zeros((steps, model.n_w))
    ta = rollout(model, x_a, w)
    tb = rollout(model, x_b, w)
    mats = build_deadbeat_matrices(params)
    err = 0.0
    for tr in (ta, tb):
        est = deadbeat_sequence(mats, tr.y)
        err = max(err, float(np.max(np.abs(est[2:] - tr.z[2:steps + 1, 0]))) if steps >= 2 else 0.0)
    return ProbeReport(
        output_gap=float(np.max(np.abs(ta.y - tb.y))) if steps else 0.0,
        functional_gap=float(np.max(np.abs(ta.z - tb.z))),
        state_gap=float(np.max(np.abs(ta.x - tb.x))),
        load_gap=float(np.max(np.abs(ta.x[:, 2 * n:3 * n] - tb.x[:, 2 * n:3 * n]))),
        deadbeat_error=err, x_a=np.asarray(x_a), x_b=np.asarray(x_b))


def simulate_run(params: PowerSystemParams, seed: int, T: int, noise: bool = True,
                 load_perturbation: float = 0.5):
    """Seeded benchmark run: true trajectory and perturbed prior."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    x0 = default_initial_state(params, rng)
    x_bar = default_prior(params, x0, rng, load_perturbation)
    model = build_discrete_model(params)
    sx, sy = noise_samplers(params, seed, noise)
    traj = simulate(model, x0, sx, sy, T)
    return model, traj, x_bar
