"""Estimators other than FIE: linear functional observer, state-norm recursion
and the two-step deadbeat reconstruction of the total load."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .fie import KFunction
from .lyapunov import LinearFunctionalObserver


def run_linear_observer(obs: LinearFunctionalObserver, y_seq) -> np.ndarray:
    """Iterate ``xi+ = N xi + J y`` from ``obs.xi0``.

    Returns ``len(y_seq) + 1`` estimates ``P_xi xi_t`` (t = 0 included). With
    ``obs.J1`` set, ``J1 y_t`` is added wherever ``y_t`` is available.
    """
    y_seq = np.asarray(y_seq, dtype=float)
    if y_seq.size == 0:
        y_seq = np.zeros((0, obs.J.shape[1]))
    y_seq = y_seq.reshape(y_seq.shape[0], -1)
    if y_seq.shape[1] != obs.J.shape[1]:
        raise DimensionError(f"outputs have {y_seq.shape[1]} columns, J expects {obs.J.shape[1]}")
    n = y_seq.shape[0]
    xi = obs.xi0.copy()
    z = np.empty((n + 1, obs.P_xi.shape[0]))
    for t in range(n):
        z[t] = obs.P_xi @ xi
        if obs.J1 is not None:
            z[t] += obs.J1 @ y_seq[t]
        xi = obs.N @ xi + obs.J @ y_seq[t]
    z[n] = obs.P_xi @ xi
    return z


def observer_states(obs: LinearFunctionalObserver, y_seq) -> np.ndarray:
    """Internal states ``xi_0 .. xi_n`` of the observer recursion."""
    y_seq = np.asarray(y_seq, dtype=float).reshape(-1, obs.J.shape[1])
    xi = np.empty((y_seq.shape[0] + 1, obs.order))
    xi[0] = obs.xi0
    for t in range(y_seq.shape[0]):
        xi[t + 1] = obs.N @ xi[t] + obs.J @ y_seq[t]
    return xi


@dataclass(frozen=True)
class StateNormEstimatorConfig:
    """``z+ = epsilon z + rho1(|y|) + rho2(|w|)``."""

    epsilon: float = 0.5
    rho1: KFunction = field(default_factory=lambda: KFunction.power(1.0, 1.0))
    rho2: KFunction = field(default_factory=lambda: KFunction.power(1.0, 1.0))

    def __post_init__(self):
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError("epsilon must lie in [0, 1)")
        for name in ("rho1", "rho2"):
            if not getattr(self, name).check_class_k():
                raise ValueError(f"{name} must be zero at zero and increasing")


def state_norm_step(config: StateNormEstimatorConfig, z_hat: float, y_bar, w_bar) -> float:
    if z_hat < 0:
        raise ValueError("state-norm estimate must be non-negative")
    return (config.epsilon * z_hat + config.rho1(np.linalg.norm(y_bar))
            + config.rho2(np.linalg.norm(w_bar)))


def run_state_norm(config: StateNormEstimatorConfig, z0, y_seq, w_seq=None) -> np.ndarray:
    y_seq = np.atleast_2d(np.asarray(y_seq, dtype=float))
    if w_seq is None:
        w_seq = np.zeros((y_seq.shape[0], 1))
    out = [float(z0)]
    for y, w in zip(y_seq, np.atleast_2d(w_seq)):
        out.append(state_norm_step(config, out[-1], y, w))
    return np.array(out)


@dataclass(frozen=True)
class DeadbeatMatrices:
    """``z_t = C_y [y_{t-1}; y_{t-2}] + C_w [w_{t-1}; w_{t-2}]``."""

    C_y: np.ndarray
    C_w: np.ndarray

    @property
    def n_y(self):
        return self.C_y.shape[1] // 2

    @property
    def n_w(self):
        return self.C_w.shape[1] // 2


def build_deadbeat_matrices(params) -> DeadbeatMatrices:
    """Total-load reconstruction coefficients for the swing model.

    Summing the Euler frequency update over the buses cancels the line flows,
    which expresses ``z_{t-2}`` through ``y_{t-2}``, ``y_{t-1}`` and the noise;
    the load random walk then carries it two steps forward.
    """
    n = params.n_buses
    ny, nw, nx = params.n_y, params.n_w, params.n_x
    M = np.asarray(params.M)
    D = np.asarray(params.D)
    m = M / params.dt
    C_y = np.zeros((1, 2 * ny))
    C_w = np.zeros((1, 2 * nw))
    buses = np.arange(n)
    # y_{t-1}: frequency measurements
    C_y[0, buses] = -m
    # y_{t-2}: frequency and mechanical power measurements
    C_y[0, ny + buses] = m - D
    C_y[0, ny + n + buses] = 1.0
    # w_{t-1}: load process noise, frequency measurement noise
    C_w[0, 2 * n + buses] = 1.0
    C_w[0, nx + buses] = m
    # w_{t-2}: frequency process noise, load process noise, measurement noise
    C_w[0, nw + n + buses] = m
    C_w[0, nw + 2 * n + buses] = 1.0
    C_w[0, nw + nx + buses] = D - m
    C_w[0, nw + nx + n + buses] = -1.0
    return DeadbeatMatrices(C_y, C_w)


def deadbeat_estimate(mats: DeadbeatMatrices, y_prev, y_prev2) -> float:
    y_prev = np.asarray(y_prev, dtype=float).reshape(-1)
    y_prev2 = np.asarray(y_prev2, dtype=float).reshape(-1)
    if y_prev.size != mats.n_y or y_prev2.size != mats.n_y:
        raise DimensionError(f"outputs must have {mats.n_y} entries")
    return float(mats.C_y[0] @ np.concatenate([y_prev, y_prev2]))


def deadbeat_sequence(mats: DeadbeatMatrices, y_seq) -> np.ndarray:
    """Estimates for ``t = 0 .. len(y_seq)``; NaN until two outputs exist."""
    y_seq = np.asarray(y_seq, dtype=float).reshape(-1, mats.n_y)
    n = y_seq.shape[0]
    out = np.full(n + 1, np.nan)
    if n >= 2:
        stacked = np.hstack([y_seq[1:], y_seq[:-1]])
        out[2:] = stacked @ mats.C_y[0]
    return out


def deadbeat_residual(mats: DeadbeatMatrices, z_seq, y_seq, w_seq) -> np.ndarray:
    """``z_t - C_y[y_{t-1}; y_{t-2}] - C_w[w_{t-1}; w_{t-2}]`` for ``t >= 2``."""
    z = np.asarray(z_seq, dtype=float).reshape(-1)
    y = np.asarray(y_seq, dtype=float).reshape(-1, mats.n_y)
    w = np.asarray(w_seq, dtype=float).reshape(-1, mats.n_w)
    Y = np.hstack([y[1:], y[:-1]])
    Wn = np.hstack([w[1:], w[:-1]])
    n = Y.shape[0]
    return z[2:2 + n] - Y @ mats.C_y[0] - Wn @ mats.C_w[0]


def deadbeat_error_bound(mats: DeadbeatMatrices, w_bound) -> float:
    """Worst-case deadbeat error when every noise entry lies in ``[-w_bound, w_bound]``."""
    b = np.broadcast_to(np.asarray(w_bound, dtype=float), (mats.n_w,))
    return float(np.abs(mats.C_w[0]) @ np.concatenate([b, b]))


def estimates_to_csv(rows, path_or_buf=None, source="fie", truth=None):
    """Write ``source, t, z_hat_*, objective, iterations, converged, wall_time_ms``.

    ``rows`` yields ``(t, z_hat, objective, iterations, converged, wall_time_ms)``;
    any of the last four may be ``None`` and is written empty. With ``truth``
    (row ``t`` holds ``z_t``) the columns ``z_true_*`` and ``abs_error`` (the
    largest component error) are appended.
    """
    rows = list(rows)
    n_z = max((np.size(r[1]) for r in rows), default=1)
    if truth is not None:
        truth = np.asarray(truth, dtype=float).reshape(len(truth), -1)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = (["source", "t"] + [f"z_hat_{i}" for i in range(n_z)]
              + ["objective", "iterations", "converged", "wall_time_ms"])
    if truth is not None:
        header += [f"z_true_{i}" for i in range(n_z)] + ["abs_error"]
    writer.writerow(header)
    for t, z, obj, it, conv, ms in rows:
        zs = np.atleast_1d(np.asarray(z, dtype=float))
        row = ([source, int(t)] + [repr(float(v)) for v in zs]
               + ["" if obj is None else repr(float(obj)),
                  "" if it is None else int(it),
                  "" if conv is None else str(bool(conv)).lower(),
                  "" if ms is None else f"{float(ms):.6f}"])
        if truth is not None:
            zt = truth[int(t)]
            row += [repr(float(v)) for v in zt] + [repr(float(np.max(np.abs(zs - zt))))]
        writer.writerow(row)
    text = buf.getvalue()
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return None
