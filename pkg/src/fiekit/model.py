"""Discrete-time nonlinear systems, constraint boxes and trajectories.

A system is

    x[t+1] = f(x[t], w[t], t)
    y[t]   = h(x[t], w[t], t)
    z[t]   = phi(x[t])

where ``w`` collects process and measurement noise. Models with separate
process and measurement noise concatenate them into one vector.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, InfeasibleError

_FD_STEP = np.sqrt(np.finfo(float).eps)


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box ``{v : lower <= v <= upper}``; infinite bounds allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).reshape(-1)
        upper = np.array(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise DimensionError(
                f"box bounds differ in length: {lower.size} vs {upper.size}")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise InfeasibleError("box bounds must not be NaN")
        if np.any(lower > upper):
            bad = np.flatnonzero(lower > upper).tolist()
            raise InfeasibleError(f"empty box: lower > upper at components {bad}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, n: int) -> "BoxSet":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @classmethod
    def symmetric(cls, bound) -> "BoxSet":
        """Infinity-norm ball ``|v_i| <= bound_i``."""
        bound = np.abs(np.asarray(bound, dtype=float))
        return cls(-bound, bound)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def is_unbounded(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def project(self, v) -> np.ndarray:
        return np.clip(v, self.lower, self.upper)

    def violation(self, v) -> np.ndarray:
        """Signed distance outside the box per component (zero inside)."""
        v = np.asarray(v, dtype=float)
        return v - np.clip(v, self.lower, self.upper)


@dataclass(frozen=True)
class SystemModel:
    """Nonlinear time-varying system with box constraints.

    ``jac_f(x, w, t)`` must return ``(df/dx, df/dw)`` and ``jac_h(x, w, t)``
    must return ``(dh/dx, dh/dw)``. When omitted, forward differences with
    step ``sqrt(eps) * (1 + |v_i|)`` are used. The optional
    ``hess_f(x, w, t, lam)`` returns ``sum_i lam_i d2 f_i / dx2``; the FIE
    solver uses it for second-order steps and otherwise falls back to
    Gauss-Newton.
    """

    n_x: int
    n_w: int
    n_y: int
    n_z: int
    f: Callable
    h: Callable
    phi: Callable
    X: Optional[BoxSet] = None
    W: Optional[BoxSet] = None
    jac_f: Optional[Callable] = None
    jac_h: Optional[Callable] = None
    hess_f: Optional[Callable] = None
    name: str = "model"

    def __post_init__(self):
        for attr in ("n_x", "n_w", "n_y", "n_z"):
            if int(getattr(self, attr)) < 1:
                raise DimensionError(f"{attr} must be a positive integer")
        if self.X is None:
            object.__setattr__(self, "X", BoxSet.unbounded(self.n_x))
        if self.W is None:
            object.__setattr__(self, "W", BoxSet.unbounded(self.n_w))
        if self.X.dim != self.n_x:
            raise DimensionError(f"X has dimension {self.X.dim}, expected {self.n_x}")
        if self.W.dim != self.n_w:
            raise DimensionError(f"W has dimension {self.W.dim}, expected {self.n_w}")

    def step(self, x, w, t):
        return np.asarray(self.f(x, w, t), dtype=float).reshape(self.n_x)

    def output(self, x, w, t):
        return np.asarray(self.h(x, w, t), dtype=float).reshape(self.n_y)

    def functional(self, x):
        return np.asarray(self.phi(x), dtype=float).reshape(self.n_z)

    def linearize_dynamics(self, x, w, t):
        if self.jac_f is not None:
            A, G = self.jac_f(x, w, t)
            return np.asarray(A, dtype=float), np.asarray(G, dtype=float)
        return _forward_difference(self.step, x, w, t, self.n_x)

    def dynamics_curvature(self, x, w, t, lam):
        """Costate-weighted Hessian of ``f`` in ``x``, or ``None`` when not supplied."""
        if self.hess_f is None:
            return None
        return np.asarray(self.hess_f(x, w, t, lam), dtype=float).reshape(self.n_x, self.n_x)

    def linearize_output(self, x, w, t):
        if self.jac_h is not None:
            C, D = self.jac_h(x, w, t)
            return np.asarray(C, dtype=float), np.asarray(D, dtype=float)
        return _forward_difference(self.output, x, w, t, self.n_y)


def _forward_difference(fun, x, w, t, n_out):
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    f0 = fun(x, w, t)
    Jx = np.empty((n_out, x.size))
    Jw = np.empty((n_out, w.size))
    for i in range(x.size):
        h = _FD_STEP * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        Jx[:, i] = (fun(xp, w, t) - f0) / (xp[i] - x[i])
    for i in range(w.size):
        h = _FD_STEP * (1.0 + abs(w[i]))
        wp = w.copy()
        wp[i] += h
        Jw[:, i] = (fun(x, wp, t) - f0) / (wp[i] - w[i])
    return Jx, Jw


def _rows(a, n):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        # keep the column count of an empty (0, k) array
        return a.reshape(n, a.shape[-1] if a.ndim == 2 else 0)
    return a.reshape(n, -1)


@dataclass(frozen=True)
class Trajectory:
    """Solution segment: ``x`` has T+1 rows, ``w`` and ``y`` T rows, ``z`` T+1 rows."""

    t0: int
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        T = x.shape[0] - 1
        w = _rows(self.w, T)
        y = _rows(self.y, T)
        z = np.asarray(self.z, dtype=float).reshape(T + 1, -1)
        for arr in (x, w, y, z):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "t0", int(self.t0))

    @property
    def T(self) -> int:
        return self.x.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + self.T + 1)

    def to_csv(self, path_or_buf=None) -> Optional[str]:
        """Write ``t, x_*, w_*, y_*, z_*``; the final row leaves w and y empty."""
        n_x, n_z = self.x.shape[1], self.z.shape[1]
        n_w = self.w.shape[1] if self.T else 0
        n_y = self.y.shape[1] if self.T else 0
        header = (["t"] + [f"x_{i}" for i in range(n_x)] + [f"w_{i}" for i in range(n_w)]
                  + [f"y_{i}" for i in range(n_y)] + [f"z_{i}" for i in range(n_z)])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for k in range(self.T + 1):
            row = [self.t0 + k] + [repr(float(v)) for v in self.x[k]]
            if k < self.T:
                row += [repr(float(v)) for v in self.w[k]]
                row += [repr(float(v)) for v in self.y[k]]
            else:
                row += [""] * (n_w + n_y)
            row += [repr(float(v)) for v in self.z[k]]
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

    @classmethod
    def from_csv(cls, path_or_buf) -> "Trajectory":
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf, encoding="utf-8") as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        cols = {p: [i for i, name in enumerate(header) if name.startswith(p + "_")]
                for p in ("x", "w", "y", "z")}
        t0 = int(body[0][0])
        x = [[float(r[i]) for i in cols["x"]] for r in body]
        z = [[float(r[i]) for i in cols["z"]] for r in body]
        w = [[float(r[i]) for i in cols["w"]] for r in body[:-1]]
        y = [[float(r[i]) for i in cols["y"]] for r in body[:-1]]
        T = len(body) - 1
        return cls(t0, np.array(x), np.array(w).reshape(T, len(cols["w"])),
                   np.array(y).reshape(T, len(cols["y"])), np.array(z))


@dataclass
class NoiseSampler:
    """Uniform sampler on a box; identical seeds give identical streams."""

    box: BoxSet
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.box.lower)) and np.all(np.isfinite(self.box.upper))):
            raise InfeasibleError("uniform noise needs a bounded box")
        self._rng = np.random.default_rng(self.seed)

    @property
    def dim(self) -> int:
        return self.box.dim

    def sample(self, n: int) -> np.ndarray:
        u = self._rng.random((n, self.box.dim))
        out = self.box.lower + u * (self.box.upper - self.box.lower)
        return np.clip(out, self.box.lower, self.box.upper)


def _check_vec(v, n, what):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DimensionError(f"{what} has shape {v.shape}, expected ({n},)")
    return v


def rollout(model: SystemModel, x0, w_seq, t0: int = 0) -> Trajectory:
    """Propagate the exact recursion from ``x0`` under the noise sequence ``w_seq``.

    Set membership is not enforced here; see :func:`check_solution`.
    """
    x0 = _check_vec(x0, model.n_x, "x0")
    w_seq = np.asarray(w_seq, dtype=float)
    if w_seq.size == 0:
        w_seq = np.zeros((0, model.n_w))
    if w_seq.ndim != 2 or w_seq.shape[1] != model.n_w:
        raise DimensionError(f"w_seq has shape {w_seq.shape}, expected (T, {model.n_w})")
    T = w_seq.shape[0]
    x = np.empty((T + 1, model.n_x))
    y = np.empty((T, model.n_y))
    z = np.empty((T + 1, model.n_z))
    x[0] = x0
    for k in range(T):
        t = t0 + k
        y[k] = model.output(x[k], w_seq[k], t)
        z[k] = model.functional(x[k])
        x[k + 1] = model.step(x[k], w_seq[k], t)
    z[T] = model.functional(x[T])
    return Trajectory(t0, x, w_seq.copy(), y, z)


@dataclass(frozen=True)
class SolutionReport:
    is_solution: bool
    max_defect: float
    constraint_violations: list


def check_solution(model: SystemModel, traj: Trajectory, tol: float = 0.0) -> SolutionReport:
    """Check dynamics, output and functional consistency plus set membership.

    ``constraint_violations`` holds ``(set_name, index, amount)`` tuples.
    """
    if traj.x.shape[1] != model.n_x or traj.z.shape[1] != model.n_z:
        raise DimensionError("trajectory dimensions do not match the model")
    if traj.T and (traj.w.shape[1] != model.n_w or traj.y.shape[1] != model.n_y):
        raise DimensionError("trajectory dimensions do not match the model")
    defect = 0.0
    for k in range(traj.T):
        t = traj.t0 + k
        defect = max(defect,
                     np.max(np.abs(model.step(traj.x[k], traj.w[k], t) - traj.x[k + 1])),
                     np.max(np.abs(model.output(traj.x[k], traj.w[k], t) - traj.y[k])))
    for k in range(traj.T + 1):
        defect = max(defect, np.max(np.abs(model.functional(traj.x[k]) - traj.z[k])))
    violations = []
    for k in range(traj.T + 1):
        amount = np.max(np.abs(model.X.violation(traj.x[k])))
        if amount > 0:
            violations.append(("X", k, float(amount)))
    for k in range(traj.T):
        amount = np.max(np.abs(model.W.violation(traj.w[k])))
        if amount > 0:
            violations.append(("W", k, float(amount)))
    ok = defect <= tol and not violations
    return SolutionReport(bool(ok), float(defect), violations)


def simulate(model: SystemModel, x0, sampler_x: NoiseSampler,
             sampler_y: Optional[NoiseSampler] = None, T: int = 1, t0: int = 0) -> Trajectory:
    """Roll out the model under sampled noise.

    With ``sampler_y`` given, the noise is split as ``w = (w_x, w_y)`` and the
    two samplers must cover ``n_w`` together.
    """
    if T < 0:
        raise ValueError("horizon T must be non-negative")
    n_split = sampler_x.dim + (sampler_y.dim if sampler_y is not None else 0)
    if n_split != model.n_w:
        raise DimensionError(f"samplers cover {n_split} noise components, model has {model.n_w}")
    parts = [sampler_x.sample(T)]
    if sampler_y is not None:
        parts.append(sampler_y.sample(T))
    w_seq = np.hstack(parts) if T else np.zeros((0, model.n_w))
    return rollout(model, x0, w_seq, t0)


def concat_trajectories(first: Trajectory, second: Trajectory) -> Trajectory:
    """Join two segments sharing the boundary state."""
    if second.t0 != first.t0 + first.T:
        raise ValueError("segments are not adjacent in time")
    return Trajectory(first.t0, np.vstack([first.x, second.x[1:]]),
                      np.vstack([first.w, second.w]), np.vstack([first.y, second.y]),
                      np.vstack([first.z, second.z[1:]]))


def as_matrix_sequence(seq: Sequence, width: int) -> np.ndarray:
    arr = np.asarray(seq, dtype=float)
    if arr.size == 0:
        return np.zeros((0, width))
    return arr.reshape(-1, width)
