"""Full information estimation of a state functional.

At time ``t`` the estimator picks an initial state and a noise sequence over
``[t0, t)`` minimising a discounted fit to the prior ``x_bar``, the noise
estimates ``w_bar`` and the measured outputs ``y_bar``; states and outputs are
obtained by rolling the model out (single shooting), so the dynamics hold
exactly. The estimate is ``z_hat = phi(x_hat[t|t])``.

Two objectives are available. :class:`QuadraticObjective` is a weighted sum of
squares and is solved with projected Levenberg-Marquardt whose steps come from
a Riccati sweep (linear cost in the horizon). :class:`GeneralObjective` uses
class-K shapes of residual norms and is solved with projected gradient descent
and backtracking unless every shape is quadratic, in which case it is mapped to
the equivalent sum of squares.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import kernels
from .errors import DimensionError
from .model import SystemModel

logger = logging.getLogger(__name__)

_FROZEN = 1e25


@dataclass(frozen=True)
class KFunction:
    """Scalar comparison function ``a * s**p`` or a custom monotone map.

    Use :meth:`quadratic`, :meth:`power` or :meth:`custom` to build one.
    """

    kind: str = "quadratic"
    a: float = 1.0
    p: float = 2.0
    fn: Optional[Callable[[float], float]] = None
    dfn: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "power", "custom"):
            raise ValueError(f"unknown KFunction kind {self.kind!r}")
        if self.kind == "quadratic":
            object.__setattr__(self, "p", 2.0)
        if self.kind in ("quadratic", "power"):
            if not self.a > 0:
                raise ValueError("KFunction coefficient a must be positive")
            if not self.p >= 1:
                raise ValueError("power KFunction needs p >= 1")
        elif self.fn is None:
            raise ValueError("custom KFunction needs fn")

    @classmethod
    def quadratic(cls, a=1.0):
        return cls("quadratic", float(a))

    @classmethod
    def power(cls, a=1.0, p=2.0):
        return cls("power", float(a), float(p))

    @classmethod
    def custom(cls, fn, dfn=None):
        return cls("custom", 1.0, 1.0, fn, dfn)

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "quadratic" or (self.kind == "power" and self.p == 2.0)

    def __call__(self, s):
        if self.kind == "custom":
            return float(self.fn(float(s)))
        return self.a * float(s) ** self.p

    def derivative(self, s):
        s = float(s)
        if self.kind == "custom":
            if self.dfn is not None:
                return float(self.dfn(s))
            h = 1e-6 * (1.0 + abs(s))
            lo = max(s - h, 0.0)
            return (self.fn(s + h) - self.fn(lo)) / (s + h - lo)
        if s == 0.0:
            return self.a if self.p == 1.0 else 0.0
        return self.a * self.p * s ** (self.p - 1.0)

    def check_class_k(self, upper=1e3) -> bool:
        """Zero at zero and strictly increasing on 100 log-spaced points."""
        grid = np.logspace(-6, np.log10(upper), 100)
        vals = np.array([self(s) for s in grid])
        return self(0.0) == 0.0 and bool(np.all(np.diff(vals) > 0)) and vals[0] > 0


def _spd(name, M, n=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or (n is not None and M.shape[0] != n):
        raise DimensionError(f"{name} has shape {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12 * np.max(np.abs(M))):
        raise ValueError(f"{name} must be symmetric")
    M = 0.5 * (M + M.T)
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class QuadraticObjective:
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("P", "Q", "R"):
            object.__setattr__(self, name, _spd(name, getattr(self, name)))


@dataclass(frozen=True)
class GeneralObjective:
    alpha2: KFunction = field(default_factory=KFunction.quadratic)
    sigma_w: KFunction = field(default_factory=KFunction.quadratic)
    sigma_y: KFunction = field(default_factory=KFunction.quadratic)

    @property
    def is_sum_of_squares(self) -> bool:
        return self.alpha2.is_quadratic and self.sigma_w.is_quadratic and self.sigma_y.is_quadratic

    def as_quadratic(self, n_x, n_w, n_y) -> QuadraticObjective:
        # a * (2 s)**2 == 2 * (2 a) * s**2
        return QuadraticObjective(2 * self.alpha2.a * np.eye(n_x), 2 * self.sigma_w.a * np.eye(n_w),
                                  2 * self.sigma_y.a * np.eye(n_y))


@dataclass(frozen=True)
class SolverSettings:
    """``method`` is ``"auto"``, ``"lm"`` (sums of squares only) or ``"gradient"``."""

    max_iter: int = 100
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    cost_tol: float = 1e-5
    penalty_weight_init: float = 1e3
    penalty_growth: float = 10.0
    max_penalty_rounds: int = 10
    feas_tol: float = 1e-8
    lm_damping_init: float = 1e-8
    max_active_set_rounds: int = 20
    method: str = "auto"

    def __post_init__(self):
        if self.method not in ("auto", "lm", "gradient"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.max_iter < 1 or self.max_penalty_rounds < 1:
            raise ValueError("max_iter and max_penalty_rounds must be positive")
        if self.penalty_growth <= 1 or self.penalty_weight_init <= 0:
            raise ValueError("penalty weight must be positive and grow by a factor > 1")


@dataclass(frozen=True)
class FieConfig:
    objective: Union[QuadraticObjective, GeneralObjective]
    eta: float = 0.9
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if not (0.0 <= self.eta < 1.0):
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")


@dataclass(frozen=True)
class PriorData:
    t0: int
    x_bar: np.ndarray
    w_bar: np.ndarray
    y_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_bar", np.asarray(self.x_bar, dtype=float).reshape(-1))
        w = np.asarray(self.w_bar, dtype=float)
        y = np.asarray(self.y_bar, dtype=float)
        if w.ndim != 2 or y.ndim != 2:
            raise DimensionError("w_bar and y_bar must be 2-D (steps x components)")
        object.__setattr__(self, "w_bar", w)
        object.__setattr__(self, "y_bar", y)


@dataclass(frozen=True)
class SolverStats:
    iterations: int
    final_grad_norm: float
    penalty_rounds: int
    converged: bool
    wall_time: float
    max_violation: float = 0.0
    method: str = "lm"
    message: str = ""


@dataclass(frozen=True)
class EstimateRecord:
    t: int
    z_hat: np.ndarray
    x_hat_seq: np.ndarray
    w_hat_seq: np.ndarray
    objective_value: float
    solver_stats: SolverStats


def _discounts(eta, T):
    """Prior weight ``eta**T`` and per-step weights ``eta**(T-1-k)`` for k = 0..T-1."""
    return eta ** T, eta ** (T - 1 - np.arange(T, dtype=float))


def _check_lengths(prior, T, n_w, n_y):
    if T < 0:
        raise ValueError(f"t must not precede t0={prior.t0}")
    if prior.w_bar.shape != (T, n_w) or prior.y_bar.shape != (T, n_y):
        raise DimensionError(
            f"prior sequences have shapes {prior.w_bar.shape} and {prior.y_bar.shape}, "
            f"expected ({T}, {n_w}) and ({T}, {n_y}) for t - t0 = {T}")


def eval_objective(config: FieConfig, x_hat_t0, w_hat, y_hat, prior: PriorData, t: int) -> float:
    """Discounted FIE objective for a candidate (initial state, noises, outputs)."""
    x_hat_t0 = np.asarray(x_hat_t0, dtype=float).reshape(-1)
    T = t - prior.t0
    n_w, n_y = prior.w_bar.shape[1], prior.y_bar.shape[1]
    _check_lengths(prior, T, n_w, n_y)
    try:
        w_hat = np.asarray(w_hat, dtype=float).reshape(T, n_w)
        y_hat = np.asarray(y_hat, dtype=float).reshape(T, n_y)
    except ValueError as exc:
        raise DimensionError(f"candidate sequences must have {T} steps: {exc}") from None
    if x_hat_t0.shape != prior.x_bar.shape:
        raise DimensionError("x_hat_t0 and x_bar differ in dimension")
    e0 = x_hat_t0 - prior.x_bar
    ew = w_hat - prior.w_bar[:T]
    ey = y_hat - prior.y_bar[:T]
    c0, ck = _discounts(config.eta, T)
    obj = config.objective
    if isinstance(obj, QuadraticObjective):
        val = 2 * c0 * e0 @ obj.P @ e0
        val += 2 * np.sum(ck * (np.einsum("ki,ij,kj->k", ew, obj.Q, ew)
                                + np.einsum("ki,ij,kj->k", ey, obj.R, ey)))
        return float(val)
    val = c0 * obj.alpha2(2 * np.linalg.norm(e0))
    for k in range(T):
        val += ck[k] * (obj.sigma_w(2 * np.linalg.norm(ew[k])) + obj.sigma_y(2 * np.linalg.norm(ey[k])))
    return float(val)


def _norm_shape_grad(kf, c, r):
    """Gradient of ``c * kf(2 |r|)`` with respect to ``r``."""
    nrm = np.linalg.norm(r)
    if nrm == 0.0:
        return np.zeros_like(r)
    return c * kf.derivative(2 * nrm) * 2 * r / nrm


class _Problem:
    """One FIE instance at a fixed time: rollout, cost, linearisation, gradient."""

    def __init__(self, model: SystemModel, config: FieConfig, prior: PriorData, t: int):
        self.model = model
        self.config = config
        self.prior = prior
        self.t = t
        self.T = T = t - prior.t0
        _check_lengths(prior, T, model.n_w, model.n_y)
        if prior.x_bar.shape != (model.n_x,):
            raise DimensionError(f"x_bar has shape {prior.x_bar.shape}, expected ({model.n_x},)")
        self.c0, self.ck = _discounts(config.eta, T)
        obj = config.objective
        if isinstance(obj, GeneralObjective) and obj.is_sum_of_squares and config.solver.method != "gradient":
            obj = obj.as_quadratic(model.n_x, model.n_w, model.n_y)
        self.objective = obj
        self.quadratic = isinstance(obj, QuadraticObjective)
        if self.quadratic:
            if obj.P.shape[0] != model.n_x or obj.Q.shape[0] != model.n_w or obj.R.shape[0] != model.n_y:
                raise DimensionError("weight matrices do not match the model dimensions")
        self.state_boxed = not model.X.is_unbounded and T > 0
        self.penalty = 0.0

    # -- evaluation -------------------------------------------------------
    def simulate(self, x0, w):
        m = self.model
        T = self.T
        xs = np.empty((T + 1, m.n_x))
        ys = np.empty((T, m.n_y))
        xs[0] = x0
        for k in range(T):
            tk = self.prior.t0 + k
            ys[k] = m.output(xs[k], w[k], tk)
            xs[k + 1] = m.step(xs[k], w[k], tk)
        return xs, ys

    def objective_value(self, x0, w, ys):
        p = self.prior
        e0 = x0 - p.x_bar
        ew = w - p.w_bar
        ey = ys - p.y_bar
        if self.quadratic:
            o = self.objective
            return float(2 * self.c0 * e0 @ o.P @ e0
                         + 2 * np.sum(self.ck * (np.einsum("ki,ij,kj->k", ew, o.Q, ew)
                                                 + np.einsum("ki,ij,kj->k", ey, o.R, ey))))
        return eval_objective(self.config, x0, w, ys, p, self.t)

    def penalty_value(self, xs):
        if not self.state_boxed:
            return 0.0
        v = self.model.X.violation(xs[1:])
        return float(self.penalty * np.sum(v * v))

    def max_violation(self, xs):
        if not self.state_boxed:
            return 0.0
        return float(np.max(np.abs(self.model.X.violation(xs[1:]))))

    def linearize(self, xs, w):
        m = self.model
        T = self.T
        A = np.empty((T, m.n_x, m.n_x))
        G = np.empty((T, m.n_x, m.n_w))
        C = np.empty((T, m.n_y, m.n_x))
        D = np.empty((T, m.n_y, m.n_w))
        for k in range(T):
            tk = self.prior.t0 + k
            A[k], G[k] = m.linearize_dynamics(xs[k], w[k], tk)
            C[k], D[k] = m.linearize_output(xs[k], w[k], tk)
        return A, G, C, D

    def stage_gradients(self, x0, w, xs, ys):
        """Direct partial derivatives of each cost term (before chaining)."""
        p = self.prior
        e0 = x0 - p.x_bar
        ew = w - p.w_bar
        ey = ys - p.y_bar
        gx = np.zeros_like(xs)
        if self.state_boxed:
            gx[1:] = 2 * self.penalty * self.model.X.violation(xs[1:])
        if self.quadratic:
            o = self.objective
            g0 = 4 * self.c0 * (o.P @ e0)
            gw = 4 * self.ck[:, None] * (ew @ o.Q)
            gy = 4 * self.ck[:, None] * (ey @ o.R)
            return g0, gw, gy, gx
        o = self.objective
        g0 = _norm_shape_grad(o.alpha2, self.c0, e0)
        gw = np.array([_norm_shape_grad(o.sigma_w, self.ck[k], ew[k]) for k in range(self.T)]).reshape(ew.shape)
        gy = np.array([_norm_shape_grad(o.sigma_y, self.ck[k], ey[k]) for k in range(self.T)]).reshape(ey.shape)
        return g0, gw, gy, gx

    def gradient(self, x0, w, xs, ys, lin=None):
        A, G, C, D = lin if lin is not None else self.linearize(xs, w)
        gx, gw, gy, g0 = _reorder(self.stage_gradients(x0, w, xs, ys))
        return kernels.adjoint_gradient(A, G, C, D, _c(gx), _c(gw), _c(gy), _c(g0))

    def curvature(self, xs, w, lams):
        """Half the costate-weighted dynamics Hessians per stage (zeros without ``hess_f``)."""
        m = self.model
        Hc = np.zeros((self.T, m.n_x, m.n_x))
        if m.hess_f is None:
            return Hc
        for k in range(self.T):
            Hc[k] = 0.5 * m.dynamics_curvature(xs[k], w[k], self.prior.t0 + k, lams[k + 1])
        return 0.5 * (Hc + Hc.transpose(0, 2, 1))

    # -- decision-variable boxes ----------------------------------------
    def project(self, x0, w):
        return self.model.X.project(x0), self.model.W.project(w)

    def projected_gradient_norm(self, x0, w, g_x0, g_w):
        px, pw = self.project(x0 - g_x0, w - g_w)
        return float(max(np.max(np.abs(x0 - px)), np.max(np.abs(w - pw)) if w.size else 0.0))

    def active_masks(self, x0, w, g_x0, g_w):
        """Components pinned at a bound with the gradient pushing outward."""
        X, W = self.model.X, self.model.W
        ax = ((x0 <= X.lower) & (g_x0 > 0)) | ((x0 >= X.upper) & (g_x0 < 0))
        aw = ((w <= W.lower) & (g_w > 0)) | ((w >= W.upper) & (g_w < 0))
        return ax, aw


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def _reorder(stage):
    g0, gw, gy, gx = stage
    return gx, gw, gy, g0


def _box_step(prob: _Problem, lin, Q, R, Wp, scale, Hc, x0, w, xs, ys, mu, pin_x, pin_w, max_rounds):
    """LM step restricted to the boxes by a primal active-set loop.

    Components that would leave the box are pinned to the bound they cross;
    pinned components whose model gradient points back inside are released.
    ``pin_*`` hold +1 (upper), -1 (lower) or 0 (free).
    """
    X, W = prob.model.X, prob.model.W
    p = prob.prior
    lo_x, hi_x = X.lower - x0, X.upper - x0
    lo_w, hi_w = W.lower - w, W.upper - w
    if prob.state_boxed:
        pen_e = X.violation(xs)
        pen_w = np.where(pen_e != 0.0, prob.penalty, 0.0)
    else:
        pen_e = np.zeros_like(xs)
        pen_w = pen_e
    args = (*lin, Q, R, scale, _c(w - p.w_bar), _c(ys - p.y_bar), _c(pen_w), _c(pen_e), Wp, _c(x0 - p.x_bar))
    for _ in range(max_rounds):
        mu0 = np.where(pin_x != 0, _FROZEN, mu)
        muw = np.where(pin_w != 0, _FROZEN, mu)
        tx0 = np.where(pin_x > 0, hi_x, np.where(pin_x < 0, lo_x, 0.0))
        tw = np.where(pin_w > 0, hi_w, np.where(pin_w < 0, lo_w, 0.0))
        dx0, dw, model_cost, gx0, gw, ok = kernels.lq_step(*args, _c(mu0), _c(muw), _c(tx0), _c(tw), Hc)
        if not ok:
            return None
        up_x = (pin_x == 0) & (dx0 > hi_x)
        dn_x = (pin_x == 0) & (dx0 < lo_x)
        up_w = (pin_w == 0) & (dw > hi_w)
        dn_w = (pin_w == 0) & (dw < lo_w)
        if up_x.any() or dn_x.any() or up_w.any() or dn_w.any():
            pin_x = pin_x + up_x - dn_x
            pin_w = pin_w + up_w - dn_w
            continue
        free_x = ((pin_x > 0) & (gx0 > 0)) | ((pin_x < 0) & (gx0 < 0))
        free_w = ((pin_w > 0) & (gw > 0)) | ((pin_w < 0) & (gw < 0))
        if not (free_x.any() or free_w.any()):
            break
        pin_x = np.where(free_x, 0, pin_x)
        pin_w = np.where(free_w, 0, pin_w)
    return dx0, dw, model_cost


def _lm(prob: _Problem, x0, w, settings: SolverSettings, budget: int):
    """Projected Levenberg-Marquardt with Nielsen damping updates.

    Each step solves the box-constrained model problem (see :func:`_box_step`);
    models that supply ``hess_f`` contribute the curvature of the dynamics.
    A step that fails to decrease the cost is first shortened before the
    damping is raised.
    """
    xs, ys = prob.simulate(x0, w)
    cost = prob.objective_value(x0, w, ys) + prob.penalty_value(xs)
    obj = prob.objective
    Q, R = _c(obj.Q), _c(obj.R)
    Wp = _c(2 * prob.c0 * obj.P)
    scale = _c(2 * prob.ck)
    X, W = prob.model.X, prob.model.W
    mu, nu = settings.lm_damping_init, 2.0
    iters = 0
    gnorm = np.inf
    converged = False
    message = "max_iter reached"
    while iters < budget:
        lin = prob.linearize(xs, w)
        g_x0, g_w, lams = kernels.adjoint_sweep(*lin, *(_c(g) for g in _reorder(prob.stage_gradients(x0, w, xs, ys))))
        gnorm = prob.projected_gradient_norm(x0, w, g_x0, g_w)
        if gnorm <= settings.grad_tol * max(1.0, cost):
            converged, message = True, "gradient tolerance"
            break
        Hc = _c(prob.curvature(xs, w, lams))
        ax, aw = prob.active_masks(x0, w, g_x0, g_w)
        pin_x = np.where(ax, np.where(x0 >= X.upper, 1, -1), 0)
        pin_w = np.where(aw, np.where(w >= W.upper, 1, -1), 0)
        iters += 1
        step = None
        while step is None:
            step = _box_step(prob, lin, Q, R, Wp, scale, Hc, x0, w, xs, ys, mu,
                             pin_x, pin_w, settings.max_active_set_rounds)
            if step is None:
                # negative curvature: damp until the model is convex
                mu = max(10.0 * mu, 1e-8)
                if mu > 1e30:
                    break
        if step is None:
            message = "damping overflow"
            break
        dx0, dw, model_cost = step
        pred = cost - model_cost
        size = math.sqrt(float(np.sum(x0 ** 2) + np.sum(w ** 2)))
        accepted = False
        alpha = 1.0
        step = math.sqrt(float(dx0 @ dx0 + np.sum(dw * dw)))
        # an indefinite model predicts no decrease: raise the damping without trying
        for _ in range(4 if pred > 0 else 0):
            nx0, nw = prob.project(x0 + alpha * dx0, w + alpha * dw)
            nxs, nys = prob.simulate(nx0, nw)
            new_cost = prob.objective_value(nx0, nw, nys) + prob.penalty_value(nxs)
            if np.isfinite(new_cost) and new_cost <= cost:
                accepted = True
                step = math.sqrt(float(np.sum((nx0 - x0) ** 2) + np.sum((nw - w) ** 2)))
                break
            alpha *= 0.25
        if accepted:
            rho = (cost - new_cost) / pred
            x0, w, xs, ys = nx0, nw, nxs, nys
            old, cost = cost, new_cost
            if alpha == 1.0:
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                mu = max(mu, 1e-300)
                nu = 2.0
            else:
                mu *= 2.0
            small_gain = alpha == 1.0 and rho > 0.25 and old - cost <= settings.cost_tol * max(old, 1e-300)
            if step <= settings.step_tol * (size + settings.step_tol) or small_gain:
                converged, message = True, "step tolerance"
                break
        else:
            if step <= settings.step_tol * (size + settings.step_tol):
                converged, message = True, "step tolerance"
                break
            mu *= nu
            nu *= 2.0
            if mu > 1e30:
                message = "damping overflow"
                break
    return x0, w, xs, ys, iters, gnorm, converged, message


def _projected_gradient(prob: _Problem, x0, w, settings: SolverSettings, budget: int):
    """Projected gradient descent with Barzilai-Borwein steps and Armijo backtracking."""
    xs, ys = prob.simulate(x0, w)
    cost = prob.objective_value(x0, w, ys) + prob.penalty_value(xs)
    g_x0, g_w = prob.gradient(x0, w, xs, ys)
    step_len = 1.0 / max(1.0, math.sqrt(float(g_x0 @ g_x0 + np.sum(g_w * g_w))))
    iters = 0
    converged = False
    gnorm = prob.projected_gradient_norm(x0, w, g_x0, g_w)
    message = "max_iter reached"
    while iters < budget:
        if gnorm <= settings.grad_tol * max(1.0, cost):
            converged, message = True, "gradient tolerance"
            break
        iters += 1
        a = step_len
        for _ in range(60):
            nx0, nw = prob.project(x0 - a * g_x0, w - a * g_w)
            nxs, nys = prob.simulate(nx0, nw)
            new_cost = prob.objective_value(nx0, nw, nys) + prob.penalty_value(nxs)
            decrease = float(g_x0 @ (x0 - nx0) + np.sum(g_w * (w - nw)))
            if np.isfinite(new_cost) and new_cost <= cost - 1e-4 * decrease:
                break
            a *= 0.5
        else:
            message = "line search failed"
            break
        ng_x0, ng_w = prob.gradient(nx0, nw, nxs, nys)
        sx = np.concatenate([nx0 - x0, (nw - w).ravel()])
        sg = np.concatenate([ng_x0 - g_x0, (ng_w - g_w).ravel()])
        step = float(np.linalg.norm(sx))
        size = math.sqrt(float(np.sum(x0 ** 2) + np.sum(w ** 2)))
        x0, w, xs, ys, cost, g_x0, g_w = nx0, nw, nxs, nys, new_cost, ng_x0, ng_w
        gnorm = prob.projected_gradient_norm(x0, w, g_x0, g_w)
        if step <= settings.step_tol * (size + settings.step_tol):
            converged, message = True, "step tolerance"
            break
        curv = float(sx @ sg)
        step_len = float(sx @ sx) / curv if curv > 0 else 2.0 * a
    return x0, w, xs, ys, iters, gnorm, converged, message


def solve_fie(model: SystemModel, config: FieConfig, prior: PriorData, t: int,
              warm_start=None) -> EstimateRecord:
    """Solve the FIE problem at time ``t`` and return the functional estimate.

    ``warm_start`` is an optional ``(x_hat_t0, w_hat)`` pair; it is projected
    onto the boxes before use. Without it the prior data is the initial guess.
    The solution is local; ``solver_stats.converged`` reports whether the
    stopping test was met within ``max_iter``.
    """
    start = time.perf_counter()
    prob = _Problem(model, config, prior, t)
    settings = config.solver
    if warm_start is None:
        x0, w = prior.x_bar.copy(), prior.w_bar.copy()
    else:
        x0 = np.asarray(warm_start[0], dtype=float).reshape(model.n_x)
        w = np.asarray(warm_start[1], dtype=float).reshape(prob.T, model.n_w)
    x0, w = prob.project(x0, w)

    method = settings.method
    if method == "auto":
        method = "lm" if prob.quadratic else "gradient"
    if method == "lm" and not prob.quadratic:
        raise ValueError("Levenberg-Marquardt needs a sum-of-squares objective")
    runner = _lm if method == "lm" else _projected_gradient

    prob.penalty = settings.penalty_weight_init if prob.state_boxed else 0.0
    rounds = 0
    iters_total = 0
    converged = False
    while True:
        rounds += 1
        budget = max(settings.max_iter - iters_total, 1)
        x0, w, xs, ys, iters, gnorm, converged, message = runner(prob, x0, w, settings, budget)
        iters_total += iters
        viol = prob.max_violation(xs)
        if viol <= settings.feas_tol or not prob.state_boxed:
            break
        if rounds >= settings.max_penalty_rounds:
            converged = False
            message = f"state constraint violation {viol:.3g} after {rounds} penalty rounds"
            break
        prob.penalty *= settings.penalty_growth
    if not converged:
        logger.debug("FIE at t=%d not converged: %s", t, message)

    value = prob.objective_value(x0, w, ys)
    stats = SolverStats(iters_total, float(gnorm), rounds, bool(converged),
                        time.perf_counter() - start, prob.max_violation(xs), method, message)
    return EstimateRecord(int(t), model.functional(xs[-1]), xs, w, value, stats)


def run_fie_sequence(model: SystemModel, config: FieConfig, x_bar_t0, measurements,
                     t0: int = 0, w_bar=None) -> list:
    """Solve the FIE problem at every ``t`` in ``t0+1 .. t0+len(measurements)``.

    Noise estimates default to zero and the measurements serve as output
    estimates. Each solve is warm-started from the previous optimiser with one
    zero-noise step appended. A step that raises is recorded with
    ``converged=False`` and a NaN estimate; the next step restarts from the
    last good solution.
    """
    ys = np.asarray(measurements, dtype=float)
    if ys.size == 0:
        raise ValueError("measurements must not be empty")
    ys = ys.reshape(ys.shape[0], -1)
    n_steps = ys.shape[0]
    if ys.shape[1] != model.n_y:
        raise DimensionError(f"measurements have {ys.shape[1]} columns, expected {model.n_y}")
    if w_bar is None:
        w_bar = np.zeros((n_steps, model.n_w))
    w_bar = np.asarray(w_bar, dtype=float).reshape(n_steps, model.n_w)
    x_bar_t0 = np.asarray(x_bar_t0, dtype=float).reshape(model.n_x)

    records = []
    good_x0, good_w = x_bar_t0.copy(), np.zeros((0, model.n_w))
    for T in range(1, n_steps + 1):
        prior = PriorData(t0, x_bar_t0, w_bar[:T], ys[:T])
        pad = T - good_w.shape[0]
        warm = (good_x0, np.vstack([good_w, w_bar[T - pad:T]]))
        try:
            rec = solve_fie(model, config, prior, t0 + T, warm_start=warm)
        except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
            logger.warning("FIE step t=%d failed: %s", t0 + T, exc)
            stats = SolverStats(0, float("nan"), 0, False, 0.0, float("nan"), "lm", f"error: {exc}")
            rec = EstimateRecord(t0 + T, np.full(model.n_z, np.nan), np.full((T + 1, model.n_x), np.nan),
                                 warm[1], float("nan"), stats)
            records.append(rec)
            continue
        records.append(rec)
        if np.isfinite(rec.objective_value):
            good_x0, good_w = rec.x_hat_seq[0], rec.w_hat_seq
    return records


def records_to_csv(records, path_or_buf=None, source="fie"):
    """Estimate table ``source, t, z_hat_*, objective, iterations, converged, wall_time_ms``."""
    from .estimators import estimates_to_csv

    rows = [(r.t, r.z_hat, r.objective_value, r.solver_stats.iterations,
             r.solver_stats.converged, r.solver_stats.wall_time * 1e3) for r in records]
    return estimates_to_csv(rows, path_or_buf, source)


__all__ = [
    "KFunction", "QuadraticObjective", "GeneralObjective", "SolverSettings", "FieConfig",
    "PriorData", "SolverStats", "EstimateRecord", "eval_objective", "solve_fie",
    "run_fie_sequence", "records_to_csv", "objective_gradient",
]


def objective_gradient(model: SystemModel, config: FieConfig, prior: PriorData, t: int, x_hat_t0, w_hat):
    """Objective value and its gradient with respect to ``(x_hat_t0, w_hat)`` through the rollout."""
    prob = _Problem(model, config, prior, t)
    x0 = np.asarray(x_hat_t0, dtype=float).reshape(model.n_x)
    w = np.asarray(w_hat, dtype=float).reshape(prob.T, model.n_w)
    xs, ys = prob.simulate(x0, w)
    g_x0, g_w = prob.gradient(x0, w, xs, ys)
    return prob.objective_value(x0, w, ys), g_x0, g_w
