"""Hot numeric loops.

Every function here sticks to the numpy subset numba understands, so the same
source runs compiled (default) or as plain numpy (``FIEKIT_NUMBA=0``).
Arrays passed in must be float64 and C-contiguous.
"""
import numpy as np

from ._accel import jit


@jit
def _is_pd(H):
    try:
        np.linalg.cholesky(0.5 * (H + H.T))
    except Exception:
        return False
    return True


@jit
def _failed(T, nx, nw):
    return (np.zeros(nx), np.zeros((T, nw)), np.inf, np.zeros(nx), np.zeros((T, nw)), False)


@jit
def lq_step(A, G, C, D, Q, R, scale, ew, ey, pen_w, pen_e, Wp, e0, mu0, muw, t0, tw, Hc):
    """Minimise the linearised single-shooting least-squares model.

    The model cost is

        (e0 + dx0)' Wp (e0 + dx0)
        + sum_k scale[k] * ((ew_k + dw_k)' Q (ew_k + dw_k) + (ey_k + dy_k)' R (ey_k + dy_k))
        + sum_{k>=1} sum_i pen_w[k, i] * (pen_e[k, i] + dx_k[i])**2
        + sum_k dx_k' Hc_k dx_k

    with ``dx_{k+1} = A_k dx_k + G_k dw_k`` and ``dy_k = C_k dx_k + D_k dw_k``,
    plus the damping ``sum mu0 (dx0 - t0)**2 + sum_k muw_k (dw_k - tw_k)**2``.
    A very large damping entry pins that component to its target. ``Hc``
    (dynamics curvature) may be indefinite. Solved by a backward Riccati
    sweep and a forward substitution, linear in the horizon.

    Returns ``(dx0, dw, model_cost, grad_x0, grad_w, ok)``: ``model_cost``
    and the half-gradients of the model at the step exclude the damping.
    ``ok`` is False when the damped model is not positive definite; the other
    outputs are then meaningless.
    """
    T = A.shape[0]
    nx = A.shape[1]
    nw = G.shape[2]
    S = np.diag(pen_w[T].copy())
    s = pen_w[T] * pen_e[T]
    K = np.empty((T, nw, nx))
    kff = np.empty((T, nw))
    rhs = np.empty((nw, nx + 1))
    for k in range(T - 1, -1, -1):
        Ak = A[k]
        Gk = G[k]
        Ck = C[k]
        Dk = D[k]
        Wy = scale[k] * R
        WyC = Wy @ Ck
        WyD = Wy @ Dk
        SA = S @ Ak
        SG = S @ Gk
        Hxx = Ck.T @ WyC + Ak.T @ SA + Hc[k]
        Hxw = Ck.T @ WyD + Ak.T @ SG
        Hww = scale[k] * Q + Dk.T @ WyD + Gk.T @ SG
        Wyey = Wy @ ey[k]
        gx = Ck.T @ Wyey + Ak.T @ s
        gw = scale[k] * (Q @ ew[k]) + Dk.T @ Wyey + Gk.T @ s
        for i in range(nw):
            Hww[i, i] += muw[k, i]
            gw[i] -= muw[k, i] * tw[k, i]
        if k >= 1:
            for i in range(nx):
                Hxx[i, i] += pen_w[k, i]
                gx[i] += pen_w[k, i] * pen_e[k, i]
        if not _is_pd(Hww):
            return _failed(T, nx, nw)
        rhs[:, :nx] = Hxw.T
        rhs[:, nx] = gw
        sol = np.linalg.solve(Hww, rhs)
        K[k] = -sol[:, :nx]
        kff[k] = -sol[:, nx]
        S = Hxx + Hxw @ K[k]
        S = 0.5 * (S + S.T)
        s = gx + Hxw @ kff[k]

    H0 = S + Wp
    g0 = s + Wp @ e0
    for i in range(nx):
        H0[i, i] += mu0[i]
        g0[i] -= mu0[i] * t0[i]
    if not _is_pd(H0):
        return _failed(T, nx, nw)
    dx0 = -np.linalg.solve(H0, g0)

    dw = np.empty((T, nw))
    dxs = np.empty((T + 1, nx))
    rys = np.empty((T, R.shape[0]))
    r0 = e0 + dx0
    cost = r0 @ (Wp @ r0)
    dx = dx0.copy()
    for k in range(T):
        dxs[k] = dx
        dw[k] = K[k] @ dx + kff[k]
        rw = ew[k] + dw[k]
        ry = ey[k] + C[k] @ dx + D[k] @ dw[k]
        rys[k] = ry
        cost += scale[k] * (rw @ (Q @ rw) + ry @ (R @ ry)) + dx @ (Hc[k] @ dx)
        if k >= 1:
            rp = pen_e[k] + dx
            cost += np.sum(pen_w[k] * rp * rp)
        dx = A[k] @ dx + G[k] @ dw[k]
    dxs[T] = dx
    rp = pen_e[T] + dx
    cost += np.sum(pen_w[T] * rp * rp)

    # adjoint pass of the model for the multipliers of pinned components
    lam = pen_w[T] * rp
    grad_w = np.empty((T, nw))
    for k in range(T - 1, -1, -1):
        Wyr = scale[k] * (R @ rys[k])
        grad_w[k] = scale[k] * (Q @ (ew[k] + dw[k])) + D[k].T @ Wyr + G[k].T @ lam
        lam = C[k].T @ Wyr + A[k].T @ lam + Hc[k] @ dxs[k]
        if k >= 1:
            lam = lam + pen_w[k] * (pen_e[k] + dxs[k])
    grad_x0 = lam + Wp @ r0
    return dx0, dw, cost, grad_x0, grad_w, True


@jit
def adjoint_sweep(A, G, C, D, gx, gw, gy, g0):
    """Gradient of ``c0(x0) + sum_k cw_k(w_k) + cy_k(y_k) + cx_k(x_k)`` through the rollout.

    ``gx`` (T+1, nx), ``gw`` (T, nw), ``gy`` (T, ny) hold the direct partial
    derivatives of the stage costs; ``g0`` that of the prior term. Also
    returns the costates ``lam[k] = dcost/dx_k`` for ``k = 1 .. T`` (row 0
    excludes the prior term).
    """
    T = A.shape[0]
    nx = A.shape[1]
    nw = G.shape[2]
    lams = np.empty((T + 1, nx))
    lams[T] = gx[T]
    grad_w = np.empty((T, nw))
    for k in range(T - 1, -1, -1):
        lam = lams[k + 1]
        grad_w[k] = gw[k] + D[k].T @ gy[k] + G[k].T @ lam
        lams[k] = C[k].T @ gy[k] + A[k].T @ lam + gx[k]
    return lams[0] + g0, grad_w, lams


@jit
def adjoint_gradient(A, G, C, D, gx, gw, gy, g0):
    grad_x0, grad_w, _ = adjoint_sweep(A, G, C, D, gx, gw, gy, g0)
    return grad_x0, grad_w


@jit
def power_outflow(theta, src, dst, coef):
    """Per-bus outflow from per-edge flows ``coef * sin(theta_i - theta_j)``."""
    flows = coef * np.sin(theta[src] - theta[dst])
    dP = np.zeros(theta.size)
    for e in range(src.size):
        dP[src[e]] += flows[e]
        dP[dst[e]] -= flows[e]
    return dP


@jit
def power_rhs(x, src, dst, coef, M, Dmp):
    n = M.size
    omega = x[n:2 * n]
    dP = power_outflow(x[:n], src, dst, coef)
    out = np.zeros(4 * n)
    out[:n] = omega
    out[n:2 * n] = -(Dmp * omega - x[3 * n:] + x[2 * n:3 * n] + dP) / M
    return out


@jit
def power_rhs_jacobian(x, src, dst, coef, M, Dmp):
    n = M.size
    J = np.zeros((4 * n, 4 * n))
    c = coef * np.cos(x[src] - x[dst])
    for i in range(n):
        J[i, n + i] = 1.0
        J[n + i, n + i] = -Dmp[i] / M[i]
        J[n + i, 2 * n + i] = -1.0 / M[i]
        J[n + i, 3 * n + i] = 1.0 / M[i]
    for e in range(src.size):
        i = src[e]
        j = dst[e]
        J[n + i, i] -= c[e] / M[i]
        J[n + i, j] += c[e] / M[i]
        J[n + j, i] += c[e] / M[j]
        J[n + j, j] -= c[e] / M[j]
    return J


@jit
def power_curvature(x, lam, dt, src, dst, coef, M):
    """``sum_i lam_i * d2 f_i / dx2`` of the Euler step; only the angle block is nonzero."""
    n = M.size
    H = np.zeros((4 * n, 4 * n))
    for e in range(src.size):
        i = src[e]
        j = dst[e]
        a = -dt * coef[e] * (lam[n + i] / M[i] - lam[n + j] / M[j])
        c = -a * np.sin(x[i] - x[j])
        H[i, i] += c
        H[j, j] += c
        H[i, j] -= c
        H[j, i] -= c
    return H


@jit
def power_step(x, w, dt, src, dst, coef, M, Dmp):
    nx = x.size
    return x + dt * power_rhs(x, src, dst, coef, M, Dmp) + w[:nx]


@jit
def power_step_jacobian(x, dt, src, dst, coef, M, Dmp):
    A = dt * power_rhs_jacobian(x, src, dst, coef, M, Dmp)
    for i in range(x.size):
        A[i, i] += 1.0
    return A


@jit
def power_rollout(x0, w, dt, src, dst, coef, M, Dmp):
    """Noise-driven Euler rollout of the swing model; returns the state sequence."""
    T = w.shape[0]
    xs = np.empty((T + 1, x0.size))
    xs[0] = x0
    for k in range(T):
        xs[k + 1] = power_step(xs[k], w[k], dt, src, dst, coef, M, Dmp)
    return xs
