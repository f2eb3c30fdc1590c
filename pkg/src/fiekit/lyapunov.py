"""Linear functional observers and their quadratic detectability certificates.

For ``x+ = A x + B w``, ``y = C x + D w``, ``z = L x`` an observer

    xi+ = N xi + J y,    z_hat = P_xi xi

tracks ``z`` whenever ``N T - T A + J C = 0``, ``P_xi T = L`` and ``N`` is
Schur. Then ``W(x, x~) = |T (x - x~)|_P^2`` with ``N' P N <= rho P`` decreases
as

    W(x+, x~+) <= eta W(x, x~) + c_w |w - w~|^2 + c_y |y - y~|^2,

with ``eta = (1 + eps) rho`` and gains from Young's inequality. ``W`` is only
positive semi-definite: it vanishes on the kernel of ``T``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DesignError, DimensionError, InfeasibleError, UnsupportedError


def _mat(M, rows=None, cols=None, name="matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or (rows is not None and M.shape[0] != rows) or (cols is not None and M.shape[1] != cols):
        raise DimensionError(f"{name} has shape {M.shape}, expected ({rows}, {cols})")
    return M


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, name="A")
        n = A.shape[0]
        A = _mat(A, n, n, "A")
        B = _mat(self.B, n, None, "B")
        C = _mat(self.C, None, n, "C")
        D = _mat(self.D, C.shape[0], B.shape[1], "D")
        L = _mat(self.L, None, n, "L")
        for name, M in zip("ABCDL", (A, B, C, D, L)):
            object.__setattr__(self, name, M)

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_w(self):
        return self.B.shape[1]

    @property
    def n_y(self):
        return self.C.shape[0]

    @property
    def n_z(self):
        return self.L.shape[0]

    def to_model(self, X=None, W=None):
        """Wrap as a :class:`~fiekit.model.SystemModel` with exact Jacobians."""
        from .model import SystemModel

        A, B, C, D, L = self.A, self.B, self.C, self.D, self.L
        return SystemModel(
            self.n_x, self.n_w, self.n_y, self.n_z,
            f=lambda x, w, t: A @ x + B @ w,
            h=lambda x, w, t: C @ x + D @ w,
            phi=lambda x: L @ x,
            X=X, W=W,
            jac_f=lambda x, w, t: (A, B),
            jac_h=lambda x, w, t: (C, D),
            name="linear")


@dataclass(frozen=True)
class LinearFunctionalObserver:
    N: np.ndarray
    J: np.ndarray
    P_xi: np.ndarray
    T: np.ndarray
    xi0: Optional[np.ndarray] = None
    J1: Optional[np.ndarray] = None

    def __post_init__(self):
        N = _mat(self.N, name="N")
        n_xi = N.shape[0]
        N = _mat(N, n_xi, n_xi, "N")
        J = _mat(self.J, n_xi, None, "J")
        P_xi = _mat(self.P_xi, None, n_xi, "P_xi")
        T = _mat(self.T, n_xi, None, "T")
        if not (P_xi.shape[0] <= n_xi <= T.shape[1]):
            raise DimensionError(f"observer order {n_xi} outside [n_z={P_xi.shape[0]}, n_x={T.shape[1]}]")
        xi0 = np.zeros(n_xi) if self.xi0 is None else np.asarray(self.xi0, dtype=float).reshape(n_xi)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "P_xi", P_xi)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "xi0", xi0)
        if self.J1 is not None:
            object.__setattr__(self, "J1", _mat(self.J1, P_xi.shape[0], J.shape[1], "J1"))

    @property
    def order(self):
        return self.N.shape[0]

    def with_initial_state(self, xi0):
        return LinearFunctionalObserver(self.N, self.J, self.P_xi, self.T, xi0, self.J1)


def spectral_radius(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass(frozen=True)
class ObserverReport:
    sylvester_residual: float
    functional_residual: float
    spectral_radius: float
    passes: bool

    def as_dict(self):
        return {"sylvester_residual": self.sylvester_residual,
                "functional_residual": self.functional_residual,
                "spectral_radius": self.spectral_radius, "passes": self.passes}


def _check_pair(sys: LinearSystem, obs: LinearFunctionalObserver):
    if obs.T.shape[1] != sys.n_x or obs.J.shape[1] != sys.n_y or obs.P_xi.shape[0] != sys.n_z:
        raise DimensionError(
            f"observer (T {obs.T.shape}, J {obs.J.shape}, P_xi {obs.P_xi.shape}) does not fit "
            f"system with n_x={sys.n_x}, n_y={sys.n_y}, n_z={sys.n_z}")


def verify_observer_conditions(sys: LinearSystem, obs: LinearFunctionalObserver,
                               tol: float = 1e-8) -> ObserverReport:
    """Frobenius residuals of the Sylvester and functional conditions, and rho(N)."""
    _check_pair(sys, obs)
    syl = np.linalg.norm(obs.N @ obs.T - obs.T @ sys.A + obs.J @ sys.C)
    lhs = obs.P_xi @ obs.T
    if obs.J1 is not None:
        lhs = lhs + obs.J1 @ sys.C
    fun = np.linalg.norm(lhs - sys.L)
    rad = spectral_radius(obs.N)
    ok = syl <= tol and fun <= tol and rad < 1.0
    return ObserverReport(float(syl), float(fun), rad, bool(ok))


def solve_discounted_lyapunov(N, rho: float, term_tol: float = 1e-14, max_terms: int = 100_000):
    """Solve ``M' P M - P = -I`` with ``M = N / sqrt(rho)`` by summing ``(M')^k M^k``.

    The result satisfies ``N' P N = rho (P - I)``, hence ``N' P N < rho P``.
    """
    N = _mat(N, name="N")
    if N.shape[0] != N.shape[1]:
        raise DimensionError("N must be square")
    if not (0.0 < rho < 1.0):
        raise InfeasibleError(f"rho must lie in (0, 1), got {rho}")
    r = spectral_radius(N)
    if r * r >= rho:
        raise InfeasibleError(f"rho={rho} does not exceed rho(N)^2={r * r}")
    M = N / np.sqrt(rho)
    P = np.eye(N.shape[0])
    Mk = np.eye(N.shape[0])
    for _ in range(max_terms):
        Mk = Mk @ M
        term = Mk.T @ Mk
        P += term
        if np.linalg.norm(term, 2) < term_tol:
            break
    else:
        raise InfeasibleError("discounted Lyapunov series did not converge")
    return 0.5 * (P + P.T)


def default_rho(N) -> float:
    r2 = spectral_radius(N) ** 2
    return r2 + max(1e-6, 0.01 * (1.0 - r2))


@dataclass(frozen=True)
class LyapunovCertificate:
    """Quadratic incremental certificate ``W(x, x~) = |T (x - x~)|_P^2``.

    With ``current_measurement`` the term ``|C (x - x~)|^2`` is added to ``W``
    (observer output ``P_xi xi + J1 y``); the decrease inequality is then not
    guaranteed by construction and should be checked by sampling.
    """

    T: np.ndarray
    P: np.ndarray
    rho: float
    eta: float
    epsilon: float
    sigma_w_gain: float
    sigma_y_gain: float
    alpha1_gain: float
    alpha2_gain: float
    current_measurement: bool = False
    C: Optional[np.ndarray] = None

    def W_delta(self, dx):
        """Evaluate ``W`` on state differences; ``dx`` may be a batch (rows)."""
        dx = np.asarray(dx, dtype=float)
        v = dx @ self.T.T
        out = np.einsum("...i,ij,...j->...", v, self.P, v)
        if self.current_measurement:
            c = dx @ self.C.T
            out = out + np.einsum("...i,...i->...", c, c)
        return out

    def as_dict(self):
        return {"eta": self.eta, "rho": self.rho, "epsilon": self.epsilon,
                "gains": {"sigma_w": self.sigma_w_gain, "sigma_y": self.sigma_y_gain,
                          "alpha1": self.alpha1_gain, "alpha2": self.alpha2_gain},
                "current_measurement": self.current_measurement}


def build_certificate(sys: LinearSystem, obs: LinearFunctionalObserver, epsilon: Optional[float] = None,
                      rho: Optional[float] = None, tol: float = 1e-8,
                      current_measurement: bool = False) -> LyapunovCertificate:
    """Construct the quadratic certificate for a verified observer.

    ``rho`` defaults to ``rho(N)^2 + max(1e-6, 0.01 (1 - rho(N)^2))`` and
    ``epsilon`` to ``(1/rho - 1) / 2``, which puts ``eta`` halfway between
    ``rho`` and one.
    """
    report = verify_observer_conditions(sys, obs, tol)
    if not report.passes:
        raise InfeasibleError(f"observer conditions fail: {report.as_dict()}")
    if rho is None:
        rho = default_rho(obs.N)
    if rho >= 1.0:
        raise InfeasibleError(f"no epsilon gives eta < 1 for rho={rho}")
    P = solve_discounted_lyapunov(obs.N, rho)
    if epsilon is None:
        epsilon = (1.0 / rho - 1.0) / 2.0
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    eta = (1.0 + epsilon) * rho
    if eta >= 1.0:
        raise InfeasibleError(f"eta=(1+eps)*rho={eta} is not below one; choose a smaller epsilon")
    k = 2.0 * (1.0 + epsilon) / epsilon
    TBJD = obs.T @ sys.B - obs.J @ sys.D
    sigma_y = k * np.linalg.eigvalsh(obs.J.T @ P @ obs.J)[-1]
    sigma_w = k * np.linalg.eigvalsh(TBJD.T @ P @ TBJD)[-1]
    lam_min_P = np.linalg.eigvalsh(P)[0]
    alpha1 = np.linalg.eigvalsh(obs.P_xi.T @ obs.P_xi)[-1] / lam_min_P
    alpha2 = np.linalg.eigvalsh(obs.T.T @ P @ obs.T)[-1]
    if current_measurement:
        if obs.J1 is None:
            raise ValueError("current_measurement needs an observer with J1")
        alpha1 = 2.0 * max(alpha1, np.linalg.eigvalsh(obs.J1.T @ obs.J1)[-1])
        alpha2 += np.linalg.eigvalsh(sys.C.T @ sys.C)[-1]
    return LyapunovCertificate(obs.T.copy(), P, float(rho), float(eta), float(epsilon),
                               float(max(sigma_w, 0.0)), float(max(sigma_y, 0.0)),
                               float(alpha1), float(alpha2), current_measurement,
                               sys.C.copy() if current_measurement else None)


@dataclass(frozen=True)
class DecreaseReport:
    violations: int
    worst_margin: float
    decrease_violations: int
    lower_bound_violations: int
    n_samples: int


def verify_decrease_sampled(cert: LyapunovCertificate, sys: LinearSystem, obs: LinearFunctionalObserver,
                            n_samples: int = 10_000, seed=0, tol: float = 1e-8, samples=None) -> DecreaseReport:
    """Check the decrease and lower-bound inequalities on standard-normal samples.

    ``samples`` may supply ``(x, x~, w, w~)`` batches directly. The margin is
    ``rhs - lhs`` of the decrease inequality; ``worst_margin`` is its minimum.
    """
    _check_pair(sys, obs)
    if samples is None:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n_samples, sys.n_x))
        xt = rng.standard_normal((n_samples, sys.n_x))
        w = rng.standard_normal((n_samples, sys.n_w))
        wt = rng.standard_normal((n_samples, sys.n_w))
    else:
        x, xt, w, wt = (np.atleast_2d(np.asarray(s, dtype=float)) for s in samples)
        n_samples = x.shape[0]
    dx = x - xt
    dw = w - wt
    dx_next = dx @ sys.A.T + dw @ sys.B.T
    dy = dx @ sys.C.T + dw @ sys.D.T
    dz = dx @ sys.L.T
    W_now = cert.W_delta(dx)
    lhs = cert.W_delta(dx_next)
    rhs = (cert.eta * W_now + cert.sigma_w_gain * np.sum(dw * dw, axis=1)
           + cert.sigma_y_gain * np.sum(dy * dy, axis=1))
    margin = rhs - lhs
    dec_bad = int(np.sum(margin < -tol))
    low_bad = int(np.sum(np.sum(dz * dz, axis=1) > cert.alpha1_gain * W_now + tol))
    worst = float(np.min(margin)) if n_samples else 0.0
    return DecreaseReport(dec_bad + low_bad, worst, dec_bad, low_bad, int(n_samples))


def is_detectable(A, C, tol: float = 1e-9) -> bool:
    """PBH test on every eigenvalue with modulus at least one."""
    A = _mat(A)
    C = np.atleast_2d(np.asarray(C, dtype=float)).reshape(-1, A.shape[0])
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - tol:
            continue
        M = np.vstack([A - lam * np.eye(n), C.astype(complex)])
        if np.linalg.matrix_rank(M, tol=1e-9 * max(1.0, np.linalg.norm(M))) < n:
            return False
    return True


def observability_matrix(A, C):
    A = _mat(A)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def _riccati_gain(A, C, Qn, Rn, tol=1e-12, max_iter=100_000):
    """Iterate the filter Riccati recursion to its fixed point; return the gain."""
    P = Qn.copy()
    for _ in range(max_iter):
        S = C @ P @ C.T + Rn
        AP = A @ P
        P_next = AP @ A.T - AP @ C.T @ np.linalg.solve(S, C @ P @ A.T) + Qn
        P_next = 0.5 * (P_next + P_next.T)
        if np.linalg.norm(P_next - P) <= tol * max(1.0, np.linalg.norm(P)):
            P = P_next
            break
        P = P_next
    else:
        raise DesignError("Riccati recursion did not reach a fixed point")
    return A @ P @ C.T @ np.linalg.inv(C @ P @ C.T + Rn)


def design_full_order_observer(sys: LinearSystem, mode: str = "riccati", Qn=None, Rn=None,
                               xi0=None) -> LinearFunctionalObserver:
    """Full-order observer ``T = I``, ``N = A - J C``, ``P_xi = L``.

    ``mode="riccati"`` takes ``J`` from the fixed point of the filter Riccati
    recursion with covariances ``Qn``, ``Rn`` (identity by default).
    ``mode="deadbeat"`` places every observer pole at the origin (single output).
    """
    A, C = sys.A, sys.C
    n = sys.n_x
    if mode == "deadbeat":
        if sys.n_y != 1:
            raise UnsupportedError("deadbeat design is implemented for single-output systems only")
        O = observability_matrix(A, C)
        if np.linalg.matrix_rank(O) < n:
            raise DesignError("deadbeat design needs an observable pair (A, C)")
        e_n = np.zeros((n, 1))
        e_n[-1, 0] = 1.0
        J = np.linalg.matrix_power(A, n) @ np.linalg.solve(O, e_n)
    elif mode == "riccati":
        if not is_detectable(A, C):
            raise DesignError("pair (A, C) is not detectable")
        Qn = np.eye(n) if Qn is None else _mat(Qn, n, n, "Qn")
        Rn = np.eye(sys.n_y) if Rn is None else _mat(Rn, sys.n_y, sys.n_y, "Rn")
        J = _riccati_gain(A, C, Qn, Rn)
    else:
        raise ValueError(f"unknown design mode {mode!r}")
    N = A - J @ C
    if spectral_radius(N) >= 1.0:
        raise DesignError(f"designed observer is not Schur (rho(N)={spectral_radius(N)})")
    return LinearFunctionalObserver(N, J, sys.L.copy(), np.eye(n), xi0)
