import os
import subprocess
import sys

import numpy as np
import pytest

from fiekit import kernels, powersys as ps
from fiekit._accel import USE_NUMBA, python_version
from fiekit.lyapunov import LinearSystem

from oracles import fie_least_squares, random_spd, stacked_maps


def _lq_case(rng, T=7, n=3, m=2, p=2, eta=0.8):
    sys_ = LinearSystem(0.5 * rng.standard_normal((n, n)), rng.standard_normal((n, m)),
                        rng.standard_normal((p, n)), rng.standard_normal((p, m)), rng.standard_normal((1, n)))
    P, Q, R = random_spd(rng, n), random_spd(rng, m), random_spd(rng, p)
    x_bar = rng.standard_normal(n)
    w_bar = rng.standard_normal((T, m))
    y_bar = rng.standard_normal((T, p))
    x0c = rng.standard_normal(n)
    wc = rng.standard_normal((T, m))
    Sx, Sy = stacked_maps(sys_.A, sys_.B, sys_.C, sys_.D, T)
    yc = (Sy @ np.concatenate([x0c, wc.ravel()])).reshape(T, p)
    c0 = eta ** T
    ck = eta ** (T - 1 - np.arange(T))
    args = (np.repeat(sys_.A[None], T, 0), np.repeat(sys_.B[None], T, 0), np.repeat(sys_.C[None], T, 0),
            np.repeat(sys_.D[None], T, 0), Q, R, 2 * ck, wc - w_bar, yc - y_bar,
            np.zeros((T + 1, n)), np.zeros((T + 1, n)), 2 * c0 * P, x0c - x_bar,
            np.zeros(n), np.zeros((T, m)), np.zeros(n), np.zeros((T, m)), np.zeros((T, n, n)))
    return sys_, (P, Q, R, eta, x_bar, w_bar, y_bar), (x0c, wc), args


def test_lq_step_solves_linear_least_squares():
    rng = np.random.default_rng(0)
    sys_, oracle_args, (x0c, wc), args = _lq_case(rng)
    dx0, dw, cost, gx0, gw, ok = kernels.lq_step(*args)
    assert ok
    v_ref, _ = fie_least_squares(sys_, *oracle_args)
    v = np.concatenate([x0c + dx0, (wc + dw).ravel()])
    np.testing.assert_allclose(v, v_ref, rtol=1e-9, atol=1e-9)
    # stationarity: the model gradient vanishes at its minimiser
    assert np.max(np.abs(gx0)) <= 1e-9 and np.max(np.abs(gw)) <= 1e-9


def test_lq_step_pins_component_with_large_damping():
    rng = np.random.default_rng(1)
    _, _, _, args = _lq_case(rng)
    args = list(args)
    muw = np.zeros_like(args[14])
    tw = np.zeros_like(args[16])
    muw[2, 1] = 1e25
    tw[2, 1] = 0.125
    args[14], args[16] = muw, tw
    dx0, dw, *_, ok = kernels.lq_step(*args)
    assert ok and dw[2, 1] == pytest.approx(0.125, abs=1e-12)


def test_lq_step_reports_indefinite_model():
    rng = np.random.default_rng(2)
    _, _, _, args = _lq_case(rng)
    args = list(args)
    args[17] = np.repeat(-1e6 * np.eye(3)[None], 7, 0)
    assert not kernels.lq_step(*args)[-1]


def test_compiled_and_python_kernels_agree():
    rng = np.random.default_rng(3)
    _, _, _, args = _lq_case(rng)
    a = kernels.lq_step(*args)
    b = python_version(kernels.lq_step)(*args)
    for u, v in zip(a[:5], b[:5]):
        np.testing.assert_allclose(u, v, rtol=1e-11, atol=1e-12)
    src, dst, coef, M, D = ps.PowerSystemParams(M=(1.0, 2.0, 0.5, 3.0)).arrays()
    x = rng.uniform(-1, 1, 16)
    w = rng.uniform(-1e-3, 1e-3, (20, 24))
    for fn, fargs in [(kernels.power_rollout, (x, w, 0.01, src, dst, coef, M, D)),
                      (kernels.power_step_jacobian, (x, 0.01, src, dst, coef, M, D)),
                      (kernels.power_curvature, (x, rng.standard_normal(16), 0.01, src, dst, coef, M))]:
        np.testing.assert_allclose(fn(*fargs), python_version(fn)(*fargs), rtol=1e-12, atol=1e-14)


def test_rollout_kernel_matches_model():
    p = ps.PowerSystemParams()
    model = ps.build_discrete_model(p)
    src, dst, coef, M, D = p.arrays()
    rng = np.random.default_rng(4)
    x0 = rng.uniform(-1, 1, 16)
    w = rng.uniform(-1e-3, 1e-3, (10, 24))
    from fiekit.model import rollout
    np.testing.assert_array_equal(kernels.power_rollout(x0, w, p.dt, src, dst, coef, M, D), rollout(model, x0, w).x)


def test_flag_disables_numba():
    code = "from fiekit._accel import USE_NUMBA; from fiekit import kernels; print(USE_NUMBA, hasattr(kernels.lq_step, 'py_func'))"
    env = dict(os.environ, FIEKIT_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "False"]
