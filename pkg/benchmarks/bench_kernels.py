"""Compiled vs pure-numpy kernels.

    python benchmarks/bench_kernels.py [--horizon 150] [--repeat 5] [--end-to-end]

Kernel timings call the numba dispatcher and its ``py_func`` on identical
inputs (helpers called from inside ``lq_step`` stay compiled in the numpy
column). ``--end-to-end`` also times a full FIE sequence in two subprocesses,
one with ``FIEKIT_NUMBA=0``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fiekit import kernels, powersys as ps
from fiekit._accel import USE_NUMBA, python_version


def kernel_cases(T):
    p = ps.PowerSystemParams()
    src, dst, coef, M, D = p.arrays()
    nx, nw, ny = p.n_x, p.n_w, p.n_y
    rng = np.random.default_rng(0)
    x0 = ps.default_initial_state(p, rng)
    w = rng.uniform(-1e-3, 1e-3, (T, nw))
    xs = kernels.power_rollout(x0, w, p.dt, src, dst, coef, M, D)
    A = np.stack([kernels.power_step_jacobian(x, p.dt, src, dst, coef, M, D) for x in xs[:-1]])
    G = np.repeat(np.hstack([np.eye(nx), np.zeros((nx, ny))])[None], T, 0)
    C = np.zeros((ny, nx))
    C[:4, 4:8] = np.eye(4)
    C[4:, 12:] = np.eye(4)
    C = np.repeat(C[None], T, 0)
    Dm = np.repeat(np.hstack([np.zeros((ny, nx)), np.eye(ny)])[None], T, 0)
    P, Q, R = ps.default_fie_weights(p)
    lam = rng.standard_normal((T, nx))
    lq_args = (A, G, C, Dm, Q, R, np.ones(T), rng.standard_normal((T, nw)) * 1e-3,
               rng.standard_normal((T, ny)) * 1e-2, np.zeros((T + 1, nx)), np.zeros((T + 1, nx)), P,
               rng.standard_normal(nx), np.zeros(nx), np.full((T, nw), 1e-8), np.zeros(nx),
               np.zeros((T, nw)), np.zeros((T, nx, nx)))
    adj_args = (A, G, C, Dm, rng.standard_normal((T + 1, nx)), rng.standard_normal((T, nw)),
                rng.standard_normal((T, ny)), rng.standard_normal(nx))

    def curvature_loop(fn):
        return lambda: [fn(xs[k], lam[k], p.dt, src, dst, coef, M) for k in range(T)]

    return {
        "power_rollout": (kernels.power_rollout, (x0, w, p.dt, src, dst, coef, M, D)),
        "lq_step": (kernels.lq_step, lq_args),
        "adjoint_sweep": (kernels.adjoint_sweep, adj_args),
        "power_curvature x T": (kernels.power_curvature, curvature_loop),
    }


def time_call(fn, args, repeat):
    call = args(fn) if callable(args) else (lambda: fn(*args))
    call()  # compile / warm up
    number = max(1, int(0.2 / max(timeit.timeit(call, number=1), 1e-7)))
    return min(timeit.repeat(call, number=number, repeat=repeat)) / number


END_TO_END = """
import time
from fiekit import powersys as ps
from fiekit.fie import FieConfig, QuadraticObjective, run_fie_sequence
p = ps.PowerSystemParams()
model, tr, x_bar = ps.simulate_run(p, 0, {T})
cfg = FieConfig(QuadraticObjective(*ps.default_fie_weights(p)), 0.9)
run_fie_sequence(model, cfg, x_bar, tr.y[:5])
t = time.perf_counter()
run_fie_sequence(model, cfg, x_bar, tr.y)
print(time.perf_counter() - t)
"""


def end_to_end(T):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, FIEKIT_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", END_TO_END.format(T=T)], env=env,
                             capture_output=True, text=True, check=True)
        out[flag] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=150)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("FIEKIT_NUMBA is off; both columns would time the same python code")
        return 1
    print(f"horizon T={args.horizon}")
    print(f"{'kernel':<22}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, (fn, fargs) in kernel_cases(args.horizon).items():
        fast = time_call(fn, fargs, args.repeat)
        slow = time_call(python_version(fn), fargs, args.repeat)
        print(f"{name:<22}{fast * 1e3:>12.3f}{slow * 1e3:>12.3f}{slow / fast:>10.1f}")
    if args.end_to_end:
        t = end_to_end(args.horizon)
        print(f"{'FIE sequence':<22}{t['1'] * 1e3:>12.0f}{t['0'] * 1e3:>12.0f}{t['0'] / t['1']:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
