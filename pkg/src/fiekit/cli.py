"""Command-line front end.

    fiekit simulate|estimate|certify|compare --config <path> [--jobs N] [--seed S] [--out DIR]

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration. Errors are
printed to standard error as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import powersys as ps
from .config import RunConfig, load_config, prepare_output_dir
from .errors import ConfigError, FiekitError
from .estimators import (StateNormEstimatorConfig, build_deadbeat_matrices, deadbeat_sequence,
                         estimates_to_csv, run_linear_observer, run_state_norm)
from .fie import KFunction, run_fie_sequence
from .lyapunov import (build_certificate, design_full_order_observer, verify_decrease_sampled,
                       verify_observer_conditions)
from .model import BoxSet, NoiseSampler, simulate

logger = logging.getLogger("fiekit")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class RunFailure(FiekitError):
    """A command ran but its result is a failure (e.g. a rejected certificate)."""


# -- per-seed work -------------------------------------------------------

def _setup(cfg: RunConfig, seed: int):
    """Model, true trajectory and prior state for one seed."""
    exp = cfg.experiment
    if cfg.model.kind == "powersys":
        return ps.simulate_run(cfg.model.params, seed, exp.horizon, exp.noise, exp.load_perturbation)
    spec = cfg.model
    sys_ = spec.system
    bound = spec.w_bound if exp.noise else 0.0
    W = BoxSet.symmetric(np.full(sys_.n_w, spec.w_bound)) if spec.w_bound > 0 else None
    model = sys_.to_model(W=W)
    sampler = NoiseSampler(BoxSet.symmetric(np.full(sys_.n_w, bound)), seed)
    traj = simulate(model, spec.x0, sampler, None, exp.horizon)
    return model, traj, spec.x_bar.copy()


def _observer(cfg: RunConfig, x_bar):
    sys_ = cfg.model.system
    spec = cfg.observer
    if spec.matrices is not None:
        obs = spec.matrices
    else:
        obs = design_full_order_observer(sys_, mode=spec.design)
    if x_bar is not None and not np.any(obs.xi0):
        obs = obs.with_initial_state(obs.T @ x_bar)
    return obs


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v):
    return "" if v is None or not np.isfinite(v) else repr(float(v))


def run_simulate(cfg: RunConfig, seed: int) -> dict:
    model, traj, _ = _setup(cfg, seed)
    path = os.path.join(cfg.outputs.directory, f"trajectory_seed{seed}.csv")
    traj.to_csv(path)
    return {"seed": seed, "trajectory": path, "rows": traj.T + 1}


def _estimate_all(cfg: RunConfig, model, traj, x_bar):
    """Estimates per selected estimator as ``{name: (rows, truth)}`` plus FIE timings."""
    out = {}
    timing = []
    T = traj.T
    for name in cfg.experiment.estimators:
        if name == "fie":
            recs = run_fie_sequence(model, cfg.fie, x_bar, traj.y)
            # wall time lives in the timing file only, so estimate files are reproducible
            rows = [(r.t, r.z_hat, r.objective_value, r.solver_stats.iterations,
                     r.solver_stats.converged, None) for r in recs]
            timing = [(r.t, r.solver_stats.wall_time * 1e3) for r in recs]
            out[name] = (rows, traj.z)
        elif name == "deadbeat":
            z = deadbeat_sequence(build_deadbeat_matrices(cfg.model.params), traj.y)
            out[name] = ([(t, z[t], None, None, None, None) for t in range(2, T + 1)], traj.z)
        elif name == "observer":
            z = run_linear_observer(_observer(cfg, x_bar), traj.y)
            out[name] = ([(t, z[t], None, None, None, None) for t in range(T + 1)], traj.z)
        elif name == "statenorm":
            sn = cfg.statenorm
            conf = StateNormEstimatorConfig(sn.epsilon, KFunction.power(*sn.rho1), KFunction.power(*sn.rho2))
            z = run_state_norm(conf, sn.z0, traj.y, np.zeros((T, model.n_w)))
            norms = np.linalg.norm(traj.x, axis=1)
            out[name] = ([(t, z[t], None, None, None, None) for t in range(T + 1)], norms)
    return out, timing


def run_estimate(cfg: RunConfig, seed: int) -> dict:
    model, traj, x_bar = _setup(cfg, seed)
    d = cfg.outputs.directory
    results, timing = _estimate_all(cfg, model, traj, x_bar)
    files = {}
    if cfg.outputs.emit_states:
        files["trajectory"] = os.path.join(d, f"trajectory_seed{seed}.csv")
        traj.to_csv(files["trajectory"])
    if cfg.outputs.emit_estimates:
        files["estimates"] = os.path.join(d, f"estimates_seed{seed}.csv")
        parts = []
        for name, (rows, truth) in results.items():
            text = estimates_to_csv(rows, None, name, truth)
            parts.append(text if not parts else text.split("\n", 1)[1])
        with open(files["estimates"], "w", encoding="utf-8", newline="") as fh:
            fh.write("".join(parts))
    if cfg.outputs.emit_timing and timing:
        files["timing"] = os.path.join(d, f"timing_seed{seed}.csv")
        _write_csv(files["timing"], ["t", "wall_time_ms"], [(t, f"{ms:.6f}") for t, ms in timing])
    n_fail = 0
    if "fie" in results:
        n_fail = sum(1 for r in results["fie"][0] if not r[4])
    return {"seed": seed, "files": files, "fie_not_converged": n_fail}


def _rmse(est, truth, lo, hi):
    e = np.asarray(est[lo:hi + 1], dtype=float) - np.asarray(truth[lo:hi + 1], dtype=float)
    return float(np.sqrt(np.mean(e * e)))


def run_compare(cfg: RunConfig, seed: int) -> dict:
    if cfg.model.kind != "powersys":
        raise ConfigError("model", "compare needs the power-system model")
    model, traj, x_bar = _setup(cfg, seed)
    T = traj.T
    recs = run_fie_sequence(model, cfg.fie, x_bar, traj.y)
    z_fie = np.full(T + 1, np.nan)
    for r in recs:
        z_fie[r.t] = r.z_hat[0]
    z_db = deadbeat_sequence(build_deadbeat_matrices(cfg.model.params), traj.y)
    z_true = traj.z[:, 0]
    path = os.path.join(cfg.outputs.directory, f"compare_seed{seed}.csv")
    _write_csv(path, ["t", "z_true", "z_fie", "z_deadbeat"],
               [(t, _fmt(z_true[t]), _fmt(z_fie[t]), _fmt(z_db[t])) for t in range(T + 1)])
    lo = cfg.experiment.burn_in
    return {"seed": seed, "rmse_fie": _rmse(z_fie, z_true, lo, T), "rmse_deadbeat": _rmse(z_db, z_true, lo, T),
            "fie_not_converged": sum(1 for r in recs if not r.solver_stats.converged), "file": path}


def run_certify(cfg: RunConfig) -> dict:
    if cfg.model.kind != "linear":
        raise ConfigError("model", "certify needs a linear model")
    sys_ = cfg.model.system
    spec = cfg.observer
    obs = _observer(cfg, None)
    check = verify_observer_conditions(sys_, obs, spec.tol)
    report = {"passes": False, "residuals": {"sylvester": check.sylvester_residual,
                                             "functional": check.functional_residual},
              "spectral_radius": check.spectral_radius, "tol": spec.tol, "observer_order": obs.order}
    if not check.passes:
        reasons = []
        if check.sylvester_residual > spec.tol:
            reasons.append("sylvester_residual > tol")
        if check.functional_residual > spec.tol:
            reasons.append("functional_residual > tol")
        if check.spectral_radius >= 1.0:
            reasons.append("spectral_radius >= 1")
        report["reason"] = "; ".join(reasons)
        return report
    cert = build_certificate(sys_, obs, epsilon=spec.epsilon, rho=spec.rho, tol=spec.tol)
    dec = verify_decrease_sampled(cert, sys_, obs, spec.n_samples, spec.sample_seed, spec.tol)
    report.update(cert.as_dict())
    report.update({"violations": dec.violations, "decrease_violations": dec.decrease_violations,
                   "lower_bound_violations": dec.lower_bound_violations, "worst_margin": dec.worst_margin,
                   "n_samples": dec.n_samples, "P": cert.P.tolist(), "T": cert.T.tolist()})
    report["passes"] = bool(dec.violations == 0 and cert.eta < 1.0)
    if not report["passes"]:
        report["reason"] = "sampled certificate inequalities violated"
    return report


# -- dispatch ------------------------------------------------------------

_PER_SEED = {"simulate": run_simulate, "estimate": run_estimate, "compare": run_compare}


def _map_seeds(fn, cfg: RunConfig, jobs: int):
    seeds = list(cfg.experiment.seeds)
    if jobs <= 1 or len(seeds) == 1:
        return [fn(cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
        return list(pool.map(fn, [cfg] * len(seeds), seeds))


def execute(command: str, cfg: RunConfig, jobs: int = 1) -> dict:
    """Run one command; returns the summary printed on standard output."""
    prepare_output_dir(cfg.outputs.directory)
    if command == "certify":
        report = run_certify(cfg)
        path = os.path.join(cfg.outputs.directory, "certificate.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if not report["passes"]:
            raise RunFailure(f"certificate rejected: {report['reason']} (report in {path})")
        return {"command": command, "file": path, "eta": report["eta"]}
    results = _map_seeds(_PER_SEED[command], cfg, jobs)
    summary = {"command": command, "runs": results}
    if command == "compare":
        fie = [r["rmse_fie"] for r in results]
        db = [r["rmse_deadbeat"] for r in results]
        summary.update({"rmse_fie": float(np.mean(fie)), "rmse_deadbeat": float(np.mean(db)),
                        "fie_better": int(sum(a < b for a, b in zip(fie, db))),
                        "window": [cfg.experiment.burn_in, cfg.experiment.horizon]})
        path = os.path.join(cfg.outputs.directory, "summary.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({k: v for k, v in summary.items() if k != "command"}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


def _error(kind, message, **extra):
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fiekit", description="Functional estimation experiments.")
    parser.add_argument("command", choices=["simulate", "estimate", "certify", "compare"])
    parser.add_argument("--config", required=True, help="JSON run configuration (schema 1)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for Monte Carlo runs")
    parser.add_argument("--seed", type=int, default=None, help="first seed; overrides experiment seeds")
    parser.add_argument("--out", default=None, help="output directory; overrides outputs.directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        cfg = load_config(args.config).with_overrides(args.seed, args.out)
        summary = execute(args.command, cfg, args.jobs)
    except ConfigError as exc:
        _error("config", exc.message, field=exc.field)
        return EXIT_CONFIG
    except (FiekitError, ArithmeticError, ValueError, np.linalg.LinAlgError, OSError) as exc:
        _error("runtime", str(exc), type=type(exc).__name__)
        return EXIT_RUNTIME
    print(json.dumps(summary, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
