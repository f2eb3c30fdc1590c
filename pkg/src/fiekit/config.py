"""JSON run configuration for the command-line front end.

A config is a JSON object with ``"schema": 1`` and the sections ``model``,
``experiment``, ``fie``, ``observer``, ``statenorm`` and ``outputs``. Every
validation failure raises :class:`~fiekit.errors.ConfigError` whose ``field``
is the dotted path of the offending entry.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigError, FiekitError
from .fie import FieConfig, QuadraticObjective, SolverSettings
from .lyapunov import LinearFunctionalObserver, LinearSystem
from .powersys import PowerSystemParams, default_fie_weights

SCHEMA_VERSION = 1
ESTIMATORS = ("fie", "deadbeat", "observer", "statenorm")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: Optional[PowerSystemParams] = None
    system: Optional[LinearSystem] = None
    x0: Optional[np.ndarray] = None
    x_bar: Optional[np.ndarray] = None
    w_bound: float = 0.0

    @property
    def n_x(self):
        return self.params.n_x if self.kind == "powersys" else self.system.n_x


@dataclass(frozen=True)
class ExperimentSpec:
    horizon: int = 150
    seeds: tuple = (0,)
    noise: bool = True
    burn_in: int = 20
    estimators: tuple = ("fie", "deadbeat")
    load_perturbation: float = 0.5


@dataclass(frozen=True)
class ObserverSpec:
    design: str = "riccati"
    matrices: Optional[LinearFunctionalObserver] = None
    epsilon: Optional[float] = None
    rho: Optional[float] = None
    n_samples: int = 10_000
    sample_seed: int = 0
    tol: float = 1e-8


@dataclass(frozen=True)
class StateNormSpec:
    epsilon: float = 0.5
    rho1: tuple = (1.0, 1.0)
    rho2: tuple = (1.0, 1.0)
    z0: float = 0.0


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    emit_states: bool = True
    emit_estimates: bool = True
    emit_timing: bool = True


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    experiment: ExperimentSpec
    fie: FieConfig
    observer: ObserverSpec = field(default_factory=ObserverSpec)
    statenorm: StateNormSpec = field(default_factory=StateNormSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)

    def with_overrides(self, seed=None, out=None) -> "RunConfig":
        """Apply ``--seed`` (shifts the seed list to start at ``seed``) and ``--out``."""
        exp, outs = self.experiment, self.outputs
        if seed is not None:
            exp = ExperimentSpec(exp.horizon, tuple(int(seed) + i for i in range(len(exp.seeds))),
                                 exp.noise, exp.burn_in, exp.estimators, exp.load_perturbation)
        if out is not None:
            outs = OutputSpec(str(out), outs.emit_states, outs.emit_estimates, outs.emit_timing)
        return RunConfig(self.model, exp, self.fie, self.observer, self.statenorm, outs)


# -- helpers -------------------------------------------------------------

def _section(d, key, path=""):
    val = d.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(path + key, "must be a JSON object")
    return val


def _reject_unknown(d, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}", "unknown key")


def _number(d, key, path, default, *, integer=False, lo=None, hi=None, lo_open=False):
    if key not in d:
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        raise ConfigError(f"{path}.{key}", "must be an integer" if integer else "must be a number")
    if not np.isfinite(v):
        raise ConfigError(f"{path}.{key}", "must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{path}.{key}", f"must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and v >= hi:
        raise ConfigError(f"{path}.{key}", f"must be < {hi}")
    return v


def _bool(d, key, path, default):
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{path}.{key}", "must be true or false")
    return v


def _matrix(v, path, rows=None, cols=None):
    try:
        M = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "must be a numeric matrix (list of rows)") from None
    if M.ndim == 1:
        M = M.reshape(1, -1) if cols is None or M.size == cols else M.reshape(-1, 1)
    if M.ndim != 2 or M.size == 0 or not np.all(np.isfinite(M)):
        raise ConfigError(path, "must be a non-empty finite matrix")
    if (rows is not None and M.shape[0] != rows) or (cols is not None and M.shape[1] != cols):
        raise ConfigError(path, f"has shape {M.shape}, expected ({rows}, {cols})")
    return M


def _vector(v, path, n):
    try:
        a = np.asarray(v, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigError(path, "must be a numeric list") from None
    if a.size != n or not np.all(np.isfinite(a)):
        raise ConfigError(path, f"needs {n} finite entries")
    return a


# -- sections ------------------------------------------------------------

def _parse_model(d) -> ModelSpec:
    _reject_unknown(d, ("builtin", "params", "linear"), "model")
    if "linear" in d:
        if "builtin" in d:
            raise ConfigError("model", "give either builtin or linear, not both")
        lin = d["linear"]
        if not isinstance(lin, dict):
            raise ConfigError("model.linear", "must be a JSON object")
        _reject_unknown(lin, ("A", "B", "C", "D", "L", "x0", "x_bar", "w_bound"), "model.linear")
        for key in "ABCL":
            if key not in lin:
                raise ConfigError(f"model.linear.{key}", "is required")
        A = _matrix(lin["A"], "model.linear.A")
        n = A.shape[0]
        A = _matrix(lin["A"], "model.linear.A", n, n)
        B = _matrix(lin["B"], "model.linear.B", n)
        C = _matrix(lin["C"], "model.linear.C", None, n)
        D = (_matrix(lin["D"], "model.linear.D", C.shape[0], B.shape[1]) if "D" in lin
             else np.zeros((C.shape[0], B.shape[1])))
        L = _matrix(lin["L"], "model.linear.L", None, n)
        x0 = _vector(lin.get("x0", np.zeros(n)), "model.linear.x0", n)
        x_bar = _vector(lin.get("x_bar", np.zeros(n)), "model.linear.x_bar", n)
        w_bound = _number(lin, "w_bound", "model.linear", 0.0, lo=0.0)
        return ModelSpec("linear", system=LinearSystem(A, B, C, D, L), x0=x0, x_bar=x_bar,
                         w_bound=float(w_bound))
    builtin = d.get("builtin", "powersys")
    if builtin != "powersys":
        raise ConfigError("model.builtin", f"unknown builtin model {builtin!r}")
    raw = d.get("params", {})
    try:
        params = PowerSystemParams.from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"model.params.{exc.field}", exc.message) from None
    except TypeError as exc:
        raise ConfigError("model.params", str(exc)) from None
    return ModelSpec("powersys", params=params)


def _parse_experiment(d, model: ModelSpec) -> ExperimentSpec:
    path = "experiment"
    _reject_unknown(d, ("horizon", "seeds", "seed", "monte_carlo_runs", "noise", "burn_in",
                        "estimators", "load_perturbation"), path)
    T = _number(d, "horizon", path, 150, integer=True, lo=1)
    if "seeds" in d:
        seeds = d["seeds"]
        if (not isinstance(seeds, list) or not seeds
                or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)):
            raise ConfigError("experiment.seeds", "must be a non-empty list of non-negative integers")
        if "monte_carlo_runs" in d and d["monte_carlo_runs"] != len(seeds):
            raise ConfigError("experiment.monte_carlo_runs", "disagrees with the length of seeds")
        seeds = tuple(seeds)
    else:
        runs = _number(d, "monte_carlo_runs", path, 1, integer=True, lo=1)
        base = _number(d, "seed", path, 0, integer=True, lo=0)
        seeds = tuple(base + i for i in range(runs))
    burn_in = _number(d, "burn_in", path, min(20, T - 1), integer=True, lo=0)
    if burn_in >= T:
        raise ConfigError("experiment.burn_in", f"burn_in={burn_in} leaves no evaluation window for horizon {T}")
    default_est = ("fie", "deadbeat") if model.kind == "powersys" else ("fie", "observer")
    est = d.get("estimators", list(default_est))
    if not isinstance(est, list) or not est or not all(isinstance(e, str) for e in est):
        raise ConfigError("experiment.estimators", "must be a non-empty list of names")
    for e in est:
        if e not in ESTIMATORS:
            raise ConfigError("experiment.estimators", f"unknown estimator {e!r}; choose from {list(ESTIMATORS)}")
        if e == "deadbeat" and model.kind != "powersys":
            raise ConfigError("experiment.estimators", "deadbeat is defined for the power-system model only")
        if e == "observer" and model.kind != "linear":
            raise ConfigError("experiment.estimators", "observer needs a linear model")
    return ExperimentSpec(int(T), seeds, _bool(d, "noise", path, True), int(burn_in), tuple(dict.fromkeys(est)),
                          float(_number(d, "load_perturbation", path, 0.5, lo=0.0)))


def _parse_fie(d, model: ModelSpec) -> FieConfig:
    path = "fie"
    _reject_unknown(d, ("eta", "weights", "solver"), path)
    eta = _number(d, "eta", path, 0.9, lo=0.0, hi=1.0)
    weights = _section(d, "weights", "fie.")
    _reject_unknown(weights, ("prior_std", "P", "Q", "R"), "fie.weights")
    if model.kind == "powersys":
        p = model.params
        std = weights.get("prior_std", [10.0] * 4)
        std = _vector(std, "fie.weights.prior_std", 4)
        if np.any(std <= 0):
            raise ConfigError("fie.weights.prior_std", "entries must be positive")
        P, Q, R = default_fie_weights(p, tuple(std))
        nx, nw, ny = p.n_x, p.n_w, p.n_y
    else:
        if "prior_std" in weights:
            raise ConfigError("fie.weights.prior_std", "only for the power-system model; give P, Q, R")
        s = model.system
        nx, nw, ny = s.n_x, s.n_w, s.n_y
        P, Q, R = np.eye(nx), np.eye(nw), np.eye(ny)
    if "P" in weights:
        P = _matrix(weights["P"], "fie.weights.P", nx, nx)
    if "Q" in weights:
        Q = _matrix(weights["Q"], "fie.weights.Q", nw, nw)
    if "R" in weights:
        R = _matrix(weights["R"], "fie.weights.R", ny, ny)
    solver = _section(d, "solver", "fie.")
    known = {f.name for f in fields(SolverSettings)}
    _reject_unknown(solver, known, "fie.solver")
    try:
        objective = QuadraticObjective(P, Q, R)
    except (FiekitError, ValueError) as exc:
        raise ConfigError("fie.weights", str(exc)) from None
    try:
        settings = SolverSettings(**solver)
    except (ValueError, TypeError) as exc:
        raise ConfigError("fie.solver", str(exc)) from None
    return FieConfig(objective, float(eta), settings)


def _parse_observer(d, model: ModelSpec) -> ObserverSpec:
    path = "observer"
    _reject_unknown(d, ("design", "N", "J", "P_xi", "T", "xi0", "J1", "epsilon", "rho",
                        "n_samples", "sample_seed", "tol"), path)
    matrices = None
    design = d.get("design", "riccati")
    if any(k in d for k in ("N", "J", "P_xi", "T")):
        for key in ("N", "J", "P_xi", "T"):
            if key not in d:
                raise ConfigError(f"observer.{key}", "is required when observer matrices are given")
        design = "given"
        try:
            matrices = LinearFunctionalObserver(
                _matrix(d["N"], "observer.N"), _matrix(d["J"], "observer.J"),
                _matrix(d["P_xi"], "observer.P_xi"), _matrix(d["T"], "observer.T"),
                d.get("xi0"), None if d.get("J1") is None else _matrix(d["J1"], "observer.J1"))
        except FiekitError as exc:
            raise ConfigError("observer", str(exc)) from None
    elif design not in ("riccati", "deadbeat"):
        raise ConfigError("observer.design", f"unknown design {design!r}")
    eps = d.get("epsilon")
    if eps is not None:
        eps = _number(d, "epsilon", path, None, lo=0.0, lo_open=True)
    rho = d.get("rho")
    if rho is not None:
        rho = _number(d, "rho", path, None, lo=0.0, lo_open=True)
    return ObserverSpec(design, matrices, eps, rho,
                        int(_number(d, "n_samples", path, 10_000, integer=True, lo=1)),
                        int(_number(d, "sample_seed", path, 0, integer=True, lo=0)),
                        float(_number(d, "tol", path, 1e-8, lo=0.0)))


def _kfun_pair(d, key, path):
    v = d.get(key, [1.0, 1.0])
    if (not isinstance(v, list) or len(v) != 2
            or not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v)):
        raise ConfigError(f"{path}.{key}", "must be [a, p] for a * s**p")
    if v[0] <= 0 or v[1] < 1:
        raise ConfigError(f"{path}.{key}", "needs a > 0 and p >= 1")
    return (float(v[0]), float(v[1]))


def _parse_statenorm(d) -> StateNormSpec:
    path = "statenorm"
    _reject_unknown(d, ("epsilon", "rho1", "rho2", "z0"), path)
    return StateNormSpec(float(_number(d, "epsilon", path, 0.5, lo=0.0, hi=1.0)),
                         _kfun_pair(d, "rho1", path), _kfun_pair(d, "rho2", path),
                         float(_number(d, "z0", path, 0.0, lo=0.0)))


def _parse_outputs(d) -> OutputSpec:
    path = "outputs"
    _reject_unknown(d, ("directory", "emit_states", "emit_estimates", "emit_timing"), path)
    directory = d.get("directory", "out")
    if not isinstance(directory, str) or not directory:
        raise ConfigError("outputs.directory", "must be a non-empty path")
    return OutputSpec(directory, _bool(d, "emit_states", path, True), _bool(d, "emit_estimates", path, True),
                      _bool(d, "emit_timing", path, True))


def parse_config(d) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config", "must be a JSON object")
    _reject_unknown(d, ("schema", "model", "experiment", "fie", "observer", "statenorm", "outputs"), "config")
    if d.get("schema") != SCHEMA_VERSION:
        raise ConfigError("schema", f"must be {SCHEMA_VERSION}, got {d.get('schema')!r}")
    model = _parse_model(_section(d, "model"))
    return RunConfig(model, _parse_experiment(_section(d, "experiment"), model),
                     _parse_fie(_section(d, "fie"), model), _parse_observer(_section(d, "observer"), model),
                     _parse_statenorm(_section(d, "statenorm")), _parse_outputs(_section(d, "outputs")))


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return parse_config(raw)


def prepare_output_dir(directory) -> str:
    """Create the output directory and check that it is writable."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise ConfigError("outputs.directory", f"cannot create {directory}: {exc.strerror}") from None
    if not os.access(directory, os.W_OK):
        raise ConfigError("outputs.directory", f"{directory} is not writable")
    return directory
