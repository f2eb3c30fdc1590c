"""fiekit: functional estimation for discrete-time nonlinear systems.

Full information estimation (FIE) of a functional ``z = phi(x)``, linear
functional observers with quadratic incremental certificates, and a
power-system benchmark with a deadbeat reference estimator.
"""
from .errors import (ConfigError, DesignError, DimensionError, FiekitError, InfeasibleError,
                     UnsupportedError)
from .model import (BoxSet, NoiseSampler, SolutionReport, SystemModel, Trajectory, check_solution,
                    rollout, simulate)
from .fie import (EstimateRecord, FieConfig, GeneralObjective, KFunction, PriorData, QuadraticObjective,
                  SolverSettings, SolverStats, eval_objective, objective_gradient, run_fie_sequence,
                  solve_fie)
from .lyapunov import (LinearFunctionalObserver, LinearSystem, LyapunovCertificate, build_certificate,
                       design_full_order_observer, is_detectable, solve_discounted_lyapunov,
                       verify_decrease_sampled, verify_observer_conditions)
from .estimators import (DeadbeatMatrices, StateNormEstimatorConfig, build_deadbeat_matrices,
                         deadbeat_residual, deadbeat_sequence, run_linear_observer, run_state_norm)
from .powersys import (PowerSystemParams, build_discrete_model, detectability_probe, simulate_run)

__version__ = "0.1.0"
