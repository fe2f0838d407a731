"""Recurrent value functions: estimators, baselines, theory checks and experiments."""
from .baselines import MonteCarloEstimate, monte_carlo_values, td0_episode, td_lambda_online_episode
from .core import (DivergenceError, EpisodeReport, RtdConfig, RvfParams, RvfRunState, TargetSpec,
                   UnsupportedModeError, compute_target, compute_targets, rtd_update, run_rtd_episode,
                   rvf_estimates, sigmoid, start_episode, step_rvf)
from .harness import (AggregateResult, ConfigError, ExperimentSpec, MethodSpec, SchemaError, emit_plot,
                      load_spec, run_experiment)
from .linear import (FeatureMatrix, LinearMethod, LinearValueFn, build_feature_mrp, compare_linear_methods,
                     rmsve, run_linear_policy_eval)
from .mrp import (ConstraintError, InvalidTopologyError, MarkovRewardProcess, ObservationMap, Trajectory,
                  build_random_mrp, build_ychain, exact_values, sample_trajectory, stationary_check)
from .theory import (ContractionConfig, DomainError, apply_operator, apply_operator_exact, certify_contraction,
                     decompose_update, min_gating_threshold, value_bounds)

__version__ = "0.1.0"
