"""Solver library for coupled mean-field forward-backward stochastic
differential equations with monotone coefficients, via extragradient
iterations on discretized control processes."""

from .grids import (NoiseBank, TimeGrid, generate_noise_bank, load_noise_bank,
                    process_inner, process_norm, save_noise_bank)
from .forward import (simulate_common_states, simulate_feedback,
                      simulate_forward, simulate_forward_common)
from .regression import (BasisSpec, FeatureMap, RegressionFit,
                         fit_conditional_expectation, hermite_features)
from .backward import solve_backward, solve_backward_common
from .problems import (BenchmarkParams, COMMON_DRIFTS, MEAN_FIELD_FNS,
                       MfgcCoefficients, ProblemCoefficients, SampleCloud,
                       benchmark_coefficients, lift_common_blind,
                       measure_free_problem, mfgc_as_fbsde,
                       shifted_benchmark_coefficients, validate_round_trip)
from .operator import (CommonNoiseModel, OperatorContext,
                       common_noise_residual, fbsde_residual, mfgc_residual,
                       pointwise_inverse)
from .solver import (DivergenceError, RunReport, SlopeFit, SolverConfig,
                     contraction_ratios, dual_extrapolation,
                     dual_extrapolation_gap_sides, extragradient,
                     fit_log_error_slope)
from .oracle import (BenchmarkOracle, FeedbackFit, centered_state_variance,
                     feedback_slope, feedback_slope_derivative,
                     fit_affine_feedback, gaussian_expectation,
                     offset_ode_residual, slope_ode_residual)
from .experiment import (CommonNoiseConfig, ConfigError, ExperimentConfig,
                         ResourceLimitError, apply_overrides,
                         config_from_mapping, default_benchmark_mapping,
                         read_config_file, run_benchmark,
                         run_common_noise_demo)
from .selfcheck import CheckResult, validate_install

__version__ = "0.1.0"
