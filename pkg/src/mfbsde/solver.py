"""Extragradient and dual-extrapolation iterations on control grids, with the
stopping rule, divergence guard and convergence-rate diagnostics.

Step sizes are entirely user-supplied: the theoretical bounds involve operator
constants with no computable representation here, so the only safety net is a
divergence guard that halts once the residual grows tenfold over its running
minimum.

The iteration loop is sequential by nature; each residual evaluation may use
whatever internal parallelism the operator provides.  A full run is
reproducible bit for bit from (seed, config) - wall-clock timings are recorded
but never feed back into the iteration.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import TimeGrid, process_norm


class DivergenceError(RuntimeError):
    """Raised when a residual turns non-finite during the iteration."""


@dataclass(frozen=True)
class SolverConfig:
    """Iteration knobs.

    ``mode`` selects constant-step extragradient or dual extrapolation with
    the decreasing schedule ``step * n**(-step_exponent)``.  The stopping rule
    compares ``stop_threshold`` against the residual of the last iterate or of
    the running average of half-iterates, per ``stop_on``.
    """

    mode: str = "constant"            # "constant" | "decreasing"
    step: float = 0.08
    step_exponent: float = 0.5        # only read in decreasing mode
    stop_threshold: float = 0.0
    max_iterations: int = 100
    stop_on: str = "last"             # "last" | "averaged"
    track_averaged_residual: bool = False

    def __post_init__(self):
        if self.mode not in ("constant", "decreasing"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.mode == "decreasing" and not 0 < self.step_exponent < 1:
            raise ValueError("step_exponent must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.stop_on not in ("last", "averaged"):
            raise ValueError(f"unknown stop_on {self.stop_on!r}")


@dataclass
class RunReport:
    """Per-iteration residual norms and the final control estimates.

    ``eps_last[k]`` is the residual norm after ``k`` completed iterations
    (``k = 0`` is the initial control); ``eps_averaged`` aligns with it when
    tracked, with the k = 0 entry equal to the initial residual.
    """

    eps_last: np.ndarray
    eps_averaged: np.ndarray | None
    iter_seconds: np.ndarray
    control_last: np.ndarray
    control_averaged: np.ndarray
    n_iterations: int
    stop_reason: str
    reference_distances: np.ndarray | None = None


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def _run(residual_fn: Callable[[np.ndarray], np.ndarray],
         initial_control: np.ndarray, config: SolverConfig, grid: TimeGrid,
         reference: np.ndarray | None, scheme: str) -> RunReport:
    gamma1 = config.step

    def gamma(n: int) -> float:
        if config.mode == "constant":
            return gamma1
        return gamma1 * n ** (-config.step_exponent)

    alpha = np.array(initial_control, dtype=float)
    averaged = alpha.copy()        # mean of half-iterates; equals alpha before any step
    accumulator = alpha / gamma(1) if scheme == "dual" else None

    track_avg = config.track_averaged_residual or config.stop_on == "averaged"
    eps_last: list[float] = []
    eps_avg: list[float] = []
    seconds: list[float] = []
    distances: list[float] = []
    stop_reason = "max_iterations"
    min_eps = np.inf

    n = 1
    while True:
        tic = time.perf_counter()
        residual = residual_fn(alpha)
        if not np.isfinite(residual).all():
            raise DivergenceError(f"non-finite residual at iteration {n}")
        eps = process_norm(residual, grid)
        eps_last.append(eps)
        if track_avg:
            if n == 1:
                eps_avg.append(eps)
            else:
                avg_res = residual_fn(averaged)
                if not np.isfinite(avg_res).all():
                    raise DivergenceError(
                        f"non-finite residual of averaged control at iteration {n}")
                eps_avg.append(process_norm(avg_res, grid))
        if reference is not None:
            distances.append(process_norm(alpha - reference, grid))

        monitored = eps_avg[-1] if config.stop_on == "averaged" else eps
        if monitored <= config.stop_threshold:
            stop_reason = "converged"
            break
        if eps > 10.0 * min_eps:
            stop_reason = "diverged"  # step too large for this operator
            break
        min_eps = min(min_eps, eps)
        if n > config.max_iterations:
            stop_reason = "max_iterations"
            break

        g = gamma(n)
        half = alpha - g * residual
        half_residual = residual_fn(half)
        if not np.isfinite(half_residual).all():
            raise DivergenceError(f"non-finite residual at iteration {n} (half step)")
        if scheme == "dual":
            accumulator -= half_residual
            alpha = gamma(n + 1) * accumulator
        else:
            alpha = alpha - g * half_residual
        averaged = half.copy() if n == 1 else averaged + (half - averaged) / n
        seconds.append(time.perf_counter() - tic)
        n += 1

    return RunReport(
        eps_last=np.array(eps_last),
        eps_averaged=np.array(eps_avg) if track_avg else None,
        iter_seconds=np.array(seconds),
        control_last=alpha,
        control_averaged=averaged,
        n_iterations=len(seconds),
        stop_reason=stop_reason,
        reference_distances=np.array(distances) if reference is not None else None,
    )


def extragradient(residual_fn: Callable[[np.ndarray], np.ndarray],
                  initial_control: np.ndarray, config: SolverConfig,
                  grid: TimeGrid,
                  reference: np.ndarray | None = None) -> RunReport:
    """Constant-step scheme: half step along the residual, full step along the
    residual of the half-iterate; two evaluations per iteration, running
    average over the half-iterates."""
    if config.mode != "constant":
        raise ValueError("extragradient runs with a constant step; use "
                         "dual_extrapolation for schedules")
    return _run(residual_fn, initial_control, config, grid, reference, "extra")


def dual_extrapolation(residual_fn: Callable[[np.ndarray], np.ndarray],
                       initial_control: np.ndarray, config: SolverConfig,
                       grid: TimeGrid,
                       reference: np.ndarray | None = None) -> RunReport:
    """Accumulator scheme admitting non-increasing step schedules.

    The accumulator starts at ``initial_control / gamma_1``; each iteration
    subtracts the half-iterate residual and rescales by the next step.  With a
    constant schedule this coincides with the constant-step scheme."""
    return _run(residual_fn, initial_control, config, grid, reference, "dual")


def fit_log_error_slope(report: RunReport | np.ndarray, burn_in: int,
                        upto: int | None = None) -> SlopeFit:
    """Ordinary least squares of ``ln eps`` against the completed-iteration
    index over ``burn_in <= k <= upto``.

    Entries with nonpositive residual cannot be logged and are excluded with a
    warning.  Requires at least 10 usable points.
    """
    eps = report.eps_last if isinstance(report, RunReport) else np.asarray(report)
    last = len(eps) - 1 if upto is None else min(upto, len(eps) - 1)
    ks = np.arange(burn_in, last + 1)
    window = eps[burn_in:last + 1]
    good = window > 0
    if not good.all():
        warnings.warn(f"excluded {int((~good).sum())} nonpositive residuals "
                      "from the slope fit")
    ks, window = ks[good], window[good]
    if len(ks) < 10:
        raise ValueError(f"need at least 10 points after burn-in, have {len(ks)}")
    y = np.log(window)
    slope, intercept = np.polyfit(ks, y, 1)
    pred = intercept + slope * ks
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return SlopeFit(slope=float(slope), intercept=float(intercept),
                    r_squared=r2, n_points=len(ks))


def contraction_ratios(report: RunReport) -> np.ndarray:
    """Per-iteration ratios of distances to a reference control; requires the
    run to have been made with ``reference=...``.  Diagnostic only."""
    if report.reference_distances is None:
        raise ValueError("run carried no reference control")
    d = report.reference_distances
    if len(d) < 2:
        raise ValueError("need at least two recorded distances")
    return d[1:] / d[:-1]


def dual_extrapolation_gap_sides(gammas: np.ndarray, first_evals: np.ndarray,
                                 half_evals: np.ndarray, start: np.ndarray,
                                 probe: np.ndarray) -> tuple[float, float]:
    """Both sides of the telescoped gap bound of the accumulator recursion.

    Runs ``X_{i+1/2} = X_i - gamma_i V_i``, ``Y_{i+1} = Y_i - V_{i+1/2}``,
    ``X_{i+1} = gamma_{i+1} Y_{i+1}`` from ``Y_1 = X_1 / gamma_1`` and returns

        lhs = sum_i <V_{i+1/2}, X_{i+1/2} - probe>
        rhs = |probe - X_1|^2 / (2 gamma_1)
              + (1/(2 gamma_{n+1}) - 1/(2 gamma_1)) |probe|^2
              + 1/2 sum_i (gamma_i |V_{i+1/2} - V_i|^2
                           - |X_{i+1/2} - X_i|^2 / gamma_i)

    The bound ``lhs <= rhs`` holds for any non-increasing positive step
    sequence and arbitrary evaluation vectors.
    """
    gammas = np.asarray(gammas, dtype=float)
    first_evals = np.asarray(first_evals, dtype=float)
    half_evals = np.asarray(half_evals, dtype=float)
    n = first_evals.shape[0]
    if gammas.shape[0] != n + 1:
        raise ValueError("need n + 1 step sizes for n iterations")
    if np.any(gammas <= 0) or np.any(np.diff(gammas) > 0):
        raise ValueError("steps must be positive and non-increasing")
    x = np.array(start, dtype=float)
    y = x / gammas[0]
    lhs = 0.0
    correction = 0.0
    for i in range(n):
        g = gammas[i]
        x_half = x - g * first_evals[i]
        lhs += float(half_evals[i] @ (x_half - probe))
        correction += g * float(np.sum((half_evals[i] - first_evals[i]) ** 2))
        correction -= float(np.sum((x_half - x) ** 2)) / g
        y = y - half_evals[i]
        x = gammas[i + 1] * y
    rhs = (float(np.sum((probe - start) ** 2)) / (2 * gammas[0])
           + (1 / (2 * gammas[n]) - 1 / (2 * gammas[0])) * float(np.sum(probe ** 2))
           + 0.5 * correction)
    return lhs, rhs
