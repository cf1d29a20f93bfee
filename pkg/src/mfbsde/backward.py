"""Backward induction for the decoupled backward values of a given control,
one least-squares regression per time step.

The terminal slice applies the terminal coefficient exactly (no regression);
each earlier slice regresses

    U[:, j+1] + dt * driver(X[:, j+1], drift_inverse(X[:, j+1], control[:, j],
                            cloud), cloud)

onto the current state ``X[:, j]``, where ``cloud`` pairs the step-end states
with the control applied on that step.  The generator can instead be evaluated
at the step start, outside the regression, via ``generator_at="step_start"``.

The sweep is sequential in time by data dependence; regressions at distinct
steps touch disjoint read-only slices.
"""

from __future__ import annotations

import numpy as np

from .grids import TimeGrid
from .problems import ProblemCoefficients, SampleCloud
from .regression import BasisSpec, fit_conditional_expectation

GENERATOR_MODES = ("step_end", "step_start")


def _ensure_finite(values: np.ndarray, what: str, step: int) -> None:
    if not np.isfinite(values).all():
        bad = np.argwhere(~np.isfinite(values))[0]
        raise FloatingPointError(
            f"{what} returned a non-finite value at time step {step}, "
            f"sample index {tuple(bad)}"
        )


def solve_backward(paths: np.ndarray, control: np.ndarray,
                   coeffs: ProblemCoefficients, basis: BasisSpec,
                   grid: TimeGrid, generator_at: str = "step_end") -> np.ndarray:
    """Backward values on ``(n_paths, n_steps + 1, dim)`` for a plain problem."""
    if generator_at not in GENERATOR_MODES:
        raise ValueError(f"unknown generator mode {generator_at!r}")
    n_p, n_t1, d = paths.shape
    n_t = grid.n_steps
    if n_t1 != n_t + 1 or control.shape != (n_p, n_t, d):
        raise ValueError(
            f"paths {paths.shape} / control {control.shape} inconsistent with "
            f"{n_t} steps"
        )
    dt = grid.dt
    u = np.empty_like(paths)
    x_term = paths[:, n_t]
    u[:, n_t] = coeffs.terminal(x_term, SampleCloud(x=x_term, control=None))
    _ensure_finite(u[:, n_t], "terminal coefficient", n_t)
    for j in range(n_t - 1, -1, -1):
        if generator_at == "step_end":
            x_end = paths[:, j + 1]
            cloud = SampleCloud(x=x_end, control=control[:, j])
            u_val = coeffs.drift_inverse(x_end, control[:, j], cloud)
            gen = coeffs.driver(x_end, u_val, cloud)
            _ensure_finite(gen, "driver", j + 1)
            target = u[:, j + 1] + dt * gen
            fit = fit_conditional_expectation(target, paths[:, j], basis)
            u[:, j] = fit.fitted
        else:
            fit = fit_conditional_expectation(u[:, j + 1], paths[:, j], basis)
            x_cur = paths[:, j]
            cloud = SampleCloud(x=x_cur, control=control[:, j])
            u_val = coeffs.drift_inverse(x_cur, control[:, j], cloud)
            gen = coeffs.driver(x_cur, u_val, cloud)
            _ensure_finite(gen, "driver", j)
            u[:, j] = fit.fitted + dt * gen
    return u


def solve_backward_common(paths: np.ndarray, common_states: np.ndarray,
                          control: np.ndarray, coeffs: ProblemCoefficients,
                          basis: BasisSpec, grid: TimeGrid,
                          generator_at: str = "step_end") -> np.ndarray:
    """Backward values ``(n_paths, n_steps + 1, n_common, dim)`` under common
    noise.

    The empirical measure is the per-common-path cloud over the path index at
    fixed common index; the regression at each step is joint over both sample
    axes, onto the pair (state, common state).
    """
    if generator_at not in GENERATOR_MODES:
        raise ValueError(f"unknown generator mode {generator_at!r}")
    if not coeffs.common_noise_aware:
        raise ValueError("coefficient set is not common-noise aware")
    n_p, n_t1, n0, d = paths.shape
    n_t = grid.n_steps
    d0 = common_states.shape[2]
    if n_t1 != n_t + 1 or control.shape != (n_p, n_t, n0, d):
        raise ValueError("paths / control shapes inconsistent with the grid")
    if common_states.shape != (n0, n_t + 1, d0):
        raise ValueError(
            f"common states {common_states.shape} inconsistent with "
            f"{n0} paths over {n_t} steps"
        )
    dt = grid.dt
    u = np.empty_like(paths)
    for k in range(n0):
        x_term = paths[:, n_t, k]
        p_term = np.broadcast_to(common_states[k, n_t], (n_p, d0))
        u[:, n_t, k] = coeffs.terminal(x_term, p_term,
                                       SampleCloud(x=x_term, control=None))
    _ensure_finite(u[:, n_t], "terminal coefficient", n_t)

    def regressors(j: int) -> np.ndarray:
        x_flat = paths[:, j].reshape(n_p * n0, d)
        p_flat = np.broadcast_to(common_states[:, j], (n_p, n0, d0))
        return np.concatenate([x_flat, p_flat.reshape(n_p * n0, d0)], axis=1)

    target = np.empty((n_p, n0, d))
    for j in range(n_t - 1, -1, -1):
        at_end = generator_at == "step_end"
        jj = j + 1 if at_end else j
        for k in range(n0):
            x_k = paths[:, jj, k]
            p_k = np.broadcast_to(common_states[k, jj], (n_p, d0))
            cloud = SampleCloud(x=x_k, control=control[:, j, k])
            u_val = coeffs.drift_inverse(x_k, p_k, control[:, j, k], cloud)
            gen = coeffs.driver(x_k, p_k, u_val, cloud)
            _ensure_finite(gen, "driver", jj)
            target[:, k] = gen
        if at_end:
            flat = (u[:, j + 1] + dt * target).reshape(n_p * n0, d)
            fit = fit_conditional_expectation(flat, regressors(j), basis)
            u[:, j] = fit.fitted.reshape(n_p, n0, d)
        else:
            flat = u[:, j + 1].reshape(n_p * n0, d)
            fit = fit_conditional_expectation(flat, regressors(j), basis)
            u[:, j] = fit.fitted.reshape(n_p, n0, d) + dt * target
    return u
