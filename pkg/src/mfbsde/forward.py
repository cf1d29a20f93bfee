"""Explicit Euler simulation of the controlled forward state and of the
autonomous common-noise process.

The drift enters with a minus sign, matching the continuous dynamics
``X_t = X_0 - \\int_0^t alpha_s ds + sqrt(2 sigma) B_t``; the step from
``t_j`` to ``t_{j+1}`` consumes ``control[:, j]`` (left-endpoint rule), which
keeps a control adapted with exactly ``n_steps`` entries.

All functions are pure: identical inputs give bitwise identical outputs, and
there is no cross-path coupling in the sweep.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .grids import NoiseBank, TimeGrid


def _check_control(control: np.ndarray, bank: NoiseBank, grid: TimeGrid,
                   expected_ndim: int = 3) -> np.ndarray:
    control = np.asarray(control, dtype=float)
    if control.ndim != expected_ndim:
        raise ValueError(f"control must have {expected_ndim} axes, got shape "
                         f"{control.shape}")
    if (control.shape[0] != bank.n_paths or control.shape[1] != grid.n_steps
            or control.shape[-1] != bank.dim):
        raise ValueError(
            f"control shape {control.shape} inconsistent with bank "
            f"({bank.n_paths} paths, {bank.n_steps} steps, dim {bank.dim})"
        )
    if not np.isfinite(control).all():
        raise ValueError("control contains non-finite entries")
    return control


def simulate_forward(control: np.ndarray, bank: NoiseBank, grid: TimeGrid,
                     sigma: float) -> np.ndarray:
    """Simulate ``X[:, j+1] = X[:, j] - dt * control[:, j] + sqrt(2 sigma) * dW_j``.

    Returns a ``(n_paths, n_steps + 1, dim)`` state grid with
    ``X[:, 0] = bank.x0``.
    """
    control = _check_control(control, bank, grid)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    n_p, n_t, d = control.shape
    vol = np.sqrt(2.0 * sigma)
    x = np.empty((n_p, n_t + 1, d))
    x[:, 0] = bank.x0
    dt = grid.dt
    for j in range(n_t):
        x[:, j + 1] = x[:, j] - dt * control[:, j] + vol * bank.increments[:, j]
    return x


def simulate_feedback(policy: Callable[[int, np.ndarray], np.ndarray],
                      bank: NoiseBank, grid: TimeGrid,
                      sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Run the forward sweep with ``control[:, j] = policy(j, X[:, j])``.

    This is the only sanctioned way to build an adapted control directly from
    raw arrays: the policy sees the current state only.  Returns the pair
    ``(control, states)``.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    n_p, n_t, d = bank.n_paths, bank.n_steps, bank.dim
    if grid.n_steps != n_t:
        raise ValueError("bank and grid disagree on step count")
    vol = np.sqrt(2.0 * sigma)
    x = np.empty((n_p, n_t + 1, d))
    control = np.empty((n_p, n_t, d))
    x[:, 0] = bank.x0
    dt = grid.dt
    for j in range(n_t):
        a = np.asarray(policy(j, x[:, j]), dtype=float)
        if a.shape != (n_p, d):
            raise ValueError(f"policy returned shape {a.shape} at step {j}")
        control[:, j] = a
        x[:, j + 1] = x[:, j] - dt * a + vol * bank.increments[:, j]
    return control, x


def simulate_common_states(drift: Callable[[np.ndarray], np.ndarray], bank: NoiseBank,
                   grid: TimeGrid, sigma0: float) -> np.ndarray:
    """Simulate the autonomous common-noise states
    ``p[k, j+1] = p[k, j] - dt * drift(p[k, j]) + sqrt(2 sigma0) * dW0_j``.

    ``drift`` maps a ``(n_common, common_dim)`` array of states to same-shape
    drifts.  Returns a ``(n_common, n_steps + 1, common_dim)`` grid starting at
    ``bank.p0`` on every common-noise path.
    """
    if bank.common_increments is None:
        raise ValueError("bank carries no common noise")
    if sigma0 < 0:
        raise ValueError("sigma0 must be nonnegative")
    n0, n_t, d0 = bank.common_increments.shape
    vol = np.sqrt(2.0 * sigma0)
    p = np.empty((n0, n_t + 1, d0))
    p[:, 0] = bank.p0
    dt = grid.dt
    for j in range(n_t):
        b = np.asarray(drift(p[:, j]), dtype=float)
        if not np.isfinite(b).all():
            raise ValueError(f"common drift returned non-finite values at step {j}")
        p[:, j + 1] = p[:, j] - dt * b + vol * bank.common_increments[:, j]
    return p


def simulate_forward_common(control: np.ndarray, bank: NoiseBank, grid: TimeGrid,
                           sigma: float) -> np.ndarray:
    """Forward sweep for controls carrying an common-noise axis.

    ``control`` has shape ``(n_paths, n_steps, n_common, dim)``; the
    idiosyncratic increments are shared across the common-noise axis.  Returns a
    ``(n_paths, n_steps + 1, n_common, dim)`` state grid.
    """
    control = _check_control(control, bank, grid, expected_ndim=4)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    n_p, n_t, n0, d = control.shape
    vol = np.sqrt(2.0 * sigma)
    x = np.empty((n_p, n_t + 1, n0, d))
    x[:, 0] = bank.x0[:, None, :]
    dt = grid.dt
    for j in range(n_t):
        x[:, j + 1] = x[:, j] - dt * control[:, j] + vol * bank.increments[:, j, None, :]
    return x
