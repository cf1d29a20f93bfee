"""Assembly of the monotone map whose zero is the discrete solution, plus the
residual norm used as the convergence proxy.

An :class:`OperatorContext` freezes everything except the control: problem
coefficients, noise bank, time grid, regression basis and diffusion strength.
Residual evaluation is then a deterministic map on control grids (common
random numbers), so two calls with equal inputs agree bit for bit, and
distinct controls may be evaluated concurrently against a shared context.

The residual at slot ``(i, j)`` pairs state, control and backward value at the
same grid index:

    residual[:, j] = drift_inverse(X[:, j], control[:, j], cloud_j) - U[:, j]

with ``cloud_j`` the empirical measure of ``(X[:, j], control[:, j])``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backward import solve_backward, solve_backward_common
from .forward import simulate_common_states, simulate_forward, simulate_forward_common
from .grids import NoiseBank, TimeGrid, process_norm
from .problems import MfgcCoefficients, ProblemCoefficients, SampleCloud
from .regression import BasisSpec


@dataclass(frozen=True)
class CommonNoiseModel:
    """Dynamics of the shared noise process: autonomous drift and diffusion."""

    drift: Callable[[np.ndarray], np.ndarray]
    sigma0: float

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")


@dataclass
class OperatorContext:
    """Frozen inputs of a solve; immutable for its whole lifetime."""

    coefficients: ProblemCoefficients | MfgcCoefficients
    bank: NoiseBank
    grid: TimeGrid
    basis: BasisSpec
    sigma: float
    common: CommonNoiseModel | None = None
    generator_at: str = "step_end"
    _common_states: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.bank.n_steps != self.grid.n_steps:
            raise ValueError("bank and grid disagree on step count")
        if self.common is not None:
            if isinstance(self.coefficients, MfgcCoefficients):
                raise ValueError("game-of-controls residual has no common-noise variant")
            if not self.coefficients.common_noise_aware:
                raise ValueError("coefficient set is not common-noise aware")
            # The shared-noise states never depend on the control; freeze them
            # once alongside the bank.
            self._common_states = simulate_common_states(
                self.common.drift, self.bank, self.grid, self.common.sigma0)
            self._common_states.setflags(write=False)

    @property
    def common_states(self) -> np.ndarray:
        if self._common_states is None:
            raise ValueError("context carries no common noise")
        return self._common_states

    def residual(self, control: np.ndarray) -> np.ndarray:
        """Dispatch to the assembly matching this context's configuration."""
        if isinstance(self.coefficients, MfgcCoefficients):
            return mfgc_residual(self, control)
        if self.common is not None:
            return common_noise_residual(self, control)
        return fbsde_residual(self, control)

    def residual_norm(self, control: np.ndarray) -> float:
        return process_norm(self.residual(control), self.grid)


def fbsde_residual(ctx: OperatorContext, control: np.ndarray) -> np.ndarray:
    """Residual of a plain forward-backward problem, shape = control shape."""
    coeffs = ctx.coefficients
    paths = simulate_forward(control, ctx.bank, ctx.grid, ctx.sigma)
    u = solve_backward(paths, control, coeffs, ctx.basis, ctx.grid,
                       generator_at=ctx.generator_at)
    n_t = ctx.grid.n_steps
    out = np.empty_like(control)
    for j in range(n_t):
        x_j = paths[:, j]
        a_j = control[:, j]
        cloud = SampleCloud(x=x_j, control=a_j)
        out[:, j] = coeffs.drift_inverse(x_j, a_j, cloud) - u[:, j]
    return out


def mfgc_residual(ctx: OperatorContext, control: np.ndarray) -> np.ndarray:
    """Residual of a game of controls: control-cost gradient minus backward
    value; no drift inverse is involved."""
    from .problems import mfgc_as_fbsde

    mfgc = ctx.coefficients
    adapter = mfgc_as_fbsde(mfgc)
    paths = simulate_forward(control, ctx.bank, ctx.grid, ctx.sigma)
    u = solve_backward(paths, control, adapter, ctx.basis, ctx.grid,
                       generator_at=ctx.generator_at)
    n_t = ctx.grid.n_steps
    out = np.empty_like(control)
    for j in range(n_t):
        x_j = paths[:, j]
        a_j = control[:, j]
        cloud = SampleCloud(x=x_j, control=a_j)
        out[:, j] = mfgc.control_cost_grad(x_j, a_j, cloud) - u[:, j]
    return out


def common_noise_residual(ctx: OperatorContext, control: np.ndarray) -> np.ndarray:
    """Residual with a common-noise axis, shape ``(n_paths, n_steps, n_common,
    dim)``; degenerates to :func:`fbsde_residual` when the common axis carries
    a single deterministic path and the coefficients ignore it."""
    coeffs = ctx.coefficients
    p_states = ctx.common_states
    paths = simulate_forward_common(control, ctx.bank, ctx.grid, ctx.sigma)
    u = solve_backward_common(paths, p_states, control, coeffs, ctx.basis,
                              ctx.grid, generator_at=ctx.generator_at)
    n_p, n_t, n0, d = control.shape
    d0 = p_states.shape[2]
    out = np.empty_like(control)
    for j in range(n_t):
        for k in range(n0):
            x_jk = paths[:, j, k]
            a_jk = control[:, j, k]
            p_jk = np.broadcast_to(p_states[k, j], (n_p, d0))
            cloud = SampleCloud(x=x_jk, control=a_jk)
            out[:, j, k] = coeffs.drift_inverse(x_jk, p_jk, a_jk, cloud) - u[:, j, k]
    return out


def pointwise_inverse(drift: Callable, x: np.ndarray, target: np.ndarray,
                      cloud: SampleCloud | None = None, tol: float = 1e-12,
                      max_iter: int = 60) -> np.ndarray:
    """Solve ``drift(x, u, cloud) = target`` for ``u``, pointwise.

    Newton iteration with a finite-difference Jacobian; meaningful only when
    the drift is strongly monotone in ``u`` at the given states (caller
    asserted) and free of the law of ``u``.  The result satisfies
    ``|drift(x, u) - target| <= 1e-10`` or a ``FloatingPointError`` reports the
    first offending point.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    n, d = target.shape

    def f(u):
        return np.asarray(drift(x, u, cloud), dtype=float)

    u = target.copy()
    step = 1e-7
    for _ in range(max_iter):
        res = f(u) - target
        if np.max(np.abs(res)) <= tol:
            break
        if d == 1:
            deriv = (f(u + step) - f(u - step)) / (2 * step)
            deriv = np.where(np.abs(deriv) < 1e-14, 1.0, deriv)
            u = u - res / deriv
        else:
            shifted_plus = np.empty((d, n, d))
            shifted_minus = np.empty((d, n, d))
            for c in range(d):
                du = np.zeros(d)
                du[c] = step
                shifted_plus[c] = f(u + du)
                shifted_minus[c] = f(u - du)
            # jacobians[i] has entry [r, c] = d drift_r / d u_c at point i
            jacobians = np.transpose(shifted_plus - shifted_minus, (1, 2, 0)) / (2 * step)
            u = u - np.linalg.solve(jacobians, res[..., None])[..., 0]
    res = np.abs(f(u) - target)
    if np.max(res) > 1e-10:
        bad = int(np.argmax(np.max(res, axis=1)))
        raise FloatingPointError(
            f"drift inversion failed to converge at point {bad}: "
            f"residual {np.max(res):.3e}"
        )
    return u
