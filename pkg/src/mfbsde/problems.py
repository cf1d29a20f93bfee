"""Concrete coefficient sets: the generic interface, the closed-form mean-field
benchmark, the game-of-controls specialization, and the measure-free adapter.

Coefficient callables are vectorized over a leading sample axis and receive the
empirical measure as a :class:`SampleCloud`, a read-only view over the paired
sample arrays; mean-field statistics are computed by the coefficient itself
from the cloud, once per call.

Plain signatures::

    drift(x, u, cloud)          # forward coefficient, (n, d) -> (n, d)
    driver(x, u, cloud)         # backward generator
    terminal(x, cloud)          # terminal condition
    drift_inverse(x, a, cloud)  # inverse of drift in its u argument

Common-noise-aware sets take an extra ``p`` argument after ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


class SampleCloud(NamedTuple):
    """Empirical measure of the particle system at one time step."""

    x: np.ndarray                  # (n, d) states
    control: np.ndarray | None     # (n, d) paired controls, None at terminal time


@dataclass(frozen=True)
class ProblemCoefficients:
    """Coefficient set for a forward-backward system.

    ``drift`` may be omitted for assemblies that never evaluate it (the
    pipeline only consumes ``drift_inverse``, ``driver`` and ``terminal``).
    ``measure_free_in_u`` declares that the drift does not depend on the law
    of the backward variable; only such problems admit a pointwise inverse.
    """

    drift: Callable | None
    driver: Callable
    terminal: Callable
    drift_inverse: Callable
    measure_free_in_u: bool = True
    common_noise_aware: bool = False


@dataclass(frozen=True)
class MfgcCoefficients:
    """Gradients defining a game of controls: running cost in (x, control),
    terminal cost in x."""

    position_cost_grad: Callable   # (x, control, cloud) -> (n, d)
    control_cost_grad: Callable    # (x, control, cloud) -> (n, d)
    terminal_cost_grad: Callable   # (x, cloud) -> (n, d)


@dataclass(frozen=True)
class BenchmarkParams:
    """Scalar linear benchmark with an additive mean-field generator term."""

    a: float = 1.0
    b: float = 1.0
    c: float = 0.0
    sigma: float = 1.0
    x0: float = 1.0
    horizon: float = 10.0
    mean_field_fn: Callable = field(default=lambda x: np.arctan(x - 1.0))

    def __post_init__(self):
        if self.a < 0 or self.b < 0 or self.c < 0:
            raise ValueError("a, b, c must be nonnegative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


def benchmark_coefficients(params: BenchmarkParams) -> ProblemCoefficients:
    """Coefficients ``drift = a u``, ``driver = c x + mean(f(x_k - xbar))``,
    ``terminal = b x``, ``drift_inverse = a / a``.

    The mean-field statistic is a single scalar per time step, computed from
    the cloud in O(n) and shared by every particle.
    """
    if params.a == 0:
        raise ValueError("a = 0 leaves the drift without an inverse")
    a, b, c, f = params.a, params.b, params.c, params.mean_field_fn

    def drift(x, u, cloud):
        return a * u

    def driver(x, u, cloud):
        centered = cloud.x - cloud.x.mean(axis=0)
        term = f(centered).mean(axis=0)
        return c * x + term

    def terminal(x, cloud):
        return b * x

    def drift_inverse(x, alpha, cloud):
        return alpha / a

    return ProblemCoefficients(drift=drift, driver=driver, terminal=terminal,
                               drift_inverse=drift_inverse)


def mfgc_as_fbsde(mfgc: MfgcCoefficients) -> ProblemCoefficients:
    """Wire a game-of-controls set into the generic backward pass.

    The control is passed through unchanged in place of the inverted drift,
    so the generator sees ``position_cost_grad(x, control, cloud)`` exactly;
    no inverse is ever required.
    """
    def driver(x, u, cloud):
        return mfgc.position_cost_grad(x, u, cloud)

    def drift_inverse(x, alpha, cloud):
        return alpha

    def terminal(x, cloud):
        return mfgc.terminal_cost_grad(x, cloud)

    return ProblemCoefficients(drift=None, driver=driver, terminal=terminal,
                               drift_inverse=drift_inverse)


def measure_free_problem(drift: Callable, driver: Callable, terminal: Callable,
                         drift_inverse: Callable | None = None,
                         inverse_tol: float = 1e-12) -> ProblemCoefficients:
    """Adapt pointwise coefficients ``drift(x, u)``, ``driver(x, u)``,
    ``terminal(x)`` that ignore the empirical measure.

    When no closed-form ``drift_inverse(x, a)`` is supplied, a Newton
    inversion of the drift is used; the drift must then be strongly monotone
    in ``u`` pointwise.
    """
    def wrapped_drift(x, u, cloud):
        return drift(x, u)

    def wrapped_driver(x, u, cloud):
        return driver(x, u)

    def wrapped_terminal(x, cloud):
        return terminal(x)

    if drift_inverse is not None:
        def wrapped_inverse(x, alpha, cloud):
            return drift_inverse(x, alpha)
    else:
        def wrapped_inverse(x, alpha, cloud):
            from .operator import pointwise_inverse
            return pointwise_inverse(wrapped_drift, x, alpha, tol=inverse_tol)

    return ProblemCoefficients(drift=wrapped_drift, driver=wrapped_driver,
                               terminal=wrapped_terminal,
                               drift_inverse=wrapped_inverse)


def lift_common_blind(coeffs: ProblemCoefficients) -> ProblemCoefficients:
    """Present a plain coefficient set to the common-noise pipeline; the extra
    ``p`` argument is ignored everywhere."""
    if coeffs.common_noise_aware:
        raise ValueError("coefficient set is already common-noise aware")

    def drift(x, p, u, cloud):
        return coeffs.drift(x, u, cloud)

    def driver(x, p, u, cloud):
        return coeffs.driver(x, u, cloud)

    def terminal(x, p, cloud):
        return coeffs.terminal(x, cloud)

    def drift_inverse(x, p, alpha, cloud):
        return coeffs.drift_inverse(x, alpha, cloud)

    return ProblemCoefficients(
        drift=None if coeffs.drift is None else drift,
        driver=driver, terminal=terminal, drift_inverse=drift_inverse,
        measure_free_in_u=coeffs.measure_free_in_u, common_noise_aware=True)


def shifted_benchmark_coefficients(params: BenchmarkParams) -> ProblemCoefficients:
    """Benchmark lifted to additive common noise by the state shift
    ``y = x - p``.

    Only the terminal condition picks up the shift, ``b (y + p)``: the drift
    is state-free and the generator's mean-field term depends on centered
    states, which the common shift leaves unchanged.
    """
    base = benchmark_coefficients(params)
    b = params.b

    def drift(x, p, u, cloud):
        return base.drift(x, u, cloud)

    def driver(x, p, u, cloud):
        return base.driver(x, u, cloud)

    def terminal(x, p, cloud):
        return b * (x + p)

    def drift_inverse(x, p, alpha, cloud):
        return base.drift_inverse(x, alpha, cloud)

    return ProblemCoefficients(drift=drift, driver=driver, terminal=terminal,
                               drift_inverse=drift_inverse,
                               common_noise_aware=True)


def validate_round_trip(coeffs: ProblemCoefficients, rng: np.random.Generator,
                        n_samples: int = 1000, dim: int = 1,
                        tol: float = 1e-10) -> None:
    """Registration check: ``drift(x, drift_inverse(x, a, cloud), cloud) == a``
    on sampled points.  Raises on failure or when no drift is available."""
    if coeffs.drift is None:
        raise ValueError("coefficient set exposes no drift to round-trip")
    if coeffs.common_noise_aware:
        x = rng.standard_normal((n_samples, dim))
        p = rng.standard_normal((n_samples, dim))
        alpha = rng.standard_normal((n_samples, dim))
        cloud = SampleCloud(x=x, control=alpha)
        back = coeffs.drift(x, p, coeffs.drift_inverse(x, p, alpha, cloud), cloud)
    else:
        x = rng.standard_normal((n_samples, dim))
        alpha = rng.standard_normal((n_samples, dim))
        cloud = SampleCloud(x=x, control=alpha)
        back = coeffs.drift(x, coeffs.drift_inverse(x, alpha, cloud), cloud)
    err = float(np.max(np.abs(back - alpha)))
    if err > tol:
        raise ValueError(f"drift/inverse round trip off by {err:.3e} (> {tol})")


# Named registries so text configs can reproduce a run exactly.
MEAN_FIELD_FNS: dict[str, Callable] = {
    "atan_shift": lambda x: np.arctan(x - 1.0),
    "identity": lambda x: x,
    "zero": lambda x: np.zeros_like(x),
}

COMMON_DRIFTS: dict[str, Callable] = {
    "zero": lambda p: np.zeros_like(p),
    "identity": lambda p: p,
}
