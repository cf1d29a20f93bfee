"""Closed-form / quadrature reference solution of the scalar benchmark, used
to validate solver output.

For the benchmark without the linear generator term the backward value is
affine in the state, ``U_t = slope(t) X_t + offset(t)``, with

* ``slope(t) = b / (1 + a b (T - t))``, solving ``slope' = a slope^2`` with
  terminal value ``b``;
* ``offset`` solving ``offset' = a slope offset - e`` with ``offset(T) = 0``,
  where ``e(t)`` is the mean-field average of the generator nonlinearity
  against the Gaussian law of the centered state.

``offset`` is computed from the antiderivative form

    offset(t) = (1 / (1 + a b (T - t))) * integral_t^T e(s) (1 + a b (T - s)) ds,

whose lower limit makes the ODE residual vanish; the residual check below is
the self-verification of that choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import BenchmarkParams


def _check_range(t: np.ndarray, horizon: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > horizon):
        raise ValueError(f"time outside [0, {horizon}]")
    return t


def feedback_slope(t, a: float, b: float, horizon: float):
    """Affine feedback slope ``b / (1 + a b (T - t))``."""
    t = _check_range(t, horizon)
    return b / (1.0 + a * b * (horizon - t))


def feedback_slope_derivative(t, a: float, b: float, horizon: float):
    """Hand-differentiated closed form ``a b^2 / (1 + a b (T - t))^2``."""
    t = _check_range(t, horizon)
    q = 1.0 + a * b * (horizon - t)
    return a * b * b / (q * q)


def centered_state_variance(t, a: float, b: float, sigma: float, horizon: float):
    """Variance of the centered state for a deterministic initial state,
    in the product form ``2 sigma t (1 + a b (T - t)) / (1 + a b T)``.

    Algebraically equal to ``(2 sigma / (a b)) (q - q^2 / Q)`` with
    ``q = 1 + a b (T - t)``, ``Q = 1 + a b T``, but manifestly nonnegative,
    exactly zero at ``t = 0``, and finite in the ``a b -> 0`` limit (where it
    reduces to the Brownian variance ``2 sigma t``)."""
    if a * b < 0:
        raise ValueError("variance formula requires a * b >= 0")
    t = _check_range(t, horizon)
    return 2.0 * sigma * t * (1.0 + a * b * (horizon - t)) / (1.0 + a * b * horizon)


def gaussian_expectation(fn, variance, order: int = 64):
    """Expectation of ``fn`` against centered normals of the given variances,
    by Gauss-Hermite quadrature with the change of variables
    ``x = sqrt(2 variance) xi``.  A zero variance collapses to ``fn(0)``."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be nonnegative")
    scalar = variance.ndim == 0
    variance = np.atleast_1d(variance)
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    x = np.sqrt(2.0 * variance)[:, None] * nodes[None, :]
    out = fn(x) @ weights / np.sqrt(np.pi)
    zero = variance == 0.0
    if np.any(zero):
        out = np.where(zero, float(np.asarray(fn(np.zeros(1)))[0]), out)
    return float(out[0]) if scalar else out


@dataclass
class BenchmarkOracle:
    """Reference curves for one parameter set; all evaluations vectorize over
    time arrays.

    The offset integral is accumulated from the terminal time with one Simpson
    rule per panel (midpoints included), then completed to arbitrary times by
    a partial-panel Simpson rule, so offset values are smooth and node-free.
    """

    params: BenchmarkParams
    quad_order: int = 64
    integration_panels: int = 2000

    def __post_init__(self):
        if self.params.c != 0.0:
            raise ValueError("closed-form curves only cover c = 0")
        p = self.params
        n = self.integration_panels
        self.nodes = np.linspace(0.0, p.horizon, n + 1)
        mids = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        w_nodes = self._weighted_average(self.nodes)
        w_mids = self._weighted_average(mids)
        h = p.horizon / n
        panel = (h / 6.0) * (w_nodes[:-1] + 4.0 * w_mids + w_nodes[1:])
        # node_integrals[k] = integral of the weighted average from nodes[k] to T
        tail = np.concatenate([np.cumsum(panel[::-1])[::-1], [0.0]])
        self.node_integrals = tail

    def _weighted_average(self, t: np.ndarray) -> np.ndarray:
        p = self.params
        e = self.mean_field_average(t)
        return e * (1.0 + p.a * p.b * (p.horizon - t))

    def slope(self, t):
        p = self.params
        return feedback_slope(t, p.a, p.b, p.horizon)

    def variance(self, t):
        p = self.params
        return centered_state_variance(t, p.a, p.b, p.sigma, p.horizon)

    def mean_field_average(self, t):
        """``e(t)``: the generator nonlinearity averaged against the law of the
        centered state."""
        return gaussian_expectation(self.params.mean_field_fn, self.variance(t),
                                    self.quad_order)

    def offset(self, t):
        p = self.params
        t = np.atleast_1d(_check_range(t, p.horizon))
        k = np.minimum(np.searchsorted(self.nodes, t, side="right") - 1,
                       self.integration_panels - 1)
        k = np.maximum(k, 0)
        upper = self.nodes[k + 1]
        mid = 0.5 * (t + upper)
        length = upper - t
        partial = (length / 6.0) * (self._weighted_average(t)
                                    + 4.0 * self._weighted_average(mid)
                                    + self._weighted_average(upper))
        integral = self.node_integrals[k + 1] + partial
        out = integral / (1.0 + p.a * p.b * (p.horizon - t))
        return out if out.shape != (1,) else float(out[0])


def slope_ode_residual(params: BenchmarkParams, n_points: int = 1000) -> float:
    """Max of ``|slope' - a slope^2|`` with the derivative from the
    hand-differentiated closed form; rounding-level when the slope is right."""
    t = np.linspace(0.0, params.horizon, n_points)
    d = feedback_slope_derivative(t, params.a, params.b, params.horizon)
    s = feedback_slope(t, params.a, params.b, params.horizon)
    return float(np.max(np.abs(d - params.a * s * s)))


def offset_ode_residual(offset_fn, slope_fn, mean_field_fn, a: float,
                        horizon: float, n_points: int = 2000,
                        h: float = 1e-4) -> float:
    """Max of ``|offset' - (a slope offset - e)|`` on an interior grid of
    ``n_points`` times, the derivative by central differences of step ``h``.

    Works on arbitrary callables, which is what makes deliberate fault
    injection (a corrupted offset) detectable.
    """
    t = np.linspace(h, horizon - h, n_points)
    derivative = (np.asarray(offset_fn(t + h)) - np.asarray(offset_fn(t - h))) / (2 * h)
    rhs = a * np.asarray(slope_fn(t)) * np.asarray(offset_fn(t)) - np.asarray(mean_field_fn(t))
    return float(np.max(np.abs(derivative - rhs)))


@dataclass
class FeedbackFit:
    """Per-time-step affine regression of backward values on states."""

    slopes: np.ndarray
    offsets: np.ndarray
    degenerate: np.ndarray   # True where the state slice had zero spread


def fit_affine_feedback(paths: np.ndarray, values: np.ndarray) -> FeedbackFit:
    """Ordinary least squares of ``values[:, j]`` on ``paths[:, j]`` for every
    grid time; scalar states only.

    A zero-spread slice (the deterministic initial state) is flagged and
    reported as slope 0 with the sample mean as offset.
    """
    paths = np.asarray(paths, dtype=float)
    values = np.asarray(values, dtype=float)
    if paths.ndim == 3:
        if paths.shape[2] != 1:
            raise ValueError("affine feedback extraction is scalar-state only")
        paths = paths[:, :, 0]
        values = values[:, :, 0]
    if paths.shape != values.shape:
        raise ValueError(f"shape mismatch: {paths.shape} vs {values.shape}")
    m = paths.shape[1]
    slopes = np.zeros(m)
    offsets = np.zeros(m)
    degenerate = np.zeros(m, dtype=bool)
    for j in range(m):
        x = paths[:, j]
        y = values[:, j]
        xc = x - x.mean()
        var = float(xc @ xc)
        if var == 0.0:
            degenerate[j] = True
            offsets[j] = y.mean()
            continue
        slopes[j] = float(xc @ (y - y.mean())) / var
        offsets[j] = y.mean() - slopes[j] * x.mean()
    return FeedbackFit(slopes=slopes, offsets=offsets, degenerate=degenerate)
