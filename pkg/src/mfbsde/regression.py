"""Least-squares conditional-expectation estimator on a probabilists' Hermite
feature basis.

A fit standardizes each regressor coordinate to mean 0 / variance 1 before
evaluating the polynomial features; the span of polynomials is unchanged, but
the design stays well conditioned for states of order 10 and beyond.
Coordinates that are exactly constant in the sample carry no information and
are excluded from the feature map, so a regression on a deterministic slice
degenerates gracefully to the sample mean.

For a single active coordinate the features are ``He_0 .. He_{K-1}`` with
``K = n_functions``; for several active coordinates the features are tensor
products of per-coordinate Hermite polynomials truncated by total degree and
capped in count.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.linalg

RIDGE_SCALE = 1e-10  # lambda = RIDGE_SCALE * trace(A^T A) / n_features


@dataclass(frozen=True)
class BasisSpec:
    """Size knobs of the regression basis."""

    n_functions: int = 10       # 1-d feature count, constant included
    max_total_degree: int = 4   # tensor truncation for multi-d regressors
    max_features: int = 35      # hard cap on tensor features

    def __post_init__(self):
        if self.n_functions < 1:
            raise ValueError("n_functions must be >= 1")
        if self.max_total_degree < 0 or self.max_features < 1:
            raise ValueError("invalid tensor truncation")


def hermite_features(z: np.ndarray, count: int) -> np.ndarray:
    """Columns ``He_0(z) .. He_{count-1}(z)`` of the probabilists' Hermite
    ladder, built with the recurrence ``He_{n+1} = z He_n - n He_{n-1}``."""
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape + (count,))
    out[..., 0] = 1.0
    if count > 1:
        out[..., 1] = z
    for n in range(1, count - 1):
        out[..., n + 1] = z * out[..., n] - n * out[..., n - 1]
    return out


def _tensor_indices(n_coords: int, max_degree: int, cap: int) -> list[tuple[int, ...]]:
    idx = [t for t in product(range(max_degree + 1), repeat=n_coords)
           if sum(t) <= max_degree]
    idx.sort(key=lambda t: (sum(t), t))
    return idx[:cap]


class FeatureMap:
    """Standardization plus multi-index set, frozen against a regressor sample.

    Constant sample coordinates carry no information and are excluded before
    any statistic is computed; the surviving coordinates are standardized on a
    contiguous copy, so a regression whose extra coordinates are all constant
    runs through arithmetic identical to the lower-dimensional one.
    """

    def __init__(self, sample: np.ndarray, spec: BasisSpec):
        sample = np.asarray(sample, dtype=float)
        if sample.ndim == 1:
            sample = sample[:, None]
        self.n_coords = sample.shape[1]
        self.kept = np.flatnonzero(np.any(sample != sample[0], axis=0))
        self.spec = spec
        r = len(self.kept)
        if r:
            active = np.ascontiguousarray(sample[:, self.kept])
            self.means = active.mean(axis=0)
            self.scales = active.std(axis=0)
        else:
            self.means = np.empty(0)
            self.scales = np.empty(0)
        if r == 0:
            self.indices = [()]
        elif r == 1:
            self.indices = [(k,) for k in range(spec.n_functions)]
        else:
            self.indices = _tensor_indices(r, spec.max_total_degree,
                                           spec.max_features)
        self.max_degree = max((max(t) for t in self.indices if t), default=0)

    @property
    def n_features(self) -> int:
        return len(self.indices)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Feature matrix of shape ``(n, n_features)``; column 0 is constant 1."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.n_coords:
            raise ValueError(
                f"regressor has {x.shape[1]} coordinates, map expects "
                f"{self.n_coords}"
            )
        n = x.shape[0]
        if not self.kept.size:
            return np.ones((n, 1))
        active = np.ascontiguousarray(x[:, self.kept])
        z = (active - self.means) / self.scales
        ladders = hermite_features(z, self.max_degree + 1)  # (n, r, deg+1)
        out = np.empty((n, self.n_features))
        for m, multi in enumerate(self.indices):
            col = ladders[:, 0, multi[0]].copy()
            for c in range(1, len(multi)):
                col *= ladders[:, c, multi[c]]
            out[:, m] = col
        return out


class RegressionFit:
    """Least-squares minimizer over the span of a :class:`FeatureMap`."""

    def __init__(self, feature_map: FeatureMap, coefficients: np.ndarray,
                 fitted: np.ndarray, ridge_lambda: float = 0.0):
        self.feature_map = feature_map
        self.coefficients = coefficients      # (n_features, d_out)
        self.fitted = fitted                  # (n_samples, d_out)
        self.ridge_lambda = ridge_lambda      # 0 when plain least squares ran

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.feature_map.evaluate(x) @ self.coefficients


def fit_conditional_expectation(targets: np.ndarray, regressors: np.ndarray,
                                spec: BasisSpec) -> RegressionFit:
    """Project ``targets`` onto the feature span of ``regressors``.

    The normal route is a rank-revealing QR solve; a rank-deficient design
    falls back to a tiny ridge (``lambda = 1e-10 trace(A^T A)/K``) instead of
    failing.  Fitted values are the conditional-expectation estimate.
    """
    targets = np.asarray(targets, dtype=float)
    squeeze = targets.ndim == 1
    if squeeze:
        targets = targets[:, None]
    if not np.isfinite(targets).all():
        raise ValueError("targets contain non-finite entries")
    fmap = FeatureMap(regressors, spec)
    design = fmap.evaluate(regressors)
    n, k = design.shape
    if n < k:
        raise ValueError(f"{n} samples cannot support {k} features")
    coef, _, rank, _ = scipy.linalg.lstsq(design, targets,
                                          lapack_driver="gelsy")
    lam = 0.0
    if rank < k:
        gram = design.T @ design
        lam = RIDGE_SCALE * np.trace(gram) / k
        coef = np.linalg.solve(gram + lam * np.eye(k), design.T @ targets)
    fitted = design @ coef
    if squeeze:
        coef = coef[:, 0]
        fitted = fitted[:, 0]
    return RegressionFit(fmap, coef, fitted, ridge_lambda=lam)
