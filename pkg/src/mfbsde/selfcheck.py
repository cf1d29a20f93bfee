"""Fast invariant suite behind the ``validate`` subcommand.

Each check is independent, seeded, and runs in well under a minute combined;
together they exercise the norm geometry, the step-size gap bound, the
regression identities, the reference-curve ODEs and bank reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import TimeGrid, generate_noise_bank, process_inner, process_norm
from .oracle import BenchmarkOracle, offset_ode_residual, slope_ode_residual
from .problems import BenchmarkParams
from .regression import BasisSpec, fit_conditional_expectation, hermite_features
from .solver import dual_extrapolation_gap_sides


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_norm_geometry(seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    grid = TimeGrid(horizon=3.0, n_steps=17)
    worst = 0.0
    for _ in range(50):
        a = rng.standard_normal((23, 17, 2)) * rng.uniform(0.1, 10)
        b = rng.standard_normal((23, 17, 2)) * rng.uniform(0.1, 10)
        na, nb = process_norm(a, grid), process_norm(b, grid)
        cs = abs(process_inner(a, b, grid)) - na * nb
        worst = max(worst, cs / (na * nb))
        c = rng.uniform(-5, 5)
        worst = max(worst, abs(process_norm(c * a, grid) - abs(c) * na) / max(na, 1e-300))
        worst = max(worst, abs(process_inner(a, a, grid) - na ** 2) / max(na ** 2, 1e-300))
    return CheckResult("norm geometry", worst <= 1e-12,
                       f"worst relative defect {worst:.2e}")


def check_gap_inequality(seed: int = 11, n_cases: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_cases):
        n = int(rng.integers(1, 21))
        dim = int(rng.integers(1, 9))
        gammas = rng.uniform(0.05, 2.0) * np.arange(1, n + 2) ** -rng.uniform(0.0, 0.99)
        first = rng.standard_normal((n, dim)) * rng.uniform(0.1, 5)
        half = rng.standard_normal((n, dim)) * rng.uniform(0.1, 5)
        start = rng.standard_normal(dim)
        probe = rng.standard_normal(dim)
        lhs, rhs = dual_extrapolation_gap_sides(gammas, first, half, start, probe)
        scale = max(abs(lhs), abs(rhs), 1.0)
        worst = max(worst, (lhs - rhs) / scale)
    return CheckResult("step-size gap bound", worst <= 1e-9,
                       f"worst normalized excess {worst:.2e}")


def check_regression_identities(seed: int = 13) -> CheckResult:
    rng = np.random.default_rng(seed)
    spec = BasisSpec()
    x = rng.standard_normal(4000) * 3 + 5
    y = 2.0 * x
    fit = fit_conditional_expectation(y, x, spec)
    affine_err = float(np.max(np.abs(fit.fitted - y)))
    refit = fit_conditional_expectation(fit.fitted, x, spec)
    idem_err = float(np.max(np.abs(refit.fitted - fit.fitted)))
    noisy = y + rng.standard_normal(x.shape)
    fit2 = fit_conditional_expectation(noisy, x, spec)
    design = fit2.feature_map.evaluate(x)
    resid = noisy - fit2.fitted
    ortho = float(np.max(np.abs(design.T @ resid))) / max(float(np.abs(noisy).sum()), 1.0)
    he2 = float(hermite_features(np.array([2.0]), 3)[0, 2])
    ok = affine_err <= 1e-10 and idem_err <= 1e-10 and ortho <= 1e-8 and he2 == 3.0
    return CheckResult(
        "regression identities", ok,
        f"affine {affine_err:.1e}, idempotence {idem_err:.1e}, "
        f"orthogonality {ortho:.1e}, He2(2) = {he2}")


def check_reference_curves() -> CheckResult:
    params = BenchmarkParams()
    oracle = BenchmarkOracle(params)
    slope_res = slope_ode_residual(params)
    terminal = abs(oracle.offset(params.horizon))
    offset_res = offset_ode_residual(oracle.offset, oracle.slope,
                                     oracle.mean_field_average, params.a,
                                     params.horizon)
    ok = slope_res <= 1e-12 and terminal == 0.0 and offset_res <= 1e-6
    return CheckResult(
        "reference curve ODEs", ok,
        f"slope residual {slope_res:.1e}, terminal offset {terminal:.1e}, "
        f"offset residual {offset_res:.1e}")


def check_bank_reproducibility(seed: int = 17) -> CheckResult:
    grid = TimeGrid(horizon=1.0, n_steps=8)
    one = generate_noise_bank(seed, 64, grid, initial=1.0)
    two = generate_noise_bank(seed, 64, grid, initial=1.0)
    other = generate_noise_bank(seed + 1, 64, grid, initial=1.0)
    same = (np.array_equal(one.increments, two.increments)
            and np.array_equal(one.x0, two.x0))
    differs = not np.array_equal(one.increments, other.increments)
    return CheckResult("bank reproducibility", same and differs,
                       f"same-seed identical: {same}, next seed differs: {differs}")


def validate_install() -> list[CheckResult]:
    """Run every check; all pass on a healthy install."""
    return [
        check_norm_geometry(),
        check_gap_inequality(),
        check_regression_identities(),
        check_reference_curves(),
        check_bank_reproducibility(),
    ]
