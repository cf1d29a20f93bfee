"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
(run with ``pytest tests/test_acceptance.py -v -s`` to see them).

The reference configuration is the solver's reproduction target: scalar
benchmark with unit parameters, horizon 10, shifted-arctan mean-field term,
constant step 0.08, 100 time steps, 10000 paths, 200 iterations, seed 101.
"""

import time

import numpy as np
import pytest

import mfbsde as m

SEED = 101
BASIS = m.BasisSpec()


def _report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture(scope="module")
def reference_run():
    params = m.BenchmarkParams()
    grid = m.TimeGrid(10.0, 100)
    bank = m.generate_noise_bank(SEED, 10_000, grid, initial=params.x0)
    coeffs = m.benchmark_coefficients(params)
    ctx = m.OperatorContext(coefficients=coeffs, bank=bank, grid=grid,
                            basis=BASIS, sigma=params.sigma)
    config = m.SolverConfig(mode="constant", step=0.08, stop_threshold=0.0,
                            max_iterations=200)
    tic = time.perf_counter()
    report = m.extragradient(ctx.residual, np.zeros((10_000, 100, 1)), config,
                             grid)
    runtime = time.perf_counter() - tic
    return {"params": params, "grid": grid, "bank": bank, "coeffs": coeffs,
            "ctx": ctx, "report": report, "runtime": runtime}


def test_criterion_1_slope_reproduction(reference_run):
    report = reference_run["report"]
    fit = m.fit_log_error_slope(report, burn_in=30, upto=200)
    ok = (-0.089 <= fit.slope <= -0.064) and fit.r_squared >= 0.98
    _report(1, "slope reproduction", ok,
            f"slope {fit.slope:.5f} in [-0.089, -0.064], "
            f"r^2 {fit.r_squared:.5f} >= 0.98, "
            f"runtime {reference_run['runtime']:.0f}s")
    assert -0.089 <= fit.slope <= -0.064
    assert fit.r_squared >= 0.98
    assert reference_run["runtime"] <= 300.0


def test_criterion_2_residual_floor(reference_run):
    # As specified: the reference run reaches 1e-10 within its 200 iterations.
    # The observed contraction (criterion 1's own slope band) forbids that:
    # exp(-0.0764 * 200) is a 2e-7 relative drop from an initial residual of
    # about 10, so the residual at iteration 200 sits near 1e-6; the 1e-10
    # level is reached around iteration 320 and the run bottoms out near the
    # paper-scale 1e-13 floor by iteration 400.
    best = float(reference_run["report"].eps_last.min())
    ok = best <= 1e-10
    _report(2, "residual floor", ok,
            f"min eps over 200 iterations {best:.3e} vs 1e-10")
    assert best <= 1e-10


def test_criterion_3_feedback_coefficients(reference_run):
    params = reference_run["params"]
    grid = reference_run["grid"]
    control = reference_run["report"].control_last
    paths = m.simulate_forward(control, reference_run["bank"], grid,
                               params.sigma)
    values = m.solve_backward(paths, control, reference_run["coeffs"], BASIS,
                              grid)
    feedback = m.fit_affine_feedback(paths, values)
    oracle = m.BenchmarkOracle(params)
    times = grid.times()
    slope_err = float(np.max(np.abs(feedback.slopes[1:]
                                    - oracle.slope(times[1:]))))
    offset_err = float(np.max(np.abs(feedback.offsets[1:]
                                     - oracle.offset(times[1:]))))
    ok = slope_err <= 0.05 and offset_err <= 0.10
    _report(3, "feedback coefficients", ok,
            f"max slope error {slope_err:.4f} <= 0.05, "
            f"max offset error {offset_err:.4f} <= 0.10")
    assert slope_err <= 0.05
    assert offset_err <= 0.10


def test_criterion_4_oracle_self_consistency():
    params = m.BenchmarkParams()
    oracle = m.BenchmarkOracle(params)
    slope_res = m.slope_ode_residual(params, n_points=1000)
    terminal = oracle.offset(params.horizon)
    offset_res = m.offset_ode_residual(oracle.offset, oracle.slope,
                                       oracle.mean_field_average, params.a,
                                       params.horizon, n_points=2000)
    mc_checks = []
    rng = np.random.default_rng(777)  # fresh seed, independent of the solver
    for t in (0.0, params.horizon / 2, params.horizon):
        var = oracle.variance(t)
        quad = oracle.mean_field_average(t)
        draws = params.mean_field_fn(
            rng.normal(0.0, np.sqrt(var), size=10_000_000))
        se = draws.std() / np.sqrt(draws.size)
        # the 1e-13 term allows for the pairwise-summation rounding of the
        # 1e7-term mean itself, which dominates when the law is a point mass
        mc_checks.append(bool(abs(quad - draws.mean()) <= 3 * se + 1e-13))
    ok = (slope_res <= 1e-12 and terminal == 0.0 and offset_res <= 1e-6
          and all(mc_checks))
    _report(4, "oracle self-consistency", ok,
            f"slope ODE residual {slope_res:.2e} <= 1e-12, terminal offset "
            f"{terminal!r} == 0, offset ODE residual {offset_res:.2e} <= 1e-6, "
            f"quadrature vs 1e7-sample Monte Carlo at t in (0, T/2, T): "
            f"{mc_checks}")
    assert slope_res <= 1e-12
    assert terminal == 0.0
    assert offset_res <= 1e-6
    assert all(mc_checks)


def test_criterion_5_gap_inequality_suite():
    rng = np.random.default_rng(55)
    worst = -np.inf
    for _ in range(100):
        n = int(rng.integers(1, 21))
        dim = int(rng.integers(1, 9))
        gammas = rng.uniform(0.05, 2.0) * np.arange(1, n + 2) ** -rng.uniform(0, 0.99)
        first = rng.standard_normal((n, dim)) * rng.uniform(0.1, 5)
        half = rng.standard_normal((n, dim)) * rng.uniform(0.1, 5)
        start = rng.standard_normal(dim)
        probe = rng.standard_normal(dim)
        lhs, rhs = m.dual_extrapolation_gap_sides(gammas, first, half, start,
                                                  probe)
        worst = max(worst, (lhs - rhs) / max(abs(lhs), abs(rhs), 1.0))
    ok = worst <= 1e-9
    _report(5, "step-size gap inequality", ok,
            f"worst normalized excess over 100 instances {worst:.2e} <= 1e-9")
    assert worst <= 1e-9


def test_criterion_6_discrete_monotonicity():
    params = m.BenchmarkParams()
    grid = m.TimeGrid(10.0, 50)
    bank = m.generate_noise_bank(SEED, 10_000, grid, initial=params.x0)
    ctx = m.OperatorContext(coefficients=m.benchmark_coefficients(params),
                            bank=bank, grid=grid, basis=BASIS,
                            sigma=params.sigma)
    rng = np.random.default_rng(SEED)
    worst = np.inf
    for _ in range(20):
        w1 = rng.uniform(-1, 1, size=3)
        w2 = rng.uniform(-1, 1, size=3)
        mk = lambda w: (lambda j, x: w[0] + w[1] * np.tanh(x) + w[2] * np.sin(x))
        c1, _ = m.simulate_feedback(mk(w1), bank, grid, params.sigma)
        c2, _ = m.simulate_feedback(mk(w2), bank, grid, params.sigma)
        gap = m.process_inner(ctx.residual(c1) - ctx.residual(c2), c1 - c2,
                              grid)
        norm2 = m.process_norm(c1 - c2, grid) ** 2
        worst = min(worst, gap / norm2)
    ok = worst >= -1e-3
    _report(6, "discrete monotonicity", ok,
            f"worst gap / |difference|^2 over 20 pairs {worst:.4f} >= -1e-3")
    assert worst >= -1e-3


def test_criterion_7_degenerate_common_noise_equivalence():
    params = m.BenchmarkParams(horizon=2.0)
    grid = m.TimeGrid(2.0, 20)
    n_paths, iters = 500, 20
    plain = m.benchmark_coefficients(params)
    config = m.SolverConfig(mode="constant", step=0.08, stop_threshold=0.0,
                            max_iterations=iters)

    bank_plain = m.generate_noise_bank(SEED, n_paths, grid, initial=params.x0)
    ctx_plain = m.OperatorContext(coefficients=plain, bank=bank_plain,
                                  grid=grid, basis=BASIS, sigma=params.sigma)
    rep_plain = m.extragradient(ctx_plain.residual,
                                np.zeros((n_paths, 20, 1)), config, grid)

    deviations = {}
    for n_common in (1, 2):
        bank = m.generate_noise_bank(SEED, n_paths, grid, initial=params.x0,
                                     n_common=n_common)
        ctx = m.OperatorContext(
            coefficients=m.lift_common_blind(plain), bank=bank, grid=grid,
            basis=BASIS, sigma=params.sigma,
            common=m.CommonNoiseModel(drift=lambda p: np.zeros_like(p),
                                      sigma0=0.0))
        rep = m.extragradient(ctx.residual,
                              np.zeros((n_paths, 20, n_common, 1)), config,
                              grid)
        deviations[n_common] = float(np.max(np.abs(rep.eps_last
                                                   - rep_plain.eps_last)))
    ok = all(dev <= 1e-12 for dev in deviations.values())
    _report(7, "degenerate common-noise equivalence", ok,
            f"max per-iteration residual deviation: single path "
            f"{deviations[1]:.2e}, two paths {deviations[2]:.2e} (<= 1e-12)")
    assert deviations[1] == 0.0  # identical computation on one shared path
    assert deviations[2] <= 1e-12


def test_criterion_8_decreasing_step_averaged_decay():
    params = m.BenchmarkParams()
    grid = m.TimeGrid(10.0, 40)
    bank = m.generate_noise_bank(202, 2000, grid, initial=params.x0)
    ctx = m.OperatorContext(coefficients=m.benchmark_coefficients(params),
                            bank=bank, grid=grid, basis=BASIS,
                            sigma=params.sigma)
    config = m.SolverConfig(mode="decreasing", step=0.08, step_exponent=0.5,
                            stop_threshold=0.0, max_iterations=400,
                            track_averaged_residual=True)
    report = m.dual_extrapolation(ctx.residual, np.zeros((2000, 40, 1)),
                                  config, grid)
    eps_avg = report.eps_averaged
    ratio = float(eps_avg[400] / eps_avg[100])
    ok = ratio <= 0.7
    _report(8, "decreasing-step averaged decay", ok,
            f"eps(averaged) at 400 / at 100 = {ratio:.3f} <= 0.7")
    assert ratio <= 0.7


def test_criterion_9_byte_identical_reruns(tmp_path):
    def mapping(out, common=False):
        base = {
            "problem": {"name": "benchmark"},
            "grid": {"horizon": "1.0", "n_steps": "10", "n_paths": "300"},
            "solver": {"mode": "constant", "step": "0.1",
                       "max_iterations": "8"},
            "run": {"seed": str(SEED), "output_dir": str(out)},
        }
        if common:
            base["common"] = {"n_common": "2", "sigma0": "0.5",
                              "drift": "zero"}
            base["problem"]["name"] = "benchmark_shifted"
        return base

    identical = True
    details = []
    for common in (False, True):
        runner = m.run_common_noise_demo if common else m.run_benchmark
        arts_a = runner(m.config_from_mapping(
            mapping(tmp_path / f"a{common}", common)))["artifacts"]
        arts_b = runner(m.config_from_mapping(
            mapping(tmp_path / f"b{common}", common)))["artifacts"]
        for key in arts_a:
            same = arts_a[key].read_bytes() == arts_b[key].read_bytes()
            identical = identical and same
            details.append(f"{arts_a[key].name}: {'==' if same else '!='}")
    _report(9, "determinism", identical, ", ".join(details))
    assert identical
