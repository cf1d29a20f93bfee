import numpy as np
import pytest

from mfbsde import (BasisSpec, ProblemCoefficients, SampleCloud, TimeGrid,
                    fit_conditional_expectation, generate_noise_bank,
                    lift_common_blind, measure_free_problem,
                    simulate_common_states, simulate_forward,
                    simulate_forward_common, solve_backward,
                    solve_backward_common, process_norm)

BASIS = BasisSpec()


def driftless_martingale_problem():
    return measure_free_problem(
        drift=lambda x, u: u,
        driver=lambda x, u: np.zeros_like(x),
        terminal=lambda x: x,
        drift_inverse=lambda x, a: a,
    )


def test_martingale_values_track_the_state():
    # driftless state, terminal value = state: conditional expectations give
    # back the state itself up to the regression noise floor; an
    # affine-spanning basis keeps that floor minimal
    grid = TimeGrid(2.0, 20)
    bank = generate_noise_bank(3, 10_000, grid, initial=1.0)
    control = np.zeros((10_000, 20, 1))
    paths = simulate_forward(control, bank, grid, sigma=0.5)
    values = solve_backward(paths, control, driftless_martingale_problem(),
                            BasisSpec(n_functions=2), grid)
    defect = process_norm(values[:, :-1] - paths[:, :-1], grid)
    scale = process_norm(paths[:, :-1], grid)
    assert defect <= 1e-2 * scale


def test_constant_terminal_survives_every_regression():
    grid = TimeGrid(1.0, 15)
    bank = generate_noise_bank(5, 300, grid, initial=0.0)
    control = np.zeros((300, 15, 1))
    paths = simulate_forward(control, bank, grid, sigma=1.0)
    coeffs = measure_free_problem(
        drift=lambda x, u: u,
        driver=lambda x, u: np.zeros_like(x),
        terminal=lambda x: np.full_like(x, -2.75),
        drift_inverse=lambda x, a: a,
    )
    values = solve_backward(paths, control, coeffs, BASIS, grid)
    assert np.max(np.abs(values + 2.75)) <= 1e-12


def test_one_step_recursion_matches_direct_oracle():
    # with a single step the sweep is one regression of
    # terminal(X_1) + dt * driver(X_1, inverse(X_1, alpha_0)) onto X_0
    grid = TimeGrid(0.5, 1)
    rng = np.random.default_rng(8)
    n = 500
    bank = generate_noise_bank(11, n, grid,
                               initial=lambda r, m, d: r.standard_normal((m, d)))
    control = rng.standard_normal((n, 1, 1))
    paths = simulate_forward(control, bank, grid, sigma=1.0)

    def drift_inverse(x, a, cloud):
        return np.tanh(a) + 0.5 * x

    def driver(x, u, cloud):
        return np.sin(x) * u + float(cloud.x.mean())

    def terminal(x, cloud):
        return x ** 2 - float(cloud.x.mean())

    coeffs = ProblemCoefficients(drift=None, driver=driver, terminal=terminal,
                                 drift_inverse=drift_inverse)
    values = solve_backward(paths, control, coeffs, BASIS, grid)

    x1 = paths[:, 1]
    cloud1 = SampleCloud(x=x1, control=control[:, 0])
    target = (terminal(x1, SampleCloud(x=x1, control=None))
              + grid.dt * driver(x1, drift_inverse(x1, control[:, 0], cloud1),
                                 cloud1))
    direct = fit_conditional_expectation(target, paths[:, 0], BASIS).fitted
    assert np.max(np.abs(values[:, 0] - direct)) <= 1e-12
    assert np.array_equal(values[:, 1],
                          terminal(x1, SampleCloud(x=x1, control=None)))


def test_driver_receives_step_end_cloud():
    # a spy coefficient records the measure argument; it must see exactly the
    # step-end sample cloud paired with the control of that step
    grid = TimeGrid(1.0, 4)
    rng = np.random.default_rng(13)
    n = 200
    bank = generate_noise_bank(17, n, grid, initial=0.5)
    control = rng.standard_normal((n, 4, 1))
    paths = simulate_forward(control, bank, grid, sigma=1.0)
    seen = []

    def driver(x, u, cloud):
        seen.append((cloud.x.mean(), cloud.x.var(), cloud.control.mean()))
        return np.zeros_like(x)

    coeffs = ProblemCoefficients(drift=None, driver=driver,
                                 terminal=lambda x, cloud: x,
                                 drift_inverse=lambda x, a, cloud: a)
    solve_backward(paths, control, coeffs, BASIS, grid)
    # the sweep runs j = 3, 2, 1, 0 and evaluates the driver at step end j + 1
    for step, (mx, vx, ma) in zip([3, 2, 1, 0], seen):
        assert mx == pytest.approx(paths[:, step + 1].mean(), rel=1e-14)
        assert vx == pytest.approx(paths[:, step + 1].var(), rel=1e-14)
        assert ma == pytest.approx(control[:, step].mean(), rel=1e-14)


def test_generator_at_step_start_mode():
    grid = TimeGrid(1.0, 3)
    rng = np.random.default_rng(19)
    n = 300
    bank = generate_noise_bank(23, n, grid, initial=0.0)
    control = rng.standard_normal((n, 3, 1))
    paths = simulate_forward(control, bank, grid, sigma=1.0)
    coeffs = measure_free_problem(
        drift=lambda x, u: u,
        driver=lambda x, u: x,
        terminal=lambda x: x,
        drift_inverse=lambda x, a: a,
    )
    values = solve_backward(paths, control, coeffs, BASIS, grid,
                            generator_at="step_start")
    fit = fit_conditional_expectation(values[:, 1], paths[:, 0], BASIS)
    expected0 = fit.fitted + grid.dt * paths[:, 0]
    assert np.max(np.abs(values[:, 0] - expected0)) <= 1e-12


def test_nonfinite_driver_reports_location():
    grid = TimeGrid(1.0, 3)
    bank = generate_noise_bank(29, 50, grid, initial=0.0)
    control = np.zeros((50, 3, 1))
    paths = simulate_forward(control, bank, grid, sigma=1.0)
    coeffs = ProblemCoefficients(
        drift=None,
        driver=lambda x, u, cloud: np.full_like(x, np.nan),
        terminal=lambda x, cloud: x,
        drift_inverse=lambda x, a, cloud: a)
    with pytest.raises(FloatingPointError, match="driver"):
        solve_backward(paths, control, coeffs, BASIS, grid)


class TestCommonBackward:
    def test_single_deterministic_common_path_is_bitwise_plain(self):
        grid = TimeGrid(1.0, 10)
        rng = np.random.default_rng(31)
        n = 400
        bank = generate_noise_bank(37, n, grid, initial=1.0, n_common=1)
        base = measure_free_problem(
            drift=lambda x, u: u,
            driver=lambda x, u: np.sin(x),
            terminal=lambda x: x,
            drift_inverse=lambda x, a: a,
        )
        lifted = lift_common_blind(base)
        control = rng.standard_normal((n, 10, 1))
        paths = simulate_forward(control, bank, grid, sigma=1.0)
        values = solve_backward(paths, control, base, BASIS, grid)

        p = simulate_common_states(lambda q: np.zeros_like(q), bank, grid, 0.0)
        control_c = control[:, :, None, :]
        paths_c = simulate_forward_common(control_c, bank, grid, sigma=1.0)
        values_c = solve_backward_common(paths_c, p, control_c, lifted, BASIS,
                                         grid)
        assert np.array_equal(paths_c[:, :, 0], paths)
        assert np.array_equal(values_c[:, :, 0], values)

    def test_common_only_terminal_is_constant_per_slice(self):
        grid = TimeGrid(1.0, 5)
        bank = generate_noise_bank(41, 100, grid, initial=0.0, n_common=3,
                                   common_initial=2.5)
        coeffs = ProblemCoefficients(
            drift=None,
            driver=lambda x, p, u, cloud: np.zeros_like(x),
            terminal=lambda x, p, cloud: p.copy(),
            drift_inverse=lambda x, p, a, cloud: a,
            common_noise_aware=True)
        p = simulate_common_states(lambda q: np.zeros_like(q), bank, grid, 0.0)
        control = np.zeros((100, 5, 3, 1))
        paths = simulate_forward_common(control, bank, grid, sigma=1.0)
        values = solve_backward_common(paths, p, control, coeffs, BASIS, grid)
        assert np.max(np.abs(values - 2.5)) <= 1e-12

    def test_per_slice_martingale(self):
        grid = TimeGrid(1.0, 8)
        bank = generate_noise_bank(43, 4000, grid, initial=1.0, n_common=2)
        coeffs = lift_common_blind(driftless_martingale_problem())
        p = simulate_common_states(lambda q: np.zeros_like(q), bank, grid, 0.5)
        control = np.zeros((4000, 8, 2, 1))
        paths = simulate_forward_common(control, bank, grid, sigma=0.5)
        values = solve_backward_common(paths, p, control, coeffs, BASIS, grid)
        for k in range(2):
            defect = process_norm(values[:, :-1, k] - paths[:, :-1, k], grid)
            scale = process_norm(paths[:, :-1, k], grid)
            assert defect <= 2e-2 * scale

    def test_rejects_plain_coefficients(self):
        grid = TimeGrid(1.0, 2)
        bank = generate_noise_bank(1, 20, grid, n_common=1)
        p = simulate_common_states(lambda q: np.zeros_like(q), bank, grid, 0.0)
        control = np.zeros((20, 2, 1, 1))
        paths = simulate_forward_common(control, bank, grid, sigma=0.0)
        with pytest.raises(ValueError, match="common-noise aware"):
            solve_backward_common(paths, p, control,
                                  driftless_martingale_problem(), BASIS, grid)
