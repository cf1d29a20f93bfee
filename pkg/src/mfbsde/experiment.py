"""Reproducible experiment runner: config parsing, seeded end-to-end solves,
CSV artifact emission and the degenerate common-noise equivalence demo.

Configs are flat key = value text under section headers (INI grammar, read by
the standard-library parser into a typed mapping here); every referenced name
must exist in a registry and unknown keys are rejected rather than ignored.
The emitted CSVs carry 17 significant digits so downstream fits keep the full
float64 resolution, and contain nothing run-dependent beyond the data, so a
re-run with the same seed and config is byte-identical.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .forward import simulate_forward
from .backward import solve_backward
from .grids import TimeGrid, generate_noise_bank, process_norm
from .operator import CommonNoiseModel, OperatorContext
from .oracle import BenchmarkOracle, fit_affine_feedback
from .problems import (BenchmarkParams, COMMON_DRIFTS, MEAN_FIELD_FNS,
                       ProblemCoefficients, benchmark_coefficients,
                       lift_common_blind, measure_free_problem,
                       shifted_benchmark_coefficients, validate_round_trip)
from .regression import BasisSpec
from .solver import (DivergenceError, RunReport, SolverConfig,
                     dual_extrapolation, extragradient, fit_log_error_slope)


class ConfigError(Exception):
    """Malformed or inconsistent experiment configuration (exit code 3)."""


class ResourceLimitError(Exception):
    """Run refused upfront because its memory estimate exceeds the budget
    (exit code 4)."""


@dataclass(frozen=True)
class CommonNoiseConfig:
    n_common: int
    sigma0: float
    drift: str = "zero"
    p0: float = 0.0

    def __post_init__(self):
        if self.n_common < 1:
            raise ConfigError("common.n_common must be >= 1")
        if self.sigma0 < 0:
            raise ConfigError("common.sigma0 must be nonnegative")
        if self.drift not in COMMON_DRIFTS:
            raise ConfigError(f"unknown common drift {self.drift!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    problem_name: str
    problem_options: dict
    grid: TimeGrid
    n_paths: int
    basis: BasisSpec
    solver: SolverConfig
    seed: int
    output_dir: Path
    common: CommonNoiseConfig | None = None
    generator_at: str = "step_end"
    memory_budget_mb: float = 4096.0
    slope_burn_in: int = 30


@dataclass(frozen=True)
class ProblemSetup:
    """What a registry entry yields: coefficients plus simulation inputs."""

    coefficients: ProblemCoefficients
    sigma: float
    initial_value: float
    benchmark: BenchmarkParams | None = None  # set when reference curves exist


def _benchmark_params(options: dict, horizon: float) -> BenchmarkParams:
    known = {"a", "b", "c", "sigma", "x0", "mean_field_fn"}
    unknown = set(options) - known
    if unknown:
        raise ConfigError(f"unknown problem option(s): {sorted(unknown)}")
    fn_name = options.get("mean_field_fn", "atan_shift")
    if fn_name not in MEAN_FIELD_FNS:
        raise ConfigError(f"unknown mean_field_fn {fn_name!r}")
    try:
        return BenchmarkParams(
            a=float(options.get("a", 1.0)),
            b=float(options.get("b", 1.0)),
            c=float(options.get("c", 0.0)),
            sigma=float(options.get("sigma", 1.0)),
            x0=float(options.get("x0", 1.0)),
            horizon=horizon,
            mean_field_fn=MEAN_FIELD_FNS[fn_name],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _setup_benchmark(options: dict, horizon: float) -> ProblemSetup:
    params = _benchmark_params(options, horizon)
    coeffs = benchmark_coefficients(params)
    validate_round_trip(coeffs, np.random.default_rng(0))
    return ProblemSetup(coefficients=coeffs, sigma=params.sigma,
                        initial_value=params.x0, benchmark=params)


def _setup_benchmark_shifted(options: dict, horizon: float) -> ProblemSetup:
    params = _benchmark_params(options, horizon)
    coeffs = shifted_benchmark_coefficients(params)
    validate_round_trip(coeffs, np.random.default_rng(0))
    return ProblemSetup(coefficients=coeffs, sigma=params.sigma,
                        initial_value=params.x0, benchmark=params)


def _setup_quadratic_hamiltonian(options: dict, horizon: float) -> ProblemSetup:
    known = {"sigma", "x0"}
    unknown = set(options) - known
    if unknown:
        raise ConfigError(f"unknown problem option(s): {sorted(unknown)}")
    coeffs = measure_free_problem(
        drift=lambda x, u: u,
        driver=lambda x, u: np.zeros_like(x),
        terminal=lambda x: x,
        drift_inverse=lambda x, a: a,
    )
    return ProblemSetup(coefficients=coeffs,
                        sigma=float(options.get("sigma", 1.0)),
                        initial_value=float(options.get("x0", 1.0)))


PROBLEMS = {
    "benchmark": _setup_benchmark,
    "benchmark_shifted": _setup_benchmark_shifted,
    "quadratic_hamiltonian": _setup_quadratic_hamiltonian,
}


_SECTION_KEYS = {
    "problem": None,  # free-form, validated by the problem builder
    "grid": {"horizon", "n_steps", "n_paths"},
    "basis": {"n_functions", "max_total_degree", "max_features"},
    "solver": {"mode", "step", "step_exponent", "stop_threshold",
               "max_iterations", "stop_on", "track_averaged_residual"},
    "common": {"n_common", "sigma0", "drift", "p0"},
    "run": {"seed", "output_dir", "memory_budget_mb", "generator_at",
            "slope_burn_in"},
}

_BOOL_VALUES = {"true": True, "false": False, "yes": True, "no": False,
                "1": True, "0": False}


def default_benchmark_mapping() -> dict:
    """The reference configuration: gamma 0.08, 100 steps over [0, 10],
    10000 paths, 200 iterations."""
    return {
        "problem": {"name": "benchmark"},
        "grid": {"horizon": "10.0", "n_steps": "100", "n_paths": "10000"},
        "solver": {"mode": "constant", "step": "0.08",
                   "stop_threshold": "1e-13", "max_iterations": "200"},
        "run": {"seed": "101", "output_dir": "out"},
    }


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return {section: dict(parser[section]) for section in parser.sections()}


def apply_overrides(mapping: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings on top of a config mapping."""
    out = {sec: dict(keys) for sec, keys in mapping.items()}
    for item in overrides:
        head, sep, value = item.partition("=")
        if not sep or "." not in head:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        section, key = head.split(".", 1)
        out.setdefault(section, {})[key.strip()] = value.strip()
    return out


def _typed(section: str, keys: dict, name: str, cast, default):
    raw = keys.get(name)
    if raw is None:
        return default
    try:
        if cast is bool:
            return _BOOL_VALUES[str(raw).strip().lower()]
        return cast(raw)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{section}.{name}: cannot parse {raw!r}") from exc


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    unknown_sections = set(mapping) - set(_SECTION_KEYS)
    if unknown_sections:
        raise ConfigError(f"unknown section(s): {sorted(unknown_sections)}")
    for section, allowed in _SECTION_KEYS.items():
        if allowed is None or section not in mapping:
            continue
        bad = set(mapping[section]) - allowed
        if bad:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(bad)}")

    problem = dict(mapping.get("problem", {}))
    name = problem.pop("name", None)
    if name is None:
        raise ConfigError("[problem] must carry a name")
    if name not in PROBLEMS:
        raise ConfigError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}")

    gsec = mapping.get("grid", {})
    try:
        grid = TimeGrid(horizon=_typed("grid", gsec, "horizon", float, 10.0),
                        n_steps=_typed("grid", gsec, "n_steps", int, 100))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    n_paths = _typed("grid", gsec, "n_paths", int, 10000)
    if n_paths < 1:
        raise ConfigError("grid.n_paths must be positive")

    bsec = mapping.get("basis", {})
    try:
        basis = BasisSpec(
            n_functions=_typed("basis", bsec, "n_functions", int, 10),
            max_total_degree=_typed("basis", bsec, "max_total_degree", int, 4),
            max_features=_typed("basis", bsec, "max_features", int, 35))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    ssec = mapping.get("solver", {})
    try:
        solver = SolverConfig(
            mode=_typed("solver", ssec, "mode", str, "constant"),
            step=_typed("solver", ssec, "step", float, 0.08),
            step_exponent=_typed("solver", ssec, "step_exponent", float, 0.5),
            stop_threshold=_typed("solver", ssec, "stop_threshold", float, 0.0),
            max_iterations=_typed("solver", ssec, "max_iterations", int, 100),
            stop_on=_typed("solver", ssec, "stop_on", str, "last"),
            track_averaged_residual=_typed(
                "solver", ssec, "track_averaged_residual", bool, False))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    common = None
    if "common" in mapping:
        csec = mapping["common"]
        common = CommonNoiseConfig(
            n_common=_typed("common", csec, "n_common", int, 16),
            sigma0=_typed("common", csec, "sigma0", float, 0.0),
            drift=_typed("common", csec, "drift", str, "zero"),
            p0=_typed("common", csec, "p0", float, 0.0))

    rsec = mapping.get("run", {})
    generator_at = _typed("run", rsec, "generator_at", str, "step_end")
    if generator_at not in ("step_end", "step_start"):
        raise ConfigError("run.generator_at must be step_end or step_start")
    return ExperimentConfig(
        problem_name=name,
        problem_options=problem,
        grid=grid,
        n_paths=n_paths,
        basis=basis,
        solver=solver,
        seed=_typed("run", rsec, "seed", int, 101),
        output_dir=Path(_typed("run", rsec, "output_dir", str, "out")),
        common=common,
        generator_at=generator_at,
        memory_budget_mb=_typed("run", rsec, "memory_budget_mb", float, 4096.0),
        slope_burn_in=_typed("run", rsec, "slope_burn_in", int, 30),
    )


def _writable_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc}") from exc
    return path


def write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(format(float(v), ".17g") for v in row))
    path.write_text("\n".join(lines) + "\n")


def _log_eps(eps: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(eps)


def _solve(cfg: ExperimentConfig, ctx: OperatorContext,
           initial: np.ndarray) -> RunReport:
    runner = extragradient if cfg.solver.mode == "constant" else dual_extrapolation
    return runner(ctx.residual, initial, cfg.solver, cfg.grid)


def _emit_error_logs(cfg: ExperimentConfig, report: RunReport,
                     out: Path) -> tuple[dict, object]:
    artifacts = {}
    log_eps = _log_eps(report.eps_last)
    artifacts["error_log"] = out / "error_log.csv"
    write_csv(artifacts["error_log"], "iteration,ln_eps_error",
              zip(range(len(log_eps)), log_eps))
    fit = None
    usable = (report.eps_last[cfg.slope_burn_in:] > 0).sum()
    if len(report.eps_last) - cfg.slope_burn_in >= 10 and usable >= 10:
        fit = fit_log_error_slope(report, burn_in=cfg.slope_burn_in)
        ks = np.arange(cfg.slope_burn_in, len(report.eps_last))
        artifacts["linear_regression"] = out / "linear_regression.csv"
        write_csv(artifacts["linear_regression"], "iteration,ln_eps_fit",
                  zip(ks, fit.intercept + fit.slope * ks))
    return artifacts, fit


def run_benchmark(cfg: ExperimentConfig) -> dict:
    """End-to-end seeded benchmark run; writes the artifact set and returns
    paths, the report and the slope fit."""
    setup = PROBLEMS[cfg.problem_name](cfg.problem_options, cfg.grid.horizon)
    if cfg.common is not None:
        raise ConfigError("use the common-noise entry point for [common] configs")
    if setup.coefficients.common_noise_aware:
        raise ConfigError(f"problem {cfg.problem_name!r} needs a [common] section")
    out = _writable_dir(cfg.output_dir)
    bank = generate_noise_bank(cfg.seed, cfg.n_paths, cfg.grid,
                               initial=setup.initial_value)
    ctx = OperatorContext(coefficients=setup.coefficients, bank=bank,
                          grid=cfg.grid, basis=cfg.basis, sigma=setup.sigma,
                          generator_at=cfg.generator_at)
    initial = np.zeros((cfg.n_paths, cfg.grid.n_steps, 1))
    report = _solve(cfg, ctx, initial)
    artifacts, fit = _emit_error_logs(cfg, report, out)

    if setup.benchmark is not None and setup.benchmark.c == 0.0:
        paths = simulate_forward(report.control_last, bank, cfg.grid, setup.sigma)
        values = solve_backward(paths, report.control_last, setup.coefficients,
                                cfg.basis, cfg.grid, cfg.generator_at)
        feedback = fit_affine_feedback(paths, values)
        times = cfg.grid.times()
        artifacts["observed_eta"] = out / "observed_eta.csv"
        write_csv(artifacts["observed_eta"], "t,value",
                  zip(times[1:], feedback.slopes[1:]))
        artifacts["observed_theta"] = out / "observed_theta.csv"
        write_csv(artifacts["observed_theta"], "t,value",
                  zip(times[1:], feedback.offsets[1:]))
        oracle = BenchmarkOracle(setup.benchmark)
        fine = np.linspace(0.0, cfg.grid.horizon, 2001)
        artifacts["true_eta"] = out / "true_eta.csv"
        write_csv(artifacts["true_eta"], "t,value", zip(fine, oracle.slope(fine)))
        artifacts["true_theta"] = out / "true_theta.csv"
        write_csv(artifacts["true_theta"], "t,value", zip(fine, oracle.offset(fine)))

    summary = {
        "artifacts": artifacts,
        "report": report,
        "slope_fit": fit,
        "final_eps": float(report.eps_last[-1]),
    }
    print(f"stop reason: {report.stop_reason} after {report.n_iterations} iterations")
    print(f"final residual: {report.eps_last[-1]:.6e}")
    if fit is not None:
        print(f"log-residual slope: {fit.slope:.6f} (r^2 = {fit.r_squared:.4f})")
    return summary


def _common_memory_estimate_mb(cfg: ExperimentConfig) -> float:
    live_grids = 8  # control, half step, accumulator/average, residual, states, values
    floats = cfg.n_paths * (cfg.grid.n_steps + 1) * cfg.common.n_common * live_grids
    return floats * 8 / 1e6


def run_common_noise_demo(cfg: ExperimentConfig) -> dict:
    """Seeded common-noise run with the per-common-path residual log; in the
    degenerate setting (no diffusion, zero drift, lifted coefficients) the
    plain pipeline runs alongside and the residual deviation is reported."""
    if cfg.common is None:
        raise ConfigError("common-noise runs need a [common] section")
    estimate = _common_memory_estimate_mb(cfg)
    if estimate > cfg.memory_budget_mb:
        raise ResourceLimitError(
            f"estimated working set {estimate:.0f} MB exceeds budget "
            f"{cfg.memory_budget_mb:.0f} MB "
            f"(n_paths x n_steps x n_common = {cfg.n_paths} x "
            f"{cfg.grid.n_steps} x {cfg.common.n_common})")
    setup = PROBLEMS[cfg.problem_name](cfg.problem_options, cfg.grid.horizon)
    coeffs = setup.coefficients
    lifted = False
    if not coeffs.common_noise_aware:
        coeffs = lift_common_blind(coeffs)
        lifted = True
    out = _writable_dir(cfg.output_dir)
    bank = generate_noise_bank(cfg.seed, cfg.n_paths, cfg.grid,
                               initial=setup.initial_value,
                               n_common=cfg.common.n_common,
                               common_initial=cfg.common.p0)
    model = CommonNoiseModel(drift=COMMON_DRIFTS[cfg.common.drift],
                             sigma0=cfg.common.sigma0)
    ctx = OperatorContext(coefficients=coeffs, bank=bank, grid=cfg.grid,
                          basis=cfg.basis, sigma=setup.sigma, common=model,
                          generator_at=cfg.generator_at)
    initial = np.zeros((cfg.n_paths, cfg.grid.n_steps, cfg.common.n_common, 1))
    report = _solve(cfg, ctx, initial)
    artifacts, fit = _emit_error_logs(cfg, report, out)

    final_residual = ctx.residual(report.control_last)
    per_common = [
        process_norm(final_residual[:, :, k], cfg.grid)
        for k in range(cfg.common.n_common)
    ]
    artifacts["common_residuals"] = out / "common_residuals.csv"
    write_csv(artifacts["common_residuals"], "common_index,eps_error",
              zip(range(cfg.common.n_common), per_common))

    summary = {
        "artifacts": artifacts,
        "report": report,
        "slope_fit": fit,
        "final_eps": float(report.eps_last[-1]),
    }
    degenerate = (lifted and cfg.common.sigma0 == 0.0
                  and cfg.common.drift == "zero")
    if degenerate:
        plain_cfg = replace(cfg, common=None)
        plain_bank = generate_noise_bank(cfg.seed, cfg.n_paths, cfg.grid,
                                         initial=setup.initial_value)
        plain_ctx = OperatorContext(coefficients=setup.coefficients,
                                    bank=plain_bank, grid=cfg.grid,
                                    basis=cfg.basis, sigma=setup.sigma,
                                    generator_at=cfg.generator_at)
        plain_report = _solve(plain_cfg, plain_ctx,
                              np.zeros((cfg.n_paths, cfg.grid.n_steps, 1)))
        n = min(len(plain_report.eps_last), len(report.eps_last))
        deviation = float(np.max(np.abs(plain_report.eps_last[:n]
                                        - report.eps_last[:n])))
        summary["degenerate_deviation"] = deviation
        print(f"degenerate equivalence: max residual deviation {deviation:.3e}")
    print(f"stop reason: {report.stop_reason} after {report.n_iterations} iterations")
    print(f"final residual: {report.eps_last[-1]:.6e}")
    return summary
