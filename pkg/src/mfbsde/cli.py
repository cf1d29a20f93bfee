"""Command-line entry point.

Subcommands: ``benchmark`` (reference configuration, config optional),
``custom`` (any registered problem), ``common-noise`` (runs carrying a
[common] section) and ``validate`` (fast invariant suite).  ``--override``
flags patch individual config keys.

Exit codes: 0 success, 1 validation failure, 2 solver divergence, 3 config
error, 4 resource refusal.

The environment variable ``MFBSDE_NUM_THREADS``, when set, caps the linear
algebra thread pools; it is applied before the numerical modules load, so it
only takes effect through this entry point.
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_thread_env() -> None:
    threads = os.environ.get("MFBSDE_NUM_THREADS")
    if not threads:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfbsde",
        description="extragradient solver for monotone mean-field "
                    "forward-backward systems")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p, config_required):
        if config_required:
            p.add_argument("config", help="experiment config file")
        else:
            p.add_argument("config", nargs="?", default=None,
                           help="experiment config file (built-in defaults "
                                "when omitted)")
        p.add_argument("-o", "--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="patch a config key (repeatable)")
        p.add_argument("--seed", type=int, default=None,
                       help="shorthand for -o run.seed=...")
        p.add_argument("--output-dir", default=None,
                       help="shorthand for -o run.output_dir=...")

    add_run_flags(sub.add_parser(
        "benchmark", help="reference problem with oracle comparison artifacts"),
        config_required=False)
    add_run_flags(sub.add_parser(
        "custom", help="any registered problem from a config file"),
        config_required=True)
    add_run_flags(sub.add_parser(
        "common-noise", help="common-noise pipeline (config needs [common])"),
        config_required=True)
    sub.add_parser("validate", help="run the fast invariant suite")
    return parser


def _load_config(args):
    from .experiment import (apply_overrides, config_from_mapping,
                             default_benchmark_mapping, read_config_file)

    if args.config is None:
        mapping = default_benchmark_mapping()
    else:
        mapping = read_config_file(args.config)
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.output_dir is not None:
        overrides.append(f"run.output_dir={args.output_dir}")
    return config_from_mapping(apply_overrides(mapping, overrides))


def main(argv=None) -> int:
    _apply_thread_env()
    args = _build_parser().parse_args(argv)

    if args.command == "validate":
        from .selfcheck import validate_install
        results = validate_install()
        for res in results:
            print(f"{'PASS' if res.passed else 'FAIL'}  {res.name}: {res.detail}")
        return 0 if all(r.passed for r in results) else 1

    from .experiment import ConfigError, ResourceLimitError, run_benchmark, \
        run_common_noise_demo
    from .solver import DivergenceError

    try:
        cfg = _load_config(args)
        if args.command == "common-noise":
            summary = run_common_noise_demo(cfg)
        else:
            summary = run_benchmark(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except ResourceLimitError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 4
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 2
    if summary["report"].stop_reason == "diverged":
        print("diverged: residual grew tenfold over its minimum - "
              "step too large for this operator", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
