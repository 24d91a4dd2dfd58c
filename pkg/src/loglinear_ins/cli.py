"""Command-line entry point: ``loglinear-ins <experiment> [options]``.

Prints one summary line per experiment and exits 0 only if every
experiment passes.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex
from .errors import DriftExceeded, NavError, NearPiSingularity, ParseError, ValidationError
from .scenario import ExperimentConfig, load_config

EXPERIMENTS = ("affine-check", "exactness", "decompose", "identities")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config file (key = value lines)")
    p.add_argument("--side", choices=("left", "right"), help="override error.side")
    p.add_argument("--angle-deg", type=float, help="override the initial attitude error angle")
    p.add_argument("--step", type=float, help="override trajectory.step_s")
    p.add_argument("--duration", type=float, help="override trajectory.duration_s")
    p.add_argument("--output", type=Path, help="CSV output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loglinear-ins", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("affine-check", help="group-affine defect on random pose pairs")
    _add_common(p)
    p.add_argument("--n", type=int, default=1000, help="number of random pairs")
    p.add_argument("--seed", type=int, help="RNG seed (default: config seed, else 42)")

    p = sub.add_parser("exactness", help="large-error exactness of the log-linear model")
    _add_common(p)
    p.add_argument("--every", type=int, default=1, help="write every n-th sample to the CSV")

    p = sub.add_parser("decompose", help="check chi = chi_e * flow(chi_0) * chi_b")
    _add_common(p)
    p.add_argument("--every", type=int, default=1, help="write every n-th sample to the CSV")

    p = sub.add_parser("identities", help="named algebraic identities")
    _add_common(p)
    p.add_argument("--seed", type=int, help="RNG seed (default: config seed)")
    p.add_argument(
        "--self-test",
        action="store_true",
        help="run the suite against a sign-flipped adjoint; passes if the suite catches it",
    )
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config is not None:
        cfg = load_config(args.config.read_text())
    return cfg.with_overrides(args.side, args.angle_deg, args.step, args.duration)


def run(args) -> list[ex.RunReport]:
    cfg = _config(args)
    output = args.output if args.output is not None else cfg.output_path
    if args.command == "affine-check":
        seed = args.seed if args.seed is not None else (cfg.rng_seed if args.config else 42)
        return [ex.cmd_affine_check(args.n, seed, output)]
    if args.command == "exactness":
        return [ex.cmd_exactness(cfg, output, args.every)]
    if args.command == "decompose":
        return [ex.cmd_decompose(cfg, output, args.every)]
    seed = args.seed if args.seed is not None else cfg.rng_seed
    if args.self_test:
        broken = ex.cmd_identity_suite(seed, ex.sign_flipped_adjoint)
        caught = [name for name, _, _, ok in broken.items if not ok]
        report = ex.RunReport(
            "identities-self-test",
            broken.max_resid,
            passed=bool(caught),
            wall_time=broken.wall_time,
            details={"caught_by": caught},
        )
        return [report]
    return [ex.cmd_identity_suite(seed)]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        reports = run(args)
    except ParseError as exc:
        print(f"error: config {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    except NearPiSingularity as exc:
        print(f"error: {exc}; reduce --angle-deg below {ex.math.degrees(ex.math.pi - 0.2):.1f}", file=sys.stderr)
        return 2
    except DriftExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for report in reports:
        for line in report.lines():
            print(line)
        if "caught_by" in report.details:
            print("  caught by: " + ", ".join(report.details["caught_by"]))
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
