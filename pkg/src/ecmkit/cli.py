"""Command-line entry point.

Exit codes: 0 success, 1 domain error, 2 usage error. Experiment results go
under ``$ECMKIT_RESULTS`` (default ``./results``) unless ``--out`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .ecm import Registry, load_manifest, validate
from .errors import EcmKitError, ValidationFailed
from .harness import EXPERIMENTS, SWEEP_GRID, ExperimentConfig, emit_table, run_experiment
from .stats import fisher_one_sided, wilson

RESULTS_ENV = "ECMKIT_RESULTS"


class UsageError(Exception):
    pass


def _probability_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values or any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("grid values must lie in [0, 1]")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecmkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    exp = sub.add_parser("experiment", help="run experiments E1-E8")
    exp_sub = exp.add_subparsers(dest="action", metavar="ACTION")
    run = exp_sub.add_parser("run", help="run one experiment and write its results")
    run.add_argument("id", choices=EXPERIMENTS)
    run.add_argument("--n", type=int, default=100, help="trials per condition")
    run.add_argument("--seed", type=int, default=0, help="master seed")
    run.add_argument("--format", choices=("markdown", "csv"), default="markdown",
                     help="format printed to stdout (both are written to disk)")
    run.add_argument("--out", type=Path, help="results root (overrides $%s)" % RESULTS_ENV)

    ecm = sub.add_parser("ecm", help="validate, install or hot-swap capability packages")
    ecm_sub = ecm.add_subparsers(dest="action", metavar="ACTION")
    for name, text in (("validate", "check a package without installing it"),
                       ("install", "install a package into a registry directory"),
                       ("swap", "install and activate a package in one atomic update")):
        p = ecm_sub.add_parser(name, help=text)
        p.add_argument("path", type=Path, help="package directory or manifest.json")
        p.add_argument("--registry", type=Path, required=name != "validate",
                       help="registry directory (state is read from and saved here)")

    audit = sub.add_parser("audit", help="inspect audit logs")
    audit_sub = audit.add_subparsers(dest="action", metavar="ACTION")
    show = audit_sub.add_parser("show", help="print audit records, optionally filtered")
    show.add_argument("path", type=Path)
    show.add_argument("--verdict", choices=("allow", "block"))
    show.add_argument("--reason")
    show.add_argument("--package")
    show.add_argument("--skill")

    stats = sub.add_parser("stats", help="statistics utilities")
    stats_sub = stats.add_subparsers(dest="action", metavar="ACTION")
    w = stats_sub.add_parser("wilson", help="95%% Wilson score interval")
    w.add_argument("successes", type=int)
    w.add_argument("n", type=int)
    f = stats_sub.add_parser("fisher", help="one-sided Fisher exact test, A better than B")
    for name in ("a_succ", "a_fail", "b_succ", "b_fail"):
        f.add_argument(name, type=int)

    sweep = sub.add_parser("sweep", help="failure-rate sweep (E8) over a custom grid")
    sweep.add_argument("--grid", type=_probability_list,
                       default=SWEEP_GRID, help="comma-separated failure rates")
    sweep.add_argument("--n", type=int, default=100)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    sweep.add_argument("--out", type=Path)
    return parser


def _results_root(out: Path | None) -> Path:
    return out if out is not None else Path(os.environ.get(RESULTS_ENV, "results"))


def _write_results(report, root: Path) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    target = root / report.id / f"{stamp}-{report.config.master_seed}"
    target.mkdir(parents=True, exist_ok=True)
    (target / "table.md").write_text(emit_table(report, "markdown"), encoding="utf-8")
    (target / "table.csv").write_text(emit_table(report, "csv"), encoding="utf-8")
    (target / "manifest.json").write_text(json.dumps(report.manifest(), indent=2) + "\n",
                                          encoding="utf-8")
    (target / "audit.log").write_text("".join(line + "\n" for line in report.audit),
                                      encoding="utf-8")
    return target


def _run_and_write(config: ExperimentConfig, fmt: str, out: Path | None) -> int:
    report = run_experiment(config)
    target = _write_results(report, _results_root(out))
    sys.stdout.write(emit_table(report, fmt))
    print(f"results written to {target}", file=sys.stderr)
    return 0


def _cmd_experiment(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    return _run_and_write(ExperimentConfig(args.id, args.n, args.seed), args.format, args.out)


def _cmd_sweep(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    config = ExperimentConfig("E8", args.n, args.seed, {"grid": args.grid})
    return _run_and_write(config, args.format, args.out)


def _cmd_ecm(args) -> int:
    manifest = load_manifest(args.path)
    if args.action == "validate":
        registry = Registry.load(args.registry) if args.registry else None
        report = validate(manifest, registry)
        print(report.describe())
        return 0 if report.valid else 1
    registry = Registry.load(args.registry)
    if args.action == "install":
        registry.install(manifest)
        print(f"installed {manifest.key}")
    else:
        latency = registry.hot_swap(manifest)
        print(f"activated {manifest.key} in {latency * 1e6:.1f} us")
    registry.save(args.registry)
    return 0


def _cmd_audit(args) -> int:
    with open(args.path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EcmKitError(f"{args.path}:{lineno}: malformed record ({exc.msg})")
            if args.verdict and rec.get("verdict") != args.verdict:
                continue
            if args.reason and rec.get("reason") != args.reason:
                continue
            if args.package and rec.get("package") != args.package:
                continue
            if args.skill and rec.get("request", {}).get("skill") != args.skill:
                continue
            sys.stdout.write(line if line.endswith("\n") else line + "\n")
    return 0


def _cmd_stats(args) -> int:
    if args.action == "wilson":
        try:
            ci = wilson(args.successes, args.n)
        except ValueError as exc:
            raise UsageError(str(exc))
        lo, hi = ci.as_percent()
        print(f"{100 * args.successes / args.n:.1f}% [{lo:.1f}, {hi:.1f}]")
    else:
        try:
            p = fisher_one_sided(args.a_succ, args.a_fail, args.b_succ, args.b_fail)
        except ValueError as exc:
            raise UsageError(str(exc))
        print(f"{p:.4f}")
    return 0


_COMMANDS = {"experiment": _cmd_experiment, "sweep": _cmd_sweep, "ecm": _cmd_ecm,
             "audit": _cmd_audit, "stats": _cmd_stats}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None or (args.command not in ("sweep",) and args.action is None):
        parser.print_usage(sys.stderr)
        print("ecmkit: error: a command (and action) is required", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ecmkit: error: {exc}", file=sys.stderr)
        return 2
    except ValidationFailed as exc:
        print(exc.report.describe(), file=sys.stderr)
        return 1
    except (EcmKitError, OSError) as exc:
        print(f"ecmkit: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
