"""Command-line front end.

Subcommands::

    vavopt run --config cfg.json [--out DIR]
    vavopt sweep --config cfg.json --param eta --values 0.0005,0.01,0.04 [--out DIR]
    vavopt compare RUN [RUN ...] --baseline RUN [--json]
    vavopt selftest [--out DIR]

Exit codes: 0 = run completed (a diverged run is a result, not a failure),
1 = configuration error, 2 = internal invariant violation. The environment
variable ``VAVOPT_OUTPUT_DIR`` supplies a default output directory; an
``output_path`` in the config always wins over both the flag and the
environment.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import ConfigError, InternalConsistencyError
from .harness import (
    HARD_CHECKS,
    ExperimentConfig,
    compare_runs,
    format_comparison,
    resolve_output_dir,
    run_experiment,
    selftest,
    sweep,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vavopt",
        description="Energy-based self-adjusting learning-rate optimization benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment config")
    run_p.add_argument("--config", required=True, help="path to an experiment JSON config")
    run_p.add_argument("--out", default=None, help="output directory (config output_path wins)")

    sweep_p = sub.add_parser("sweep", help="run one config across a list of parameter values")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--param", required=True, help="numeric config field to vary")
    sweep_p.add_argument("--values", required=True, help="comma-separated numeric values")
    sweep_p.add_argument("--out", default=None, help="root output directory")

    cmp_p = sub.add_parser("compare", help="compare run summaries against a baseline")
    cmp_p.add_argument("paths", nargs="+", help="run directories or summary.json paths")
    cmp_p.add_argument("--baseline", required=True)
    cmp_p.add_argument("--json", action="store_true", help="emit machine-readable JSON")

    self_p = sub.add_parser("selftest", help="run the full invariant suite")
    self_p.add_argument("--out", default=None, help="also write the report to DIR/selftest.txt")
    return parser


def _summary_line(name: str, summary) -> str:
    end = ""
    if summary.final_x is not None and len(summary.final_x) <= 4:
        end = " at (" + ", ".join(f"{v:.6g}" for v in summary.final_x) + ")"
    return (
        f"{name}: {summary.status} after {summary.steps_executed} steps, "
        f"final loss {summary.final_loss:.6g}{end}"
    )


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = resolve_output_dir(cfg, args.out)
    if out is None:
        out = Path("runs") / Path(args.config).stem
    summary = run_experiment(cfg, out)
    print(_summary_line(Path(args.config).stem, summary))
    print(f"outputs in {out}")
    hard_failures = sum(summary.checker_failures.get(n, 0) for n in HARD_CHECKS)
    if hard_failures:
        print(f"error: {hard_failures} hard invariant check(s) failed", file=sys.stderr)
        return 2
    return 0


def _cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"--values must be comma-separated numbers: {err}") from err
    out = resolve_output_dir(cfg, args.out)
    if out is None:
        out = Path("runs") / (Path(args.config).stem + "-sweep")
    summaries = sweep(cfg, args.param, values, out)
    for value, summary in zip(values, summaries):
        print(_summary_line(f"{args.param}={value:g}", summary))
    (Path(out) / "sweep.json").write_text(
        json.dumps([s.to_dict() for s in summaries], indent=2, sort_keys=True) + "\n"
    )
    print(f"outputs in {out}")
    return 0


def _cmd_compare(args) -> int:
    comparison = compare_runs(args.paths, args.baseline)
    if args.json:
        print(json.dumps(comparison, indent=2, sort_keys=True))
    else:
        print(format_comparison(comparison))
    return 0


def _cmd_selftest(args) -> int:
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        import io

        buf = io.StringIO()
        code = selftest(buf)
        text = buf.getvalue()
        (out / "selftest.txt").write_text(text)
        sys.stdout.write(text)
        return code
    return selftest()


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "compare": _cmd_compare,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except InternalConsistencyError as err:
        print(f"internal invariant violation: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
