"""Command-line entry points: refine, evaluate, compare and trace.

Exit status is 0 on success, 2 for usage or configuration problems and 1
when a pipeline stage fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from .evaluation import (
    SCORE_KEYS,
    compare_scripts_calibrated,
    comparison_report,
    evaluate_script,
    evaluation_report,
)
from .gateway import (
    BackendConfig,
    FixtureBackend,
    FixtureSet,
    Gateway,
    GatewayError,
    LiveBackend,
    OutputError,
)
from .orchestrator import (
    TRACE_FILE,
    ConfigError,
    RefineConfig,
    RefineError,
    allocate_run_dir,
    derive_run_id,
    load_trace,
    refine,
)
from .script import SchemaError, Script, parse_script, serialize_script
from .storage import atomic_write_json, atomic_write_text

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("scriptrefine")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad input paths, config or flag combinations (exit 2)."""


# --- config --------------------------------------------------------------------


def load_config(path: str | Path | None) -> tuple[RefineConfig, BackendConfig]:
    """Read the TOML config: a ``[refine]`` table and a ``[backend]`` table."""
    if path is None:
        return RefineConfig(), BackendConfig()
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config not found: {path}")
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(doc) - {"refine", "backend"}
    if unknown:
        raise ConfigError(f"{path}: unknown tables {sorted(unknown)}")
    refine_cfg = RefineConfig.from_mapping(doc.get("refine", {}))
    backend_doc = doc.get("backend", {})
    known = {f.name for f in fields(BackendConfig)}
    if set(backend_doc) - known:
        raise ConfigError(f"{path}: unknown backend keys {sorted(set(backend_doc) - known)}")
    try:
        backend_cfg = BackendConfig(**backend_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return refine_cfg, backend_cfg


def apply_overrides(config: RefineConfig, args: argparse.Namespace) -> RefineConfig:
    overrides = {
        "threshold": getattr(args, "threshold", None),
        "max_iterations": getattr(args, "max_iterations", None),
        "patience": getattr(args, "patience", None),
        "context_window": getattr(args, "window", None),
        "seed": getattr(args, "seed", None),
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **overrides) if overrides else config


def build_gateway(args: argparse.Namespace, config: RefineConfig, backend_cfg: BackendConfig) -> tuple[Gateway, str]:
    if args.backend == "fixture":
        if not args.fixtures:
            raise UsageError("--backend fixture requires --fixtures PATH")
        fx_path = Path(args.fixtures)
        if not fx_path.exists():
            raise UsageError(f"input not found: {fx_path}")
        try:
            fixtures = FixtureSet.load(fx_path)
        except (ValueError, FileNotFoundError) as exc:
            raise ConfigError(f"bad fixtures: {exc}") from exc
        backend: Any = FixtureBackend(fixtures)
        label = "fixture"
    else:
        if args.fixtures:
            raise UsageError("--fixtures is only valid with --backend fixture")
        backend = LiveBackend(backend_cfg)
        label = backend_cfg.model
    gateway = Gateway(
        backend, parse_retries=config.parse_retries, seed=config.seed, parallelism=config.parallelism
    )
    return gateway, label


def read_script(path: str) -> Script:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input not found: {p}")
    try:
        return parse_script(p.read_bytes())
    except SchemaError as exc:
        raise ConfigError(f"{p}: invalid script document: {exc}") from exc


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- tables --------------------------------------------------------------------


def iteration_table(trace: dict[str, Any]) -> str:
    lines = [f"{'iter':>4}  {'phase':<10}  {'total':>7}  {'delta':>7}  {'storyline':<9}  {'scenes':>6}"]
    baseline = trace.get("baseline") or {}
    if "total" in baseline:
        lines.append(f"{0:>4}  {'baseline':<10}  {baseline['total']:>7.2f}  {'':>7}  {'':<9}  {'':>6}")
    for it in trace["iterations"]:
        lines.append(
            f"{it['index']:>4}  {it['phase']:<10}  {it['total']:>7.2f}  {it['delta']:>+7.2f}  "
            f"{'yes' if it['storyline_ran'] else 'no':<9}  {it['scene_count']:>6}"
        )
    return "\n".join(lines)


def _num(value: float) -> float:
    return round(value, 6)


def trajectory_csv(trace: dict[str, Any]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "phase", "total", "delta", *SCORE_KEYS])
    baseline = trace.get("baseline") or {}
    if baseline.get("evaluation"):
        s = baseline["evaluation"]["scores"]
        writer.writerow([0, "baseline", _num(baseline["total"]), "",
                         *(_num(s[k]) for k in SCORE_KEYS)])
    for it in trace["iterations"]:
        s = it["evaluation"]["scores"]
        writer.writerow([it["index"], it["phase"], _num(it["total"]), _num(it["delta"]),
                         *(_num(s[k]) for k in SCORE_KEYS)])
    return buf.getvalue()


def scores_table(report: dict[str, Any]) -> str:
    rows = [*report["scores"].items(), ("total", report["total"])]
    return "\n".join(f"{name:<22} {value:>7.2f}" for name, value in rows)


# --- commands ------------------------------------------------------------------


def cmd_refine(args: argparse.Namespace) -> int:
    script = read_script(args.input)
    config, backend_cfg = load_config(args.config)
    config = apply_overrides(config, args)
    gateway, label = build_gateway(args, config, backend_cfg)

    run_id, run_dir = allocate_run_dir(args.output_dir, derive_run_id(script, config))
    try:
        final, trace = refine(script, config, gateway, run_dir=run_dir, run_id=run_id)
    except RefineError as exc:
        doc = exc.trace.to_document()
        if doc["iterations"]:
            print(iteration_table(doc))
        print(f"error: {exc} (trace: {run_dir / TRACE_FILE})", file=sys.stderr)
        return EXIT_FAILURE
    atomic_write_text(run_dir / "final.json", serialize_script(final))
    doc = trace.to_document()
    print(iteration_table(doc))
    print(f"termination: {doc['termination']}")
    print(f"run: {run_dir}  backend: {label}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    if len(args.inputs) != 1:
        raise UsageError("evaluate takes exactly one script")
    script = read_script(args.inputs[0])
    config, backend_cfg = load_config(args.config)
    config = apply_overrides(config, args)
    gateway, label = build_gateway(args, config, backend_cfg)
    evaluation = evaluate_script(script, gateway, chunk_chars=config.chunk_chars)
    report = evaluation_report(evaluation, model=label, timestamp=_now())
    out = Path(args.output or f"{Path(args.inputs[0]).stem}.evaluation.json")
    atomic_write_json(out, report)
    print(scores_table(report))
    print(f"report: {out}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    if args.reps <= 0 or args.reps % 2:
        raise UsageError(f"--reps must be a positive even integer, got {args.reps}")
    a, b = read_script(args.script_a), read_script(args.script_b)
    config, backend_cfg = load_config(args.config)
    config = apply_overrides(config, args)
    gateway, label = build_gateway(args, config, backend_cfg)
    result = compare_scripts_calibrated(a, b, gateway, repetitions=args.reps, seed=config.seed)
    out = Path(args.output or "comparison.json")
    atomic_write_json(out, comparison_report(result, model=label, timestamp=_now()))
    print(f"{'script':<8} {'score':>7}")
    print(f"{'A':<8} {result.score_a:>7.2f}")
    print(f"{'B':<8} {result.score_b:>7.2f}")
    print()
    print(f"{'run':>3}  {'order':<5}  {'score_a':>7}  {'score_b':>7}")
    for row in result.orderings_used:
        print(f"{row['run']:>3}  {row['order']:<5}  {row['score_a']:>7.2f}  {row['score_b']:>7.2f}")
    print(f"report: {out}")
    return EXIT_OK


def cmd_trace(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if not path.exists():
        raise UsageError(f"input not found: {path}")
    trace_file = path / TRACE_FILE if path.is_dir() else path
    if not trace_file.is_file():
        raise UsageError(f"no trace found in {path}")
    try:
        doc = load_trace(trace_file)
        table = iteration_table(doc)
        data = trajectory_csv(doc)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"corrupt trace {trace_file}: {exc}") from exc
    print(table)
    print(f"termination: {doc.get('termination')}")
    out = Path(args.csv) if args.csv else trace_file.parent / "trajectory.csv"
    atomic_write_text(out, data)
    print(f"trajectory: {out}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def _backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config with [refine] and [backend] tables")
    p.add_argument("--backend", choices=("live", "fixture"), default="live")
    p.add_argument("--fixtures", help="fixture file or directory (requires --backend fixture)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scriptrefine", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="iteratively refine a script")
    p.add_argument("input")
    _backend_flags(p)
    p.add_argument("--threshold", "--theta", type=float, dest="threshold",
                   help="minimum total-score gain that counts as improvement")
    p.add_argument("--max-iterations", "--t-max", type=int, dest="max_iterations")
    p.add_argument("--patience", "--n-max", type=int, dest="patience",
                   help="consecutive stalled detail iterations before stopping")
    p.add_argument("--window", type=int, help="neighbouring scenes shown to scene agents")
    p.add_argument("--output-dir", default="runs")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", help="score a script on the four-dimension rubric")
    p.add_argument("inputs", nargs="+", metavar="input")
    _backend_flags(p)
    p.add_argument("--output", help="report path (default <input>.evaluation.json)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="calibrated pairwise comparison of two scripts")
    p.add_argument("script_a")
    p.add_argument("script_b")
    _backend_flags(p)
    p.add_argument("--reps", type=int, default=2, help="even number of comparison runs")
    p.add_argument("--output", help="report path (default comparison.json)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("trace", help="tabulate a run trace and write its score trajectory")
    p.add_argument("path", help="run directory or trace.json")
    p.add_argument("--csv", help="trajectory output path (default next to the trace)")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GatewayError, OutputError) as exc:
        print(f"{parser.prog}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
