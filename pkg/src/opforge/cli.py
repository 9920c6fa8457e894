"""Command line interface.

Subcommands: run (campaign), lint (one candidate file), report (render
tables/curves from a report), aggregate (multi-run union), refine
(captured-input refinement), replay (re-verify a stored artifact).
Flags mirror RunConfig; a YAML config file overrides flags; environment
variables are used only for secrets (LLM endpoint keys).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .catalog import FilterPolicy, load_catalog
from .errors import OpforgeError
from .fsm import SessionConfig
from .gateway import ModelParams
from .linting import default_lint_config, lint, load_lint_config, parse_candidate
from .reporting import (
    AggregateReport,
    RunReport,
    aggregate_runs,
    category_csv,
    curve_csv,
    text_summary,
)
from .scheduler import RunConfig, dispatch_run, load_stored_artifact, refine_run, replay_artifact
from .testplan import PlanConfig, resolve_plan
from .workerpool import WorkerPool, WorkerPoolSpec


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OpforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opforge")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a generation campaign")
    run.add_argument("--catalog", required=True)
    run.add_argument("--run-id", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--config", help="YAML config file; overrides flags")
    run.add_argument("--operators", help="comma-separated subset")
    run.add_argument("--parallelism", type=int, default=8)
    run.add_argument("--max-llm-calls", type=int, default=15)
    run.add_argument("--max-attempts", type=int, default=3)
    run.add_argument("--no-linter", action="store_true")
    run.add_argument("--no-summarization", action="store_true")
    run.add_argument("--model", default="mock")
    run.add_argument("--context-length", type=int, default=131072)
    run.add_argument("--temperature", type=float, default=1.0)
    run.add_argument("--top-p", type=float, default=1.0)
    run.add_argument("--mock-llm", help="JSON script file for the scripted LLM")
    run.add_argument("--worker-cmd", help="worker spawn command (shell-split)")
    run.add_argument("--worker-count", type=int, default=4)
    run.add_argument("--worker-addresses", help="comma-separated host:port list")
    run.add_argument("--retry-from", help="prior report; schedule only its failures")
    run.add_argument("--captured-dir", help="captured-input plan directory")
    run.add_argument("--test-source", choices=["opinfo", "captured", "both"], default="opinfo")
    run.set_defaults(func=_cmd_run)

    lint_cmd = sub.add_parser("lint", help="lint a candidate module file")
    lint_cmd.add_argument("file")
    lint_cmd.add_argument("--config", help="lint config YAML")
    lint_cmd.set_defaults(func=_cmd_lint)

    report = sub.add_parser("report", help="render tables and curves from a report")
    report.add_argument("report")
    report.add_argument("--out", help="directory for CSV renderings")
    report.set_defaults(func=_cmd_report)

    agg = sub.add_parser("aggregate", help="union-aggregate multiple run reports")
    agg.add_argument("reports", nargs="+")
    agg.add_argument("--out", help="file for the aggregate JSON")
    agg.set_defaults(func=_cmd_aggregate)

    refine = sub.add_parser("refine", help="refine stored artifacts against captured inputs")
    refine.add_argument("--catalog", required=True)
    refine.add_argument("--run-id", required=True)
    refine.add_argument("--out", required=True)
    refine.add_argument("--captured-dir", required=True)
    refine.add_argument("--artifacts", help="artifact store root (default: --out)")
    refine.add_argument("--mock-llm")
    refine.add_argument("--worker-cmd")
    refine.add_argument("--worker-count", type=int, default=4)
    refine.add_argument("--parallelism", type=int, default=8)
    refine.set_defaults(func=_cmd_refine)

    replay = sub.add_parser("replay", help="re-verify a stored artifact")
    replay.add_argument("--operator", required=True)
    replay.add_argument("--catalog", required=True)
    replay.add_argument("--out", required=True, help="output dir holding the artifact store")
    replay.add_argument("--artifact", help="explicit artifact source file")
    replay.add_argument("--worker-cmd", required=True)
    replay.add_argument("--captured-dir")
    replay.add_argument("--test-source", choices=["opinfo", "captured", "both"], default="opinfo")
    replay.set_defaults(func=_cmd_replay)

    return parser


def _worker_spec(args) -> WorkerPoolSpec:
    if getattr(args, "worker_addresses", None):
        return WorkerPoolSpec(addresses=tuple(args.worker_addresses.split(",")))
    if getattr(args, "worker_cmd", None):
        import shlex

        return WorkerPoolSpec(command=tuple(shlex.split(args.worker_cmd)), count=args.worker_count)
    # default: the in-repo scripted mock worker, everything passing
    return WorkerPoolSpec(
        command=(sys.executable, "-m", "opforge.mockworker", "--transport", "stdio"),
        count=getattr(args, "worker_count", 4),
    )


def _run_config(args) -> RunConfig:
    session = SessionConfig(
        max_llm_calls=args.max_llm_calls,
        max_attempts=args.max_attempts,
        linter_enabled=not args.no_linter,
        summarization_enabled=not args.no_summarization,
        test_source=args.test_source,
    )
    gen_params = ModelParams(
        model_id=args.model,
        context_length=args.context_length,
        temperature=args.temperature,
        top_p=args.top_p,
    )
    mock_scripts = None
    if args.mock_llm:
        mock_scripts = json.loads(Path(args.mock_llm).read_text())
    config = RunConfig(
        run_id=args.run_id,
        output_dir=args.out,
        session=session,
        gen_params=gen_params,
        worker=_worker_spec(args),
        parallelism=args.parallelism,
        operators=tuple(args.operators.split(",")) if args.operators else (),
        mock_llm_scripts=mock_scripts,
        retry_from=args.retry_from,
        captured_dir=args.captured_dir,
    )
    if args.config:
        config = _apply_config_file(config, Path(args.config))
    return config


def _apply_config_file(config: RunConfig, path: Path) -> RunConfig:
    from dataclasses import replace

    doc = yaml.safe_load(path.read_text()) or {}
    session_over = doc.pop("session", {})
    if session_over:
        config = replace(config, session=replace(config.session, **session_over))
    policy_over = doc.pop("filter_policy", {})
    if policy_over:
        if "exclude_tags" in policy_over:
            policy_over["exclude_tags"] = frozenset(policy_over["exclude_tags"])
        if "allowed_dtypes" in policy_over:
            policy_over["allowed_dtypes"] = frozenset(policy_over["allowed_dtypes"])
        config = replace(config, filter_policy=FilterPolicy(**policy_over))
    if doc:
        config = replace(config, **doc)
    return config


def _cmd_run(args) -> int:
    catalog = load_catalog(Path(args.catalog))
    config = _run_config(args)
    report = dispatch_run(config, catalog)
    print(text_summary(report))
    print(f"report written to {Path(config.output_dir) / 'runs' / config.run_id / 'report.json'}")
    return 0


def _cmd_lint(args) -> int:
    source = Path(args.file).read_text()
    config = load_lint_config(Path(args.config)) if args.config else default_lint_config()
    from .errors import CandidateSyntaxError
    from .linting import LintReport

    try:
        report = lint(parse_candidate(source), config)
    except CandidateSyntaxError as exc:
        report = LintReport.syntax_failure(exc)
    print(report.render())
    return 0 if report.passed else 1


def _load_any_report(path: str):
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") == "aggregate":
        agg = AggregateReport(catalog_fingerprint=doc["catalog_fingerprint"])
        agg.member_runs = doc.get("member_runs", [])
        agg.member_coverage = doc.get("member_coverage", {})
        agg.max_calls = doc.get("max_calls", 0)
        from .reporting import OperatorEntry

        agg.operators = {k: OperatorEntry.from_json(v) for k, v in doc.get("operators", {}).items()}
        return agg
    return RunReport.from_json(doc)


def _cmd_report(args) -> int:
    report = _load_any_report(args.report)
    print(text_summary(report))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "categories.csv").write_text(category_csv(report))
        (out / "curve.csv").write_text(curve_csv(report))
        print(f"CSV tables written to {out}")
    return 0


def _cmd_aggregate(args) -> int:
    reports = [RunReport.loads(Path(p).read_text()) for p in args.reports]
    agg = aggregate_runs(reports)
    print(text_summary(agg))
    if args.out:
        Path(args.out).write_text(agg.dumps())
        print(f"aggregate written to {args.out}")
    return 0


def _cmd_refine(args) -> int:
    catalog = load_catalog(Path(args.catalog))
    mock_scripts = json.loads(Path(args.mock_llm).read_text()) if args.mock_llm else None
    config = RunConfig(
        run_id=args.run_id,
        output_dir=args.out,
        worker=_worker_spec(args),
        parallelism=args.parallelism,
        mock_llm_scripts=mock_scripts,
        captured_dir=args.captured_dir,
    )
    report = refine_run(config, catalog, artifact_dir=args.artifacts)
    print(text_summary(report))
    return 0


def _cmd_replay(args) -> int:
    catalog = load_catalog(Path(args.catalog))
    if args.operator not in catalog:
        print(f"error: operator {args.operator!r} is not in the catalog", file=sys.stderr)
        return 1
    op = catalog.get(args.operator)
    if args.artifact:
        source = Path(args.artifact).read_text()
    else:
        source = load_stored_artifact(args.out, args.operator)
    if source is None:
        print(f"error: no stored artifact for {args.operator!r}", file=sys.stderr)
        return 1

    from .errors import CandidateSyntaxError
    from .linting import LintReport

    try:
        lint_report = lint(parse_candidate(source), default_lint_config())
    except CandidateSyntaxError as exc:
        lint_report = LintReport.syntax_failure(exc)
    if not lint_report.passed:
        print(lint_report.render())
        return 1

    plan = resolve_plan(op, args.test_source, PlanConfig(), args.captured_dir)
    import shlex

    spec = WorkerPoolSpec(command=tuple(shlex.split(args.worker_cmd)), count=1)
    pool = WorkerPool(spec)
    try:
        handle = pool.lease()
        try:
            ok = replay_artifact(source, args.operator, plan, SessionConfig(), handle)
        finally:
            pool.release(handle)
    finally:
        pool.shutdown()
    print(f"{args.operator}: {'PASS' if ok else 'FAIL'} over {len(plan)} case(s)")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
