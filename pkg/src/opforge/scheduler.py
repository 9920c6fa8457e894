"""Campaign scheduling: fan operators out across sessions and workers.

One bounded task pool runs sessions (one per operator), each leasing a
worker for its duration. A session's failure or panic never aborts the
others; panics and lost workers are flagged as infrastructure failures in
the report. Per-operator records are written incrementally through a
serialized sink so a crashed campaign can be reconstructed from disk.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .catalog import FilterPolicy, OperatorCatalog, filter_operators, resolve_docstring_parts
from .errors import OpforgeError, PoolExhausted, WorkerSpawnFailed
from .fsm import (
    OperatorResult,
    SessionConfig,
    SessionDeps,
    run_operator,
)
from .gateway import Gateway, MockScript, ModelParams, ScriptedLlm, gateway_from_env
from .linting import default_lint_config
from .prompts import load_reference_examples
from .reporting import OperatorEntry, RunReport
from .testplan import PlanConfig, resolve_plan, sanitize_name
from .workerpool import WorkerPool, WorkerPoolSpec


@dataclass(frozen=True)
class RunConfig:
    run_id: str
    output_dir: str
    filter_policy: FilterPolicy = FilterPolicy()
    session: SessionConfig = SessionConfig()
    gen_params: ModelParams = ModelParams(model_id="mock")
    summarizer_params: ModelParams | None = None
    worker: WorkerPoolSpec = WorkerPoolSpec(count=1)
    parallelism: int = 8
    plan: PlanConfig = PlanConfig()
    operators: tuple = ()            # explicit subset; empty means all filtered
    mock_llm_scripts: dict | None = None  # operator -> entries, "__default__" fallback
    captured_dir: str | None = None
    retry_from: str | None = None    # prior report path: schedule only its failures

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def snapshot(self) -> dict:
        """The config portion stamped into reports (ablation flags included)."""
        return {
            "run_id": self.run_id,
            "filter_policy": {
                "max_test_count": self.filter_policy.max_test_count,
                "exclude_tags": sorted(self.filter_policy.exclude_tags),
                "allowed_dtypes": sorted(self.filter_policy.allowed_dtypes),
            },
            "session": self.session.to_json(),
            "gen_params": self.gen_params.to_json(),
            "summarizer_params": self.summarizer_params.to_json() if self.summarizer_params else None,
            "worker": self.worker.to_json(),
            "parallelism": self.parallelism,
            "plan": self.plan.to_json(),
            "operators": sorted(self.operators),
            "mock_llm": self.mock_llm_scripts is not None,
            "retry_from": self.retry_from,
        }


class _RecordSink:
    """Serialized per-operator record writer."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def write(self, operator: str, entry: OperatorEntry) -> None:
        path = self.directory / f"{sanitize_name(operator)}.json"
        body = json.dumps({"operator": operator, **entry.to_json()}, sort_keys=True)
        with self._lock:
            path.write_text(body + "\n")


def recover_records(directory) -> dict:
    """Rebuild per-operator entries from incremental records on disk."""
    out: dict[str, OperatorEntry] = {}
    directory = Path(directory)
    if not directory.exists():
        return out
    for path in sorted(directory.glob("*.json")):
        doc = json.loads(path.read_text())
        name = doc.pop("operator")
        out[name] = OperatorEntry.from_json(doc)
    return out


def _make_gateway(config: RunConfig, operator: str) -> Gateway:
    if config.mock_llm_scripts is not None:
        entries = config.mock_llm_scripts.get(operator)
        if entries is None:
            entries = config.mock_llm_scripts.get("__default__", [])
        client = ScriptedLlm(MockScript(entries=list(entries)))
        summarizer_entries = config.mock_llm_scripts.get("__summarizer__")
        summarizer = ScriptedLlm(MockScript(entries=list(summarizer_entries))) if summarizer_entries else None
        return Gateway(client, config.gen_params, summarizer, config.summarizer_params)
    return gateway_from_env(config.gen_params, config.summarizer_params)


def _artifact_store_dir(config: RunConfig) -> Path:
    return Path(config.output_dir) / "artifacts"


def store_artifact(config: RunConfig, operator: str, result: OperatorResult) -> None:
    if result.final_artifact is None:
        return
    directory = _artifact_store_dir(config) / sanitize_name(operator)
    directory.mkdir(parents=True, exist_ok=True)
    src = directory / f"{config.run_id}.src"
    src.write_text(result.final_artifact.module_source)
    sidecar = {
        "operator": operator,
        "run_id": config.run_id,
        "status": result.status,
        "llm_calls_used": result.llm_calls_used,
        "wrapper": result.final_artifact.wrapper,
        "kernels": list(result.final_artifact.kernels),
    }
    (directory / f"{config.run_id}.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def _entry_from_result(result: OperatorResult, category: str) -> OperatorEntry:
    return OperatorEntry(
        status="passed" if result.status == "Success" else "failed",
        llm_calls_used=result.llm_calls_used,
        attempts=len(result.attempts),
        category=category,
        failure_stage=result.failure_stage,
        calls_to_success=result.calls_to_success,
    )


def _panic_entry(category: str) -> OperatorEntry:
    return OperatorEntry(
        status="failed",
        llm_calls_used=0,
        attempts=0,
        category=category,
        failure_stage="panic",
    )


def select_operators(config: RunConfig, catalog: OperatorCatalog) -> list:
    ops = filter_operators(catalog, config.filter_policy)
    if config.operators:
        wanted = set(config.operators)
        ops = [op for op in ops if op.name in wanted]
    if config.retry_from:
        prior = RunReport.loads(Path(config.retry_from).read_text())
        failed = {name for name, e in prior.operators.items() if e.status != "passed"}
        ops = [op for op in ops if op.name in failed]
    return ops


def dispatch_run(
    config: RunConfig,
    catalog: OperatorCatalog,
    *,
    session_runner=run_operator,
    pool: WorkerPool | None = None,
    plans: dict | None = None,
    priors: dict | None = None,
) -> RunReport:
    """Run the campaign and write the report atomically.

    ``session_runner`` is the per-operator entry point (injectable for
    fault testing); ``plans``/``priors`` override test plans and seed
    artifacts per operator (the refine flow uses both).
    """
    run_dir = Path(config.output_dir) / "runs" / config.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    sink = _RecordSink(run_dir / "records")
    lint_config = default_lint_config()
    examples = load_reference_examples()
    ops = select_operators(config, catalog)

    own_pool = pool is None
    if own_pool:
        pool = WorkerPool(config.worker)

    started = time.time()
    entries: dict[str, OperatorEntry] = {}
    lock = threading.Lock()
    pool_lost = threading.Event()

    def task(op) -> None:
        category = op.category.value
        try:
            handle = pool.lease()
        except (PoolExhausted, WorkerSpawnFailed):
            pool_lost.set()
            entry = OperatorEntry(
                status="failed", llm_calls_used=0, attempts=0,
                category=category, failure_stage="pool",
            )
            with lock:
                entries[op.name] = entry
            sink.write(op.name, entry)
            return
        try:
            own, supplemental = resolve_docstring_parts(op, catalog.dag)
            supplemental_text = "\n\n".join(doc for _, doc in supplemental)
            plan = (plans or {}).get(op.name)
            if plan is None:
                plan = resolve_plan(op, config.session.test_source, config.plan, config.captured_dir)
            deps = SessionDeps(
                gateway=_make_gateway(config, op.name),
                worker=handle,
                lint_config=lint_config,
                examples=examples,
                docstring=own,
                supplemental_docstrings=supplemental_text,
                test_plan=tuple(plan),
                transcript_sink=_transcript_sink(run_dir, op.name),
            )
            prior = (priors or {}).get(op.name)
            if prior is not None:
                result = session_runner(op, config.session, deps, prior=prior)
            else:
                result = session_runner(op, config.session, deps)
            entry = _entry_from_result(result, category)
            if result.status == "Success":
                store_artifact(config, op.name, result)
        except BaseException as exc:  # session panic: isolate, flag, continue
            entry = _panic_entry(category)
            sink.write(op.name, entry)
            with lock:
                entries[op.name] = entry
            pool.release(handle)
            if isinstance(exc, (KeyboardInterrupt, SystemExit)):
                raise
            return
        with lock:
            entries[op.name] = entry
        sink.write(op.name, entry)
        pool.release(handle)

    try:
        with ThreadPoolExecutor(max_workers=config.parallelism) as executor:
            futures = [executor.submit(task, op) for op in ops]
            for f in futures:
                f.result()
    finally:
        if own_pool:
            pool.shutdown()

    report = RunReport(
        run_id=config.run_id,
        catalog_fingerprint=catalog.fingerprint(),
        config=config.snapshot(),
        operators=dict(entries),
        timings={"wall_clock_s": time.time() - started, "started_at": started},
        incomplete=pool_lost.is_set(),
    )
    _atomic_write(run_dir / "report.json", report.dumps())
    return report


def _transcript_sink(run_dir: Path, operator: str):
    """Append-only JSONL stream per operator under runs/<run_id>/<operator>/."""
    directory = run_dir / sanitize_name(operator)
    directory.mkdir(parents=True, exist_ok=True)
    lock = threading.Lock()
    state = {"attempt": 0}

    def sink(record: dict) -> None:
        with lock:
            if record.get("kind") == "session_start":
                state["attempt"] = record.get("attempt", state["attempt"] + 1)
            path = directory / f"attempt{state['attempt']}.log"
            with path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True, default=str) + "\n")

    return sink


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".report-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# -- refine flow (captured-input refinement) -----------------------------------


def replay_artifact(
    module_source: str,
    operator: str,
    plan,
    session_config: SessionConfig,
    handle,
) -> bool:
    """Re-verify a stored artifact against a plan on a leased worker."""
    from .fsm import EventKind, SessionTranscript, _compile_and_test
    from .prompts import CandidateArtifact

    artifact = CandidateArtifact(
        raw_response="", module_source=module_source,
        wrapper="wrapper", kernels=("kernel",),
    )
    op = _spec_for(operator)
    deps = SessionDeps(
        gateway=None, worker=handle, lint_config=default_lint_config(),
        test_plan=tuple(plan),
    )
    event = _compile_and_test(op, artifact, session_config, deps, SessionTranscript())
    return event.kind is EventKind.ALL_TESTS_PASSED


def _spec_for(operator: str):
    from .catalog import OperatorSpec

    return OperatorSpec(name=operator, docstring=operator)


def load_stored_artifact(output_dir, operator: str, run_id: str | None = None):
    """Latest stored artifact source for an operator (or a specific run's)."""
    directory = Path(output_dir) / "artifacts" / sanitize_name(operator)
    if not directory.exists():
        return None
    candidates = sorted(directory.glob("*.src"))
    if run_id is not None:
        wanted = directory / f"{run_id}.src"
        return wanted.read_text() if wanted.exists() else None
    return candidates[-1].read_text() if candidates else None


def refine_run(
    config: RunConfig,
    catalog: OperatorCatalog,
    *,
    artifact_dir=None,
    session_runner=run_operator,
    pool: WorkerPool | None = None,
) -> RunReport:
    """Captured-input refinement: replay stored artifacts against captured
    plans; schedule resumed sessions only for the ones that fail."""
    from .prompts import CandidateArtifact

    if config.captured_dir is None:
        raise OpforgeError("refine needs a captured-input plan directory")
    artifact_root = Path(artifact_dir) if artifact_dir else Path(config.output_dir)

    session = replace(config.session, test_source="captured")
    config = replace(config, session=session)

    ops = select_operators(config, catalog)
    plans: dict[str, list] = {}
    priors: dict[str, CandidateArtifact] = {}
    passing: dict[str, OperatorEntry] = {}
    to_schedule = []

    own_pool = pool is None
    if own_pool:
        pool = WorkerPool(config.worker)
    try:
        for op in ops:
            plan = resolve_plan(op, "captured", config.plan, config.captured_dir)
            if not plan:
                continue
            plans[op.name] = plan
            source = load_stored_artifact(artifact_root, op.name)
            if source is None:
                to_schedule.append(op)
                continue
            handle = pool.lease()
            try:
                ok = replay_artifact(source, op.name, plan, config.session, handle)
            finally:
                pool.release(handle)
            if ok:
                passing[op.name] = OperatorEntry(
                    status="passed", llm_calls_used=0, attempts=0,
                    category=op.category.value, calls_to_success=None,
                )
            else:
                priors[op.name] = CandidateArtifact(
                    raw_response="", module_source=source,
                    wrapper="wrapper", kernels=("kernel",),
                )
                to_schedule.append(op)

        scheduled = replace(config, operators=tuple(o.name for o in to_schedule))
        report = dispatch_run(
            scheduled, catalog,
            session_runner=session_runner, pool=pool,
            plans=plans, priors=priors,
        )
    finally:
        if own_pool:
            pool.shutdown()
    report.operators.update(passing)
    _atomic_write(
        Path(config.output_dir) / "runs" / config.run_id / "report.json", report.dumps()
    )
    return report
