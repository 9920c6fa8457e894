"""Per-operator finite-state machine.

Drives generate, lint, compile/test and feedback transitions, enforces
call/attempt budgets and the four termination conditions: all tests pass,
the call budget runs out, the dialog context saturates (the session hands
back a restart carrying the latest artifact), or an infrastructure fault
kills the exchange.

``next_state`` is a pure, total transition function; the driver records a
transcript whose transition records replay through it exactly. Generation
requests happen only in the GENERATE_KERNEL state.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum

from .catalog import OperatorSpec
from .errors import (
    BadResponse,
    CandidateSyntaxError,
    NoCodeBlock,
    SaturationSignal,
    WorkerLost,
)
from .gateway import Gateway
from .linting import LintConfig, LintReport, lint, parse_candidate
from .prompts import (
    CandidateArtifact,
    Prompt,
    PromptKind,
    build_feedback,
    build_initial,
    parse_response,
)
from .protocol import (
    AccuracyPayload,
    CompileError,
    CrashReport,
    LoadCandidate,
    LoadOk,
    ProtocolError,
    RunTest,
    RuntimeCrash,
    TestFailed,
    TestPassed,
    TolerancePolicy,
    default_tolerances,
)


class FsmState(str, Enum):
    INITIAL_PROMPT = "InitialPrompt"
    GENERATE_KERNEL = "GenerateKernel"
    LINT = "Lint"
    COMPILE_AND_TEST = "CompileAndTest"
    FEEDBACK = "Feedback"
    NEW_SESSION_RESTART = "NewSessionRestart"
    SUCCESS = "Success"
    FAILURE = "Failure"


TERMINAL_STATES = frozenset({FsmState.SUCCESS, FsmState.FAILURE})


class EventKind(str, Enum):
    RESPONSE_PARSED = "ResponseParsed"
    PARSE_FAILED = "ParseFailed"
    LINT_PASSED = "LintPassed"
    LINT_FAILED = "LintFailed"
    COMPILE_FAILED = "CompileFailed"
    RUNTIME_CRASHED = "RuntimeCrashed"
    TEST_FAILED = "TestFailed"
    ALL_TESTS_PASSED = "AllTestsPassed"
    SATURATED = "Saturated"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    WORKER_LOST = "WorkerLost"


_RETRYABLE = frozenset(
    {
        EventKind.PARSE_FAILED,
        EventKind.LINT_FAILED,
        EventKind.COMPILE_FAILED,
        EventKind.RUNTIME_CRASHED,
        EventKind.TEST_FAILED,
    }
)


@dataclass(frozen=True)
class FsmEvent:
    kind: EventKind
    payload: object = None

    @staticmethod
    def response_parsed(artifact: CandidateArtifact) -> "FsmEvent":
        return FsmEvent(EventKind.RESPONSE_PARSED, artifact)

    @staticmethod
    def lint_failed(report: LintReport) -> "FsmEvent":
        return FsmEvent(EventKind.LINT_FAILED, report)

    @staticmethod
    def compile_failed(log: str) -> "FsmEvent":
        return FsmEvent(EventKind.COMPILE_FAILED, log)

    @staticmethod
    def runtime_crashed(report: CrashReport) -> "FsmEvent":
        return FsmEvent(EventKind.RUNTIME_CRASHED, report)

    @staticmethod
    def test_failed(payload: AccuracyPayload) -> "FsmEvent":
        return FsmEvent(EventKind.TEST_FAILED, payload)


@dataclass(frozen=True)
class Budget:
    calls_remaining: int
    attempts_remaining: int


def next_state(
    state: FsmState,
    event,
    budget: Budget,
    *,
    linter_enabled: bool = True,
) -> FsmState:
    """Pure, total transition function over state x event x budget.

    Terminal states absorb. NEW_SESSION_RESTART is the session's exit
    marker and also absorbs; the caller starts the next attempt.
    Undefined (state, event) pairs fail the session rather than raising.
    """
    kind = event.kind if isinstance(event, FsmEvent) else EventKind(event)

    if state in TERMINAL_STATES or state is FsmState.NEW_SESSION_RESTART:
        return state

    if kind is EventKind.SATURATED:
        return (
            FsmState.NEW_SESSION_RESTART
            if budget.attempts_remaining > 0
            else FsmState.FAILURE
        )
    if kind is EventKind.BUDGET_EXHAUSTED or kind is EventKind.WORKER_LOST:
        return FsmState.FAILURE

    if state is FsmState.INITIAL_PROMPT:
        return FsmState.GENERATE_KERNEL

    if state is FsmState.GENERATE_KERNEL:
        if kind is EventKind.RESPONSE_PARSED:
            return FsmState.LINT if linter_enabled else FsmState.COMPILE_AND_TEST
        if kind is EventKind.PARSE_FAILED:
            return FsmState.FEEDBACK if budget.calls_remaining > 0 else FsmState.FAILURE
        return FsmState.FAILURE

    if state is FsmState.LINT:
        if kind is EventKind.LINT_PASSED:
            return FsmState.COMPILE_AND_TEST
        if kind is EventKind.LINT_FAILED:
            return FsmState.FEEDBACK if budget.calls_remaining > 0 else FsmState.FAILURE
        return FsmState.FAILURE

    if state is FsmState.COMPILE_AND_TEST:
        if kind is EventKind.ALL_TESTS_PASSED:
            return FsmState.SUCCESS
        if kind in (EventKind.COMPILE_FAILED, EventKind.RUNTIME_CRASHED, EventKind.TEST_FAILED):
            return FsmState.FEEDBACK if budget.calls_remaining > 0 else FsmState.FAILURE
        return FsmState.FAILURE

    if state is FsmState.FEEDBACK:
        if kind in _RETRYABLE:
            return FsmState.GENERATE_KERNEL if budget.calls_remaining > 0 else FsmState.FAILURE
        return FsmState.FAILURE

    return FsmState.FAILURE  # unreachable; keeps the function total


# -- session configuration -----------------------------------------------------


@dataclass(frozen=True)
class SessionConfig:
    max_llm_calls: int = 15
    max_attempts: int = 3
    linter_enabled: bool = True
    summarization_enabled: bool = True
    tolerance_policy: TolerancePolicy = field(default_factory=default_tolerances)
    test_source: str = "opinfo"  # opinfo | captured | both
    summarize_threshold: int = 4000  # logs over this many chars get summarized
    raw_log_cap: int = 4000          # fallback keeps the last N chars
    operator_deadline_s: float = 7200.0
    strict_response_parse: bool = False

    def __post_init__(self):
        if self.max_llm_calls < 1:
            raise ValueError("max_llm_calls must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def to_json(self) -> dict:
        return {
            "max_llm_calls": self.max_llm_calls,
            "max_attempts": self.max_attempts,
            "linter_enabled": self.linter_enabled,
            "summarization_enabled": self.summarization_enabled,
            "tolerance_policy": self.tolerance_policy.to_json(),
            "test_source": self.test_source,
            "summarize_threshold": self.summarize_threshold,
            "raw_log_cap": self.raw_log_cap,
            "operator_deadline_s": self.operator_deadline_s,
        }


@dataclass
class SessionDeps:
    gateway: Gateway
    worker: object  # anything with .request(msg) -> response
    lint_config: LintConfig
    examples: tuple = ()
    docstring: str | None = None
    supplemental_docstrings: str = ""
    test_plan: tuple = ()
    transcript_sink: object = None  # callable(record dict) or None


@dataclass
class SessionTranscript:
    records: list = field(default_factory=list)
    _sink: object = None

    def append(self, kind: str, **fields) -> None:
        record = {"seq": len(self.records), "kind": kind, **fields}
        self.records.append(record)
        if self._sink is not None:
            self._sink(record)

    def transitions(self) -> list:
        return [r for r in self.records if r["kind"] == "transition"]

    def dump_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True, default=str) for r in self.records)


@dataclass
class SessionOutcome:
    status: str  # Success | Failure | Saturated
    llm_calls_used: int
    attempt_index: int
    final_artifact: CandidateArtifact | None
    transcript: SessionTranscript
    failure_stage: str | None = None
    diagnostic: str = ""


@dataclass
class OperatorResult:
    operator: str
    status: str  # Success | Failure
    attempts: list
    llm_calls_used: int
    failure_stage: str | None = None
    final_artifact: CandidateArtifact | None = None
    calls_to_success: int | None = None


_STAGE_BY_EVENT = {
    EventKind.PARSE_FAILED: "parse",
    EventKind.LINT_FAILED: "lint",
    EventKind.COMPILE_FAILED: "compile",
    EventKind.RUNTIME_CRASHED: "crash",
    EventKind.TEST_FAILED: "accuracy",
    EventKind.SATURATED: "saturation",
    EventKind.BUDGET_EXHAUSTED: "budget",
    EventKind.WORKER_LOST: "worker-lost",
}

INFRASTRUCTURE_STAGES = frozenset({"worker-lost", "panic", "pool", "empty-plan"})


def _feedback_kind(event: FsmEvent) -> PromptKind:
    return {
        EventKind.LINT_FAILED: PromptKind.LINT_FEEDBACK,
        EventKind.COMPILE_FAILED: PromptKind.COMPILE_FEEDBACK,
        EventKind.TEST_FAILED: PromptKind.ACCURACY_FEEDBACK,
        EventKind.RUNTIME_CRASHED: PromptKind.CRASH_FEEDBACK,
        EventKind.PARSE_FAILED: PromptKind.FORMAT_FEEDBACK,
    }[event.kind]


def run_session(
    op: OperatorSpec,
    config: SessionConfig,
    deps: SessionDeps,
    prior: CandidateArtifact | None = None,
    *,
    attempt_index: int = 1,
    attempts_remaining: int = 0,
    deadline: float | None = None,
    clock=time,
) -> SessionOutcome:
    """Execute one dialog session from INITIAL_PROMPT to an exit state."""
    gateway = deps.gateway
    session = gateway.new_session()
    transcript = SessionTranscript(_sink=deps.transcript_sink)
    transcript.append("session_start", operator=op.name, attempt=attempt_index,
                      resumed=prior is not None)

    artifact: CandidateArtifact | None = prior
    calls_used = 0
    state = FsmState.INITIAL_PROMPT
    last_failure: FsmEvent | None = None
    failure_stage: str | None = None
    diagnostic = ""

    pending_prompt = build_initial(
        op,
        sorted(op.dtypes),
        deps.examples,
        prior,
        docstring=deps.docstring,
        supplemental_docstrings=deps.supplemental_docstrings,
    )

    def budget() -> Budget:
        return Budget(
            calls_remaining=config.max_llm_calls - calls_used,
            attempts_remaining=attempts_remaining,
        )

    def transition(event: FsmEvent) -> FsmState:
        nonlocal failure_stage
        b = budget()
        nxt = next_state(state, event, b, linter_enabled=config.linter_enabled)
        transcript.append(
            "transition",
            state=state.value,
            event=event.kind.value,
            calls_remaining=b.calls_remaining,
            attempts_remaining=b.attempts_remaining,
            linter_enabled=config.linter_enabled,
            next=nxt.value,
        )
        if nxt is FsmState.FAILURE and failure_stage is None:
            failure_stage = _STAGE_BY_EVENT.get(event.kind, "unknown")
        return nxt

    while state not in TERMINAL_STATES and state is not FsmState.NEW_SESSION_RESTART:
        if deadline is not None and clock.time() > deadline:
            failure_stage = "deadline"
            diagnostic = "per-operator deadline exceeded"
            transcript.append("note", text=diagnostic)
            state = FsmState.FAILURE
            break

        if state is FsmState.INITIAL_PROMPT:
            if gateway.is_saturated(session, pending_prompt):
                state = transition(FsmEvent(EventKind.SATURATED))
                continue
            if config.max_llm_calls - calls_used <= 0:
                state = transition(FsmEvent(EventKind.BUDGET_EXHAUSTED))
                continue
            # The opening edge is unconditional; no event is consumed.
            state = FsmState.GENERATE_KERNEL
            transcript.append("advance", state=FsmState.INITIAL_PROMPT.value,
                              next=state.value)

        elif state is FsmState.GENERATE_KERNEL:
            if config.max_llm_calls - calls_used <= 0:
                state = transition(FsmEvent(EventKind.BUDGET_EXHAUSTED))
                continue
            transcript.append("prompt", prompt_kind=pending_prompt.kind.value,
                              tokens=pending_prompt.token_estimate, text=pending_prompt.text)
            try:
                response = gateway.complete(session, pending_prompt)
                calls_used += 1
            except SaturationSignal:
                state = transition(FsmEvent(EventKind.SATURATED))
                continue
            except BadResponse as exc:
                calls_used += 1  # the dispatch is spent even without content
                transcript.append("note", text=f"bad response: {exc}")
                last_failure = FsmEvent(EventKind.PARSE_FAILED, str(exc))
                state = transition(last_failure)
                continue
            transcript.append("response", tokens_estimate=len(response) // 4, text=response)
            try:
                artifact = parse_response(response, strict=config.strict_response_parse)
                event = FsmEvent.response_parsed(artifact)
            except NoCodeBlock as exc:
                event = FsmEvent(EventKind.PARSE_FAILED, str(exc))
            if event.kind is not EventKind.RESPONSE_PARSED:
                last_failure = event
            state = transition(event)

        elif state is FsmState.LINT:
            try:
                tree = parse_candidate(artifact.module_source)
                report = lint(tree, deps.lint_config)
            except CandidateSyntaxError as exc:
                report = LintReport.syntax_failure(exc)
            transcript.append("lint_report", report=report.to_json())
            if report.passed:
                event = FsmEvent(EventKind.LINT_PASSED)
            else:
                event = FsmEvent.lint_failed(report)
                last_failure = event
            state = transition(event)

        elif state is FsmState.COMPILE_AND_TEST:
            event = _compile_and_test(op, artifact, config, deps, transcript)
            if event.kind is not EventKind.ALL_TESTS_PASSED:
                last_failure = event
            if event.kind is EventKind.WORKER_LOST:
                diagnostic = str(event.payload or "worker lost")
            state = transition(event)

        elif state is FsmState.FEEDBACK:
            assert last_failure is not None
            fb = _build_feedback_prompt(last_failure, config, gateway, transcript)
            if gateway.is_saturated(session, fb):
                state = transition(FsmEvent(EventKind.SATURATED))
                continue
            pending_prompt = fb
            state = transition(last_failure)

    if state is FsmState.SUCCESS:
        status = "Success"
        failure_stage = None
    elif state is FsmState.NEW_SESSION_RESTART:
        status = "Saturated"
        failure_stage = None
    else:
        status = "Failure"
    transcript.append("session_end", status=status, llm_calls_used=calls_used,
                      failure_stage=failure_stage)
    return SessionOutcome(
        status=status,
        llm_calls_used=calls_used,
        attempt_index=attempt_index,
        final_artifact=artifact,
        transcript=transcript,
        failure_stage=failure_stage,
        diagnostic=diagnostic,
    )


def _build_feedback_prompt(
    event: FsmEvent, config: SessionConfig, gateway: Gateway, transcript: SessionTranscript
) -> Prompt:
    kind = _feedback_kind(event)
    payload = event.payload
    if event.kind is EventKind.COMPILE_FAILED:
        payload = _prepare_compile_log(str(payload), config, gateway, transcript)
    if event.kind is EventKind.PARSE_FAILED:
        payload = ""
    return build_feedback(kind, payload)


def _prepare_compile_log(
    log: str, config: SessionConfig, gateway: Gateway, transcript: SessionTranscript
) -> str:
    if len(log) <= config.summarize_threshold:
        return log
    if config.summarization_enabled:
        try:
            summary = gateway.summarize(log)
            transcript.append("summarizer_call", input_chars=len(log),
                              output_chars=len(summary))
            return summary
        except Exception as exc:
            transcript.append("note", text=f"summarizer failed, truncating: {exc}")
    return log[-config.raw_log_cap:]


def _compile_and_test(
    op: OperatorSpec,
    artifact: CandidateArtifact,
    config: SessionConfig,
    deps: SessionDeps,
    transcript: SessionTranscript,
) -> FsmEvent:
    """Drive the worker: load per dtype, run that dtype's cases, stop at the
    first failure of any kind."""
    worker = deps.worker
    plan = list(deps.test_plan)
    by_dtype: dict[str, list] = {}
    for case in plan:
        by_dtype.setdefault(case.dtype, []).append(case)

    msg_counter = 0

    def send(msg, timeout):
        nonlocal msg_counter
        msg_counter += 1
        transcript.append("worker_request", type=type(msg).__name__)
        try:
            resp = worker.request(msg, timeout=timeout)
        except WorkerLost:
            raise
        except Exception as exc:
            raise WorkerLost(str(exc)) from exc
        transcript.append("worker_response", type=type(resp).__name__)
        return resp

    try:
        from .dtypes import DTYPE_TEST_ORDER
        from .workerpool import DEFAULT_COMPILE_TIMEOUT, DEFAULT_TEST_TIMEOUT

        for dtype in [d for d in DTYPE_TEST_ORDER if d in by_dtype]:
            resp = send(
                LoadCandidate(
                    msg_id=f"load-{msg_counter}",
                    module_source=artifact.module_source,
                    operator=op.name,
                    dtype=dtype,
                ),
                timeout=DEFAULT_COMPILE_TIMEOUT,
            )
            if isinstance(resp, CompileError):
                return FsmEvent.compile_failed(resp.log)
            if isinstance(resp, ProtocolError):
                return FsmEvent(EventKind.WORKER_LOST, resp.detail)
            if not isinstance(resp, LoadOk):
                return FsmEvent(EventKind.WORKER_LOST, f"unexpected response {type(resp).__name__}")
            for case in by_dtype[dtype]:
                resp = send(
                    RunTest(msg_id=f"test-{msg_counter}", case=case, policy=config.tolerance_policy),
                    timeout=DEFAULT_TEST_TIMEOUT,
                )
                if isinstance(resp, TestPassed):
                    continue
                if isinstance(resp, TestFailed):
                    return FsmEvent.test_failed(resp.payload)
                if isinstance(resp, RuntimeCrash):
                    return FsmEvent.runtime_crashed(resp.report)
                if isinstance(resp, CompileError):
                    return FsmEvent.compile_failed(resp.log)
                return FsmEvent(EventKind.WORKER_LOST, f"unexpected response {type(resp).__name__}")
    except WorkerLost as exc:
        return FsmEvent(EventKind.WORKER_LOST, str(exc))
    return FsmEvent(EventKind.ALL_TESTS_PASSED)


def run_operator(
    op: OperatorSpec,
    config: SessionConfig,
    deps: SessionDeps,
    *,
    prior: CandidateArtifact | None = None,
    clock=time,
) -> OperatorResult:
    """Loop sessions up to max_attempts; restarts seed the next session with
    the latest artifact (an externally supplied seed starts the chain).
    Infrastructure faults stop the attempt loop."""
    if not deps.test_plan:
        return OperatorResult(
            operator=op.name,
            status="Failure",
            attempts=[],
            llm_calls_used=0,
            failure_stage="empty-plan",
        )
    deadline = clock.time() + config.operator_deadline_s
    attempts: list[SessionOutcome] = []
    total_calls = 0
    for attempt_index in range(1, config.max_attempts + 1):
        outcome = run_session(
            op,
            config,
            deps,
            prior,
            attempt_index=attempt_index,
            attempts_remaining=config.max_attempts - attempt_index,
            deadline=deadline,
            clock=clock,
        )
        attempts.append(outcome)
        total_calls += outcome.llm_calls_used
        if outcome.status == "Success":
            return OperatorResult(
                operator=op.name,
                status="Success",
                attempts=attempts,
                llm_calls_used=total_calls,
                final_artifact=outcome.final_artifact,
                calls_to_success=total_calls,
            )
        if outcome.failure_stage in INFRASTRUCTURE_STAGES or outcome.failure_stage == "deadline":
            break
        prior = outcome.final_artifact or prior
    last = attempts[-1]
    return OperatorResult(
        operator=op.name,
        status="Failure",
        attempts=attempts,
        llm_calls_used=total_calls,
        failure_stage=last.failure_stage,
        final_artifact=last.final_artifact or prior,
    )
