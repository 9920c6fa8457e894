import itertools

from conftest import (
    GOOD_RESPONSE,
    LINT_FAIL_RESPONSE,
    NO_CODE_RESPONSE,
    FakeWorker,
    make_deps,
    make_gateway,
    make_op,
)
from opforge.fsm import (
    Budget,
    EventKind,
    FsmEvent,
    FsmState,
    SessionConfig,
    TERMINAL_STATES,
    next_state,
    run_operator,
    run_session,
)
from opforge.testplan import PlanConfig, build_opinfo_plan

# -- next_state: totality and the documented edges -------------------------------


def test_next_state_exhaustive_enumeration_no_panic():
    budgets = [Budget(c, a) for c in (0, 1, 7) for a in (0, 1, 2)]
    seen = 0
    for state, kind, budget, linter in itertools.product(
        FsmState, EventKind, budgets, (True, False)
    ):
        result = next_state(state, FsmEvent(kind), budget, linter_enabled=linter)
        assert isinstance(result, FsmState)
        seen += 1
    assert seen == len(FsmState) * len(EventKind) * len(budgets) * 2


def test_terminal_states_absorb():
    for state in TERMINAL_STATES:
        for kind in EventKind:
            assert next_state(state, FsmEvent(kind), Budget(5, 2)) is state


def test_all_tests_passed_is_success_any_budget():
    for budget in (Budget(0, 0), Budget(15, 3)):
        assert (
            next_state(FsmState.COMPILE_AND_TEST, FsmEvent(EventKind.ALL_TESTS_PASSED), budget)
            is FsmState.SUCCESS
        )


def test_lint_failed_no_calls_remaining_is_failure():
    result = next_state(FsmState.LINT, FsmEvent(EventKind.LINT_FAILED), Budget(0, 2))
    assert result is FsmState.FAILURE


def test_lint_failed_with_calls_goes_to_feedback_then_generate():
    first = next_state(FsmState.LINT, FsmEvent(EventKind.LINT_FAILED), Budget(5, 2))
    assert first is FsmState.FEEDBACK
    second = next_state(FsmState.FEEDBACK, FsmEvent(EventKind.LINT_FAILED), Budget(5, 2))
    assert second is FsmState.GENERATE_KERNEL


def test_saturated_in_feedback_restarts_when_attempts_remain():
    assert (
        next_state(FsmState.FEEDBACK, FsmEvent(EventKind.SATURATED), Budget(5, 1))
        is FsmState.NEW_SESSION_RESTART
    )
    assert (
        next_state(FsmState.FEEDBACK, FsmEvent(EventKind.SATURATED), Budget(5, 0))
        is FsmState.FAILURE
    )


def test_linter_disabled_routes_parsed_to_compile():
    result = next_state(
        FsmState.GENERATE_KERNEL, FsmEvent(EventKind.RESPONSE_PARSED), Budget(5, 1),
        linter_enabled=False,
    )
    assert result is FsmState.COMPILE_AND_TEST


def test_worker_lost_fails_from_any_nonterminal():
    for state in (FsmState.GENERATE_KERNEL, FsmState.LINT, FsmState.COMPILE_AND_TEST,
                  FsmState.FEEDBACK, FsmState.INITIAL_PROMPT):
        assert next_state(state, FsmEvent(EventKind.WORKER_LOST), Budget(5, 1)) is FsmState.FAILURE


# -- run_session ------------------------------------------------------------------


def test_happy_path_success_in_one_call(exp_op):
    gateway = make_gateway(GOOD_RESPONSE)
    deps = make_deps(gateway, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps)
    assert outcome.status == "Success"
    assert outcome.llm_calls_used == 1
    assert outcome.final_artifact is not None
    assert outcome.final_artifact.wrapper == "wrapper"


def test_always_lint_fail_exactly_fifteen_calls(exp_op):
    gateway = make_gateway(*[LINT_FAIL_RESPONSE] * 20)
    deps = make_deps(gateway, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(max_llm_calls=15), deps)
    assert outcome.status == "Failure"
    assert outcome.llm_calls_used == 15
    assert outcome.failure_stage == "lint"
    lint_failures = [
        r for r in outcome.transcript.records
        if r["kind"] == "transition" and r["event"] == "LintFailed" and r["state"] == "Lint"
    ]
    assert len(lint_failures) == 15


def test_lint_compile_accuracy_then_pass_four_calls(exp_op):
    # lint-fail -> compile-fail -> accuracy-fail -> pass
    gateway = make_gateway(LINT_FAIL_RESPONSE, GOOD_RESPONSE, GOOD_RESPONSE, GOOD_RESPONSE)
    worker = FakeWorker(
        load_outcomes=[("compile_error", "error: bad dtype"), "ok"],
        test_outcomes=[("fail",), "pass"],
    )
    deps = make_deps(gateway, worker=worker, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps)
    assert outcome.status == "Success"
    assert outcome.llm_calls_used == 4
    kinds = [r["prompt_kind"] for r in outcome.transcript.records if r["kind"] == "prompt"]
    assert kinds == ["Init", "LintFeedback", "CompileFeedback", "AccuracyFeedback"]


def test_parse_failure_gets_format_feedback_and_counts_call(exp_op):
    gateway = make_gateway(NO_CODE_RESPONSE, GOOD_RESPONSE)
    deps = make_deps(gateway, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps)
    assert outcome.status == "Success"
    assert outcome.llm_calls_used == 2
    kinds = [r["prompt_kind"] for r in outcome.transcript.records if r["kind"] == "prompt"]
    assert kinds == ["Init", "FormatFeedback"]


def test_crash_feedback_kind(exp_op):
    gateway = make_gateway(GOOD_RESPONSE, GOOD_RESPONSE)
    worker = FakeWorker(test_outcomes=[("crash",), "pass"])
    deps = make_deps(gateway, worker=worker, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps)
    assert outcome.status == "Success"
    kinds = [r["prompt_kind"] for r in outcome.transcript.records if r["kind"] == "prompt"]
    assert kinds == ["Init", "CrashFeedback"]


def test_success_artifact_reverifies(exp_op):
    # idempotent verification: a Success artifact re-passes lint and, when
    # replayed against a fresh worker, re-passes the full plan
    from opforge.fsm import EventKind, SessionTranscript, _compile_and_test
    from opforge.linting import default_lint_config, lint, parse_candidate

    gateway = make_gateway(GOOD_RESPONSE)
    deps = make_deps(gateway, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps)
    assert outcome.status == "Success"
    artifact = outcome.final_artifact

    assert lint(parse_candidate(artifact.module_source), default_lint_config()).passed
    replay_deps = make_deps(make_gateway(GOOD_RESPONSE), worker=FakeWorker(), op=exp_op)
    event = _compile_and_test(exp_op, artifact, SessionConfig(), replay_deps,
                              SessionTranscript())
    assert event.kind is EventKind.ALL_TESTS_PASSED


def test_worker_lost_is_failure_not_crash(exp_op):
    gateway = make_gateway(GOOD_RESPONSE)
    worker = FakeWorker(test_outcomes=["die"])
    deps = make_deps(gateway, worker=worker, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps)
    assert outcome.status == "Failure"
    assert outcome.failure_stage == "worker-lost"


def test_linter_disabled_skips_lint_state(exp_op):
    gateway = make_gateway(GOOD_RESPONSE)
    deps = make_deps(gateway, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(linter_enabled=False), deps)
    assert outcome.status == "Success"
    states = {r["state"] for r in outcome.transcript.transitions()}
    assert "Lint" not in states


def test_tests_stop_at_first_failure(exp_op):
    op = make_op(dtypes=("float32",))
    plan = build_opinfo_plan(op, PlanConfig(shapes=((8,), (16,), (32,))))
    gateway = make_gateway(GOOD_RESPONSE, GOOD_RESPONSE)
    worker = FakeWorker(test_outcomes=[("fail",), "pass"])
    deps = make_deps(gateway, worker=worker, op=op, plan=plan)
    outcome = run_session(op, SessionConfig(), deps)
    assert outcome.status == "Success"
    # first round: load + first test (failed, stop); second round: load + all 3
    run_tests = [m for m in worker.requests if type(m).__name__ == "RunTest"]
    assert len(run_tests) == 1 + 3


def test_dtype_major_ordering(exp_op):
    op = make_op(dtypes=("int64", "float32", "bfloat16"))
    plan = build_opinfo_plan(op, PlanConfig(shapes=((4,),)))
    gateway = make_gateway(GOOD_RESPONSE)
    worker = FakeWorker()
    deps = make_deps(gateway, worker=worker, op=op, plan=plan)
    outcome = run_session(op, SessionConfig(), deps)
    assert outcome.status == "Success"
    loads = [m.dtype for m in worker.requests if type(m).__name__ == "LoadCandidate"]
    assert loads == ["float32", "bfloat16", "int64"]


def test_generation_requests_only_in_generate_state(exp_op):
    gateway = make_gateway(LINT_FAIL_RESPONSE, GOOD_RESPONSE)
    deps = make_deps(gateway, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps)
    records = outcome.transcript.records
    # every prompt record is immediately followed by a response or a
    # saturation/budget transition out of GENERATE_KERNEL
    for i, r in enumerate(records):
        if r["kind"] == "response":
            # find the nearest preceding state record: must be GenerateKernel
            back = [x for x in records[:i] if x["kind"] in ("transition", "advance")]
            assert back, "response with no prior state"
            last = back[-1]
            entered = last.get("next")
            assert entered == "GenerateKernel"


def test_transcript_replays_through_next_state(exp_op):
    gateway = make_gateway(LINT_FAIL_RESPONSE, NO_CODE_RESPONSE, GOOD_RESPONSE, GOOD_RESPONSE)
    worker = FakeWorker(load_outcomes=[("compile_error", "boom"), "ok"])
    deps = make_deps(gateway, worker=worker, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps)
    for record in outcome.transcript.transitions():
        replayed = next_state(
            FsmState(record["state"]),
            FsmEvent(EventKind(record["event"])),
            Budget(record["calls_remaining"], record["attempts_remaining"]),
            linter_enabled=record["linter_enabled"],
        )
        assert replayed.value == record["next"]


def test_session_deadline_fails_cleanly(exp_op):
    class FrozenClock:
        def __init__(self):
            self.now = 1000.0

        def time(self):
            self.now += 10.0
            return self.now

    gateway = make_gateway(*[LINT_FAIL_RESPONSE] * 50)
    deps = make_deps(gateway, op=exp_op)
    clock = FrozenClock()
    outcome = run_session(exp_op, SessionConfig(), deps, deadline=1005.0, clock=clock)
    assert outcome.status == "Failure"
    assert outcome.failure_stage == "deadline"


# -- compile-log summarization routing (ablation toggles) ----------------------------


LONG_LOG = "error: scatter stores are disabled\n" + ("repeated traceback line\n" * 400)
SHORT_LOG = "ValueError: Expected dtype ['fp32', 'fp64'] but got fp16"


def _compile_fail_session(exp_op, log, *, summarization, summarizer_responses=("SUMMARY: scatter stores",)):
    gateway = make_gateway(
        GOOD_RESPONSE, GOOD_RESPONSE,
        summarizer_responses=list(summarizer_responses) if summarization else None,
    )
    worker = FakeWorker(load_outcomes=[("compile_error", log), "ok"])
    deps = make_deps(gateway, worker=worker, op=exp_op)
    config = SessionConfig(summarization_enabled=summarization)
    outcome = run_session(exp_op, config, deps)
    assert outcome.status == "Success"
    prompts = [r for r in outcome.transcript.records if r["kind"] == "prompt"]
    compile_prompt = next(p for p in prompts if p["prompt_kind"] == "CompileFeedback")
    return gateway, compile_prompt


def test_long_log_triggers_exactly_one_summarizer_call(exp_op):
    assert len(LONG_LOG) > 4000
    gateway, prompt = _compile_fail_session(exp_op, LONG_LOG, summarization=True)
    assert gateway.summarizer_calls == 1
    assert "SUMMARY: scatter stores" in prompt["text"]
    assert "repeated traceback line" not in prompt["text"]


def test_summarization_disabled_embeds_truncated_raw_log(exp_op):
    gateway, prompt = _compile_fail_session(exp_op, LONG_LOG, summarization=False)
    assert gateway.summarizer_calls == 0
    assert "repeated traceback line" in prompt["text"]
    # only the last 4000 characters survive
    assert LONG_LOG[-4000:] in prompt["text"]
    assert LONG_LOG[:100] not in prompt["text"]


def test_short_log_passes_through_without_summarizer(exp_op):
    gateway, prompt = _compile_fail_session(exp_op, SHORT_LOG, summarization=True)
    assert gateway.summarizer_calls == 0
    assert SHORT_LOG in prompt["text"]


def test_summarizer_failure_falls_back_to_truncation(exp_op):
    from opforge.errors import TransportError

    class FailingSummarizer:
        def generate(self, messages, params, prompt_kind=None):
            raise TransportError("summarizer down")

    from opforge.gateway import Gateway, MockScript, ModelParams, ScriptedLlm

    gateway = Gateway(
        ScriptedLlm(MockScript.from_responses(GOOD_RESPONSE, GOOD_RESPONSE)),
        ModelParams(model_id="mock"),
        summarizer_client=FailingSummarizer(),
        summarizer_params=ModelParams(model_id="s"),
    )
    worker = FakeWorker(load_outcomes=[("compile_error", LONG_LOG), "ok"])
    deps = make_deps(gateway, worker=worker, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(summarization_enabled=True), deps)
    assert outcome.status == "Success"
    prompts = [r for r in outcome.transcript.records if r["kind"] == "prompt"]
    compile_prompt = next(p for p in prompts if p["prompt_kind"] == "CompileFeedback")
    assert LONG_LOG[-4000:] in compile_prompt["text"]


# -- saturation and restarts ---------------------------------------------------------


def saturating_gateway(n_good_calls, *responses):
    """Gateway whose context admits roughly n_good_calls big turns."""
    per_call = 5000  # responses below are padded to ~20k chars -> 5k tokens
    context = per_call * n_good_calls + 9000  # include reserved output budget
    padded = [r + "\n" + "#" * 19_000 for r in responses]
    return make_gateway(*padded, context_length=context, max_output_tokens=1000)


def test_saturation_returns_restart_outcome(exp_op):
    gateway = make_gateway(LINT_FAIL_RESPONSE, context_length=1200, max_output_tokens=100)
    deps = make_deps(gateway, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps, attempts_remaining=2)
    assert outcome.status == "Saturated"


def test_saturation_without_attempts_is_failure(exp_op):
    gateway = make_gateway(LINT_FAIL_RESPONSE, context_length=1200, max_output_tokens=100)
    deps = make_deps(gateway, op=exp_op)
    outcome = run_session(exp_op, SessionConfig(), deps, attempts_remaining=0)
    assert outcome.status == "Failure"
    assert outcome.failure_stage == "saturation"


# -- run_operator ---------------------------------------------------------------------


class SessionFactoryGateway:
    """Builds a fresh scripted gateway per session from a list of scripts."""

    def __init__(self, scripts):
        self.scripts = list(scripts)
        self.built = []

    def next_gateway(self, **kwargs):
        script = self.scripts.pop(0)
        gateway = make_gateway(*script, **kwargs)
        self.built.append(gateway)
        return gateway


def test_saturation_restart_seeds_resume_prompt(exp_op):
    # Size the context so the init prompt fits but the first feedback prompt
    # saturates: attempt 1 yields an artifact, attempts 2+ must resume it.
    from opforge.gateway import Gateway, MockScript, ModelParams, ScriptedLlm
    from opforge.prompts import build_initial, build_preamble, load_reference_examples

    init = build_initial(exp_op, sorted(exp_op.dtypes), load_reference_examples())
    base_tokens = build_preamble().token_estimate + init.token_estimate
    reserved = 100
    # the resume prompt (init + embedded artifact) still fits, but once a
    # response lands, the next feedback prompt overruns
    context = base_tokens + reserved + 350

    params = ModelParams(model_id="mock", context_length=context, max_output_tokens=reserved)
    script = MockScript(entries=[{"response": LINT_FAIL_RESPONSE}] * 10)
    gateway = Gateway(ScriptedLlm(script), params)
    deps = make_deps(gateway, op=exp_op)

    result = run_operator(exp_op, SessionConfig(max_llm_calls=15, max_attempts=3), deps)
    assert result.status == "Failure"
    assert len(result.attempts) == 3
    assert result.llm_calls_used <= 45
    first_kinds = []
    for attempt in result.attempts:
        prompts = [r for r in attempt.transcript.records if r["kind"] == "prompt"]
        first_kinds.append(prompts[0]["prompt_kind"] if prompts else None)
    assert first_kinds[0] == "Init"
    # attempts 2 and 3 resume from the carried-over artifact
    assert first_kinds[1] == "InitResume"
    assert first_kinds[2] == "InitResume"
    assert result.attempts[0].status == "Saturated"


def test_first_session_success_single_attempt(exp_op):
    gateway = make_gateway(GOOD_RESPONSE)
    deps = make_deps(gateway, op=exp_op)
    result = run_operator(exp_op, SessionConfig(), deps)
    assert result.status == "Success"
    assert len(result.attempts) == 1
    assert result.calls_to_success == 1


def test_all_attempts_fail_45_calls(exp_op):
    gateway = make_gateway(entries=[{"response": LINT_FAIL_RESPONSE}] * 100)
    deps = make_deps(gateway, op=exp_op)
    result = run_operator(exp_op, SessionConfig(max_llm_calls=15, max_attempts=3), deps)
    assert result.status == "Failure"
    assert len(result.attempts) == 3
    assert result.llm_calls_used == 45
    assert all(a.llm_calls_used == 15 for a in result.attempts)


def test_empty_plan_is_flagged(exp_op):
    gateway = make_gateway(GOOD_RESPONSE)
    deps = make_deps(gateway, op=exp_op, plan=())
    result = run_operator(exp_op, SessionConfig(), deps)
    assert result.status == "Failure"
    assert result.failure_stage == "empty-plan"


def test_worker_lost_not_retried(exp_op):
    gateway = make_gateway(entries=[{"response": GOOD_RESPONSE}] * 10)
    worker = FakeWorker(test_outcomes=["die"])
    deps = make_deps(gateway, worker=worker, op=exp_op)
    result = run_operator(exp_op, SessionConfig(max_attempts=3), deps)
    assert result.status == "Failure"
    assert result.failure_stage == "worker-lost"
    assert len(result.attempts) == 1
