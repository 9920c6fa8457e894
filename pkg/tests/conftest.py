"""Shared fixtures: scripted responses, in-memory workers, session deps."""

from __future__ import annotations

import pytest

from opforge.catalog import OperatorSpec
from opforge.errors import WorkerLost
from opforge.fsm import SessionDeps
from opforge.gateway import Gateway, MockScript, ModelParams, ScriptedLlm
from opforge.linting import default_lint_config
from opforge.mockworker import default_accuracy_payload, default_crash_report
from opforge.prompts import load_reference_examples
from opforge.protocol import (
    Capabilities,
    CapabilitiesOk,
    CompileError,
    LoadCandidate,
    LoadOk,
    ProtocolError,
    RunTest,
    RuntimeCrash,
    TestFailed,
    TestPassed,
)
from opforge.testplan import PlanConfig, build_opinfo_plan

GOOD_MODULE = '''@triton.jit
def kernel(input_ptr, output_ptr, n_elements, BLOCK_SIZE: tl.constexpr):
    pid = tl.program_id(0)
    offsets = pid * BLOCK_SIZE + tl.arange(0, BLOCK_SIZE)
    mask = offsets < n_elements
    x = tl.load(input_ptr + offsets, mask=mask)
    tl.store(output_ptr + offsets, tl.exp(x), mask=mask)


def wrapper(input):
    output = torch.empty_like(input)
    n_elements = input.numel()
    if n_elements == 0:
        return output
    BLOCK_SIZE = 128
    grid = (triton.cdiv(n_elements, BLOCK_SIZE),)
    kernel[grid](input.contiguous(), output, n_elements, BLOCK_SIZE=BLOCK_SIZE)
    return output
'''

GOOD_RESPONSE = f"```python\n{GOOD_MODULE}```"

LINT_FAIL_MODULE = GOOD_MODULE.replace("tl.exp(x)", "tl.log1p(x)")
LINT_FAIL_RESPONSE = f"```python\n{LINT_FAIL_MODULE}```"

NO_CODE_RESPONSE = "I am sorry, I cannot produce a kernel right now."


def make_op(name="exp", dtypes=("float32",), docstring=None):
    return OperatorSpec(
        name=name,
        docstring=docstring or f"{name}(input) -> Tensor\n\nReference semantics of {name}.",
        dtypes=frozenset(dtypes),
    )


class FakeWorker:
    """In-memory worker double with per-phase scripted outcomes.

    load_outcomes / test_outcomes entries: "ok"/"pass", ("compile_error", log),
    ("fail", payload?), ("crash", report?), "die". The last entry repeats.
    """

    def __init__(self, load_outcomes=("ok",), test_outcomes=("pass",)):
        self.load_outcomes = list(load_outcomes)
        self.test_outcomes = list(test_outcomes)
        self._load_i = 0
        self._test_i = 0
        self.requests = []
        self.loaded = False

    def _next(self, outcomes, i):
        return outcomes[min(i, len(outcomes) - 1)]

    def request(self, msg, timeout=None):
        self.requests.append(msg)
        if isinstance(msg, Capabilities):
            return CapabilitiesOk(msg.msg_id, backend="mock")
        if isinstance(msg, LoadCandidate):
            entry = self._next(self.load_outcomes, self._load_i)
            self._load_i += 1
            if entry == "die":
                raise WorkerLost("worker process died")
            if isinstance(entry, tuple) and entry[0] == "compile_error":
                return CompileError(msg.msg_id, log=entry[1])
            self.loaded = True
            return LoadOk(msg.msg_id)
        if isinstance(msg, RunTest):
            if not self.loaded:
                return ProtocolError(msg.msg_id, detail="RunTest before LoadCandidate")
            entry = self._next(self.test_outcomes, self._test_i)
            self._test_i += 1
            if entry == "die":
                raise WorkerLost("worker process died")
            if entry == "pass":
                return TestPassed(msg.msg_id, case_id=msg.case.case_id)
            if isinstance(entry, tuple) and entry[0] == "fail":
                payload = entry[1] if len(entry) > 1 else default_accuracy_payload()
                return TestFailed(msg.msg_id, case_id=msg.case.case_id, payload=payload)
            if isinstance(entry, tuple) and entry[0] == "crash":
                report = entry[1] if len(entry) > 1 else default_crash_report()
                return RuntimeCrash(msg.msg_id, case_id=msg.case.case_id, report=report)
            raise AssertionError(f"bad scripted outcome {entry!r}")
        raise AssertionError(f"unexpected message {type(msg).__name__}")


def make_gateway(*responses, entries=None, context_length=131072,
                 summarizer_responses=None, max_output_tokens=None):
    params = ModelParams(model_id="mock", context_length=context_length,
                         max_output_tokens=max_output_tokens)
    script = MockScript(entries=list(entries)) if entries is not None else MockScript.from_responses(*responses)
    summarizer = None
    summarizer_params = None
    if summarizer_responses is not None:
        summarizer = ScriptedLlm(MockScript.from_responses(*summarizer_responses))
        summarizer_params = ModelParams(model_id="mock-summarizer")
    return Gateway(ScriptedLlm(script), params, summarizer, summarizer_params)


def make_deps(gateway, worker=None, op=None, plan=None, sink=None):
    op = op or make_op()
    if plan is None:
        plan = build_opinfo_plan(op, PlanConfig(shapes=((8,),)))
    return SessionDeps(
        gateway=gateway,
        worker=worker if worker is not None else FakeWorker(),
        lint_config=default_lint_config(),
        examples=load_reference_examples(),
        docstring=op.docstring,
        supplemental_docstrings="",
        test_plan=tuple(plan),
        transcript_sink=sink,
    )


@pytest.fixture
def exp_op():
    return make_op()
