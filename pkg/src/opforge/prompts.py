"""Prompt construction and LLM response parsing.

Every prompt variant is rendered from a template file in
``opforge/templates/`` with named placeholders; rendering is
byte-deterministic given its inputs, which is what makes golden-file
regression tests possible.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

from .catalog import OperatorSpec
from .errors import MissingDocstring, MultipleModules, NoCodeBlock, PayloadKindMismatch
from .linting import LintReport
from .protocol import AccuracyPayload, CrashReport


class PromptKind(str, Enum):
    INIT = "Init"
    INIT_RESUME = "InitResume"
    LINT_FEEDBACK = "LintFeedback"
    COMPILE_FEEDBACK = "CompileFeedback"
    ACCURACY_FEEDBACK = "AccuracyFeedback"
    CRASH_FEEDBACK = "CrashFeedback"
    # Issued when a response carried no usable code block; not one of the
    # designed feedback kinds but required for recoverable format errors.
    FORMAT_FEEDBACK = "FormatFeedback"


@dataclass(frozen=True)
class Prompt:
    role: str  # "preamble" | "user"
    text: str
    kind: PromptKind

    @property
    def token_estimate(self) -> int:
        return estimate_tokens(self.text)


def estimate_tokens(text: str) -> int:
    """Conservative model-agnostic estimate: ceil(len/4)."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ReferenceExample:
    """One handcrafted operator implementation shown in the initial prompt."""

    operator: str
    kernel_source: str
    wrapper_source: str

    @property
    def module_source(self) -> str:
        return self.kernel_source.rstrip() + "\n\n\n" + self.wrapper_source.rstrip() + "\n"


@dataclass(frozen=True)
class CandidateArtifact:
    """One parsed LLM proposal: a module with kernel(s) plus a wrapper."""

    raw_response: str
    module_source: str
    wrapper: str | None
    kernels: tuple[str, ...]


@lru_cache(maxsize=None)
def _template(name: str) -> str:
    from importlib.resources import files

    return files("opforge").joinpath(f"templates/{name}.txt").read_text()


REFERENCE_OPERATORS = ("exp", "argmax", "diag")


@lru_cache(maxsize=None)
def load_reference_examples() -> tuple[ReferenceExample, ...]:
    """The handcrafted examples shipped with the package, in fixed order."""
    from importlib.resources import files

    data = files("opforge").joinpath("data/examples")
    return tuple(
        ReferenceExample(
            operator=name,
            kernel_source=data.joinpath(f"{name}_kernel.py").read_text(),
            wrapper_source=data.joinpath(f"{name}_wrapper.py").read_text(),
        )
        for name in REFERENCE_OPERATORS
    )


def build_preamble() -> Prompt:
    return Prompt(role="preamble", text=_template("preamble").strip(), kind=PromptKind.INIT)


def _render_dtypes(dtypes) -> str:
    return str(sorted(dtypes))


def _render_examples(examples) -> str:
    blocks = []
    for ex in examples:
        blocks.append(
            f"Operator: {ex.operator}\n"
            f"Kernel(s):\n{ex.kernel_source.rstrip()}\n"
            f"Wrapper:\n{ex.wrapper_source.rstrip()}"
        )
    return "\n\n".join(blocks)


def build_initial(
    op: OperatorSpec,
    dtypes,
    examples,
    prior: CandidateArtifact | None = None,
    *,
    docstring: str | None = None,
    supplemental_docstrings: str = "",
) -> Prompt:
    """The session-opening prompt: fresh task, or debug-resume around a
    prior artifact when one is carried over from a saturated session."""
    if not examples:
        raise ValueError("at least one reference example is required")
    doc = docstring if docstring is not None else op.docstring
    if not doc:
        raise MissingDocstring(f"operator {op.name!r} has no docstring")
    fields = {
        "op_name": op.name,
        "dtypes": _render_dtypes(dtypes),
        "docstring": doc,
        "supplemental_docstrings": supplemental_docstrings,
        "reference_kernels": _render_examples(examples),
    }
    if prior is None:
        return Prompt(role="user", text=_template("init").format(**fields), kind=PromptKind.INIT)
    fields["prior_module_source"] = prior.module_source
    return Prompt(
        role="user",
        text=_template("init_resume").format(**fields),
        kind=PromptKind.INIT_RESUME,
    )


def build_feedback(kind: PromptKind, payload) -> Prompt:
    """Render the feedback prompt for one failure outcome."""
    if kind == PromptKind.LINT_FEEDBACK:
        if not isinstance(payload, LintReport):
            raise PayloadKindMismatch(f"lint feedback needs a LintReport, got {type(payload).__name__}")
        text = _template("lint_feedback").format(lint_report=payload.render())
    elif kind == PromptKind.COMPILE_FEEDBACK:
        if not isinstance(payload, str):
            raise PayloadKindMismatch("compile feedback needs the log text")
        text = _template("compile_feedback").format(compile_log=payload)
    elif kind == PromptKind.ACCURACY_FEEDBACK:
        if not isinstance(payload, AccuracyPayload):
            raise PayloadKindMismatch("accuracy feedback needs an AccuracyPayload")
        text = _template("accuracy_feedback").format(
            cpu_summary=payload.cpu_summary.render(),
            device_summary=payload.device_summary.render(),
            input_signature=payload.input_signature,
            output_signature=payload.output_signature,
            input_shape=str(list(payload.input_shape)),
            input_tensor=payload.input_tensor_excerpt,
            input_args=payload.input_args,
            input_kwargs=payload.input_kwargs,
        )
    elif kind == PromptKind.CRASH_FEEDBACK:
        if not isinstance(payload, CrashReport):
            raise PayloadKindMismatch("crash feedback needs a CrashReport")
        frames = "\n".join(f"  {fn} at {loc}" for fn, loc in payload.backtrace_frames) or "  (none)"
        text = _template("crash_feedback").format(
            crash_kind=payload.crash_kind,
            backtrace=frames,
            register_summary=payload.register_summary or "(not available)",
            raw_excerpt=payload.raw_excerpt,
        )
    elif kind == PromptKind.FORMAT_FEEDBACK:
        detail = payload if isinstance(payload, str) else ""
        text = _template("format_feedback").format(detail=detail)
    else:
        raise PayloadKindMismatch(f"not a feedback kind: {kind}")
    return Prompt(role="user", text=text, kind=kind)


def build_summarization_prompt(log: str) -> str:
    return _template("summarization").format(compile_log=log)


# -- response parsing -------------------------------------------------------------

_FENCE = re.compile(r"```(?:[a-zA-Z0-9_+-]*)\n(.*?)```", re.DOTALL)
_DEF = re.compile(r"^def\s+(\w+)\s*\(", re.MULTILINE)


def parse_response(text: str, strict: bool = False) -> CandidateArtifact:
    """Extract the candidate module from an LLM response.

    Reasoning models often emit scratch blocks before the final code, so the
    last fenced block wins; ``strict=True`` rejects multi-block responses.
    """
    blocks = _FENCE.findall(text)
    if not blocks:
        raise NoCodeBlock("response contains no fenced code block")
    if strict and len(blocks) > 1:
        raise MultipleModules(f"expected one fenced code block, found {len(blocks)}")
    module_source = blocks[-1].strip("\n") + "\n"
    names = _DEF.findall(module_source)
    wrapper = "wrapper" if "wrapper" in names else None
    kernels = tuple(n for n in names if n.startswith("kernel"))
    return CandidateArtifact(
        raw_response=text,
        module_source=module_source,
        wrapper=wrapper,
        kernels=kernels,
    )


# -- tensor summaries ---------------------------------------------------------------

EXCERPT_HEAD = 8
EXCERPT_TAIL = 8


def summarize_values(dtype: str, shape, values) -> "TensorSummary":
    """Build a bounded TensorSummary from flat values (pure python; workers
    use this for wire payloads, mocks use it to fabricate plausible ones)."""
    from .protocol import TensorSummary

    values = list(values)
    head = tuple(values[:EXCERPT_HEAD])
    tail = tuple(values[EXCERPT_HEAD:][-EXCERPT_TAIL:]) if len(values) > EXCERPT_HEAD else ()
    finite = [v for v in values if isinstance(v, (int, float)) and math.isfinite(v)]
    nan_count = sum(1 for v in values if isinstance(v, float) and math.isnan(v))
    inf_count = sum(1 for v in values if isinstance(v, float) and math.isinf(v))
    stats = {
        "min": min(finite) if finite else 0.0,
        "max": max(finite) if finite else 0.0,
        "mean": (sum(finite) / len(finite)) if finite else 0.0,
        "nan_count": nan_count,
        "inf_count": inf_count,
    }
    return TensorSummary(dtype=dtype, shape=tuple(shape), head=head, tail=tail, stats=stats)
