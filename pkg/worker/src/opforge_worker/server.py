"""The worker's request loop and test execution.

One process, one request at a time. Candidate faults of every kind come
back as protocol responses (compile_error / test_failed / runtime_crash);
the process itself only exits on Shutdown or EOF.
"""

from __future__ import annotations

import traceback

import torch

from . import framing
from .reference import (
    UnknownOperator,
    compare_outputs,
    materialize_case,
    render_excerpt,
    render_signature,
    resolve_reference,
    summarize_tensor,
)
from .sandbox import CandidateLoadError, load_candidate

SUPPORTED_DTYPES = ("float32", "bfloat16", "float16", "int32", "int64")
MAX_CRASH_EXCERPT = 8192


def build_crash_report(exc: BaseException) -> dict:
    frames = []
    tb = exc.__traceback__
    while tb is not None:
        frame = tb.tb_frame
        name = frame.f_code.co_name
        filename = frame.f_code.co_filename
        if "opforge_worker" not in filename:
            frames.append([name, f"{filename}:{tb.tb_lineno}"])
        tb = tb.tb_next
    if not frames:
        frames = [["<worker>", "internal"]]
    excerpt = "".join(traceback.format_exception(type(exc), exc, exc.__traceback__))
    return {
        "crash_kind": type(exc).__name__,
        "backtrace_frames": frames,
        "register_summary": "",
        "raw_excerpt": excerpt[-MAX_CRASH_EXCERPT:],
    }


class Worker:
    """interpreter or jit backend; the scripted mock lives in mock_backend."""

    def __init__(self, backend: str = "interpreter"):
        if backend == "jit":
            _require_real_jit()
        self.backend = backend
        self.device = "cuda" if backend == "jit" else "cpu"
        self.namespace = None
        self.operator = None
        self.reference = None

    # -- request handlers ------------------------------------------------------

    def handle(self, msg_id: str, msg_type: str, payload: dict):
        """Returns (type, payload) or None for Shutdown."""
        if msg_type == "capabilities":
            return "capabilities_ok", {"backend": self.backend, "dtypes": list(SUPPORTED_DTYPES)}
        if msg_type == "shutdown":
            return None
        if msg_type == "load_candidate":
            return self._load(payload)
        if msg_type == "run_test":
            return self._run_test(payload)
        return "protocol_error", {"detail": f"unhandled request type {msg_type!r}"}

    def _load(self, payload: dict):
        source = payload.get("module_source", "")
        operator = payload.get("operator", "")
        try:
            reference = resolve_reference(operator)
        except UnknownOperator as exc:
            return "compile_error", {"log": str(exc)}
        overrides = None
        if self.backend == "jit":
            import triton

            overrides = {"triton": triton, "tl": triton.language}
        try:
            namespace = load_candidate(source, overrides=overrides)
        except CandidateLoadError as exc:
            return "compile_error", {"log": exc.log}
        self.namespace = namespace
        self.operator = operator
        self.reference = reference
        return "load_ok", {}

    def _run_test(self, payload: dict):
        if self.namespace is None:
            return "protocol_error", {"detail": "RunTest before LoadCandidate"}
        case = payload.get("case", {})
        policy = _decode_policy(payload.get("policy", {}))
        case_id = case.get("case_id", "?")

        try:
            tensors, args, kwargs = materialize_case(case)
        except Exception as exc:
            return "protocol_error", {"detail": f"cannot materialize case {case_id}: {exc}"}

        def to_device(t):
            return t.clone().to(self.device) if self.device != "cpu" else t.clone()

        call_tensors = [to_device(t) for t in tensors]
        call_args = [to_device(a) if isinstance(a, torch.Tensor) else a for a in args]

        try:
            reference_out = self.reference(*tensors, *args, **kwargs)
        except Exception as exc:
            return "protocol_error", {
                "detail": f"host reference failed on case {case_id}: {exc}"
            }

        try:
            candidate_out = self.namespace["wrapper"](*call_tensors, *call_args, **dict(kwargs))
        except BaseException as exc:
            if isinstance(exc, (KeyboardInterrupt, SystemExit)):
                raise
            return "runtime_crash", {"case_id": case_id, "report": build_crash_report(exc)}

        if isinstance(candidate_out, torch.Tensor) and candidate_out.device.type != "cpu":
            candidate_out = candidate_out.cpu()
        ok, detail = compare_outputs(candidate_out, reference_out, policy)
        if ok:
            return "test_passed", {"case_id": case_id}
        all_inputs = tensors if tensors else [a for a in args if isinstance(a, torch.Tensor)]
        first = all_inputs[0] if all_inputs else torch.empty(0)
        scalars = [a for a in args if not isinstance(a, torch.Tensor)]
        accuracy = {
            "cpu_summary": summarize_tensor(reference_out),
            "device_summary": _summary_or_note(candidate_out, detail),
            "input_signature": render_signature(tensors, args, kwargs),
            "output_signature": render_signature(
                [reference_out] if isinstance(reference_out, torch.Tensor) else [], [], {}
            ),
            "input_shape": list(first.shape),
            "input_tensor_excerpt": render_excerpt(first),
            "input_args": repr(scalars),
            "input_kwargs": repr(kwargs),
        }
        return "test_failed", {"case_id": case_id, "payload": accuracy}


def _summary_or_note(value, detail: str) -> dict:
    try:
        return summarize_tensor(value)
    except Exception:
        return {
            "dtype": type(value).__name__,
            "shape": [],
            "head": [],
            "tail": [],
            "stats": {"min": 0, "max": 0, "mean": 0, "nan_count": 0, "inf_count": 0},
        }


def _decode_policy(doc: dict) -> dict:
    return {
        "float_tolerances": {
            k: (float(v[0]), float(v[1]))
            for k, v in doc.get("float_tolerances", {}).items()
        },
        "nan_equal": bool(doc.get("nan_equal", True)),
    }


def _require_real_jit():
    try:
        import triton  # noqa: F401
    except ImportError as exc:
        raise RuntimeError(
            "jit backend requested but the real Triton toolchain is not "
            "installed; use --backend interpreter"
        ) from exc
    if not torch.cuda.is_available():
        raise RuntimeError("jit backend requested but no CUDA device is visible")


def pick_backend(requested: str) -> str:
    """'auto' resolves to jit when a real toolchain and device exist."""
    if requested != "auto":
        return requested
    try:
        import triton  # noqa: F401

        if torch.cuda.is_available():
            return "jit"
    except ImportError:
        pass
    return "interpreter"


def serve(reader, writer, worker) -> None:
    """Blocking request loop over framed streams until Shutdown or EOF."""
    while True:
        try:
            msg = framing.read(reader)
        except (framing.FramingError, framing.VersionError) as exc:
            framing.write(writer, "?", "protocol_error", {"detail": str(exc)})
            continue
        if msg is None:
            return
        msg_id, msg_type, payload = msg
        result = worker.handle(msg_id, msg_type, payload)
        if result is None:
            return
        resp_type, resp_payload = result
        framing.write(writer, msg_id, resp_type, resp_payload)
