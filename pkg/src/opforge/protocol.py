"""Wire protocol between the orchestrator and execution workers.

Framing: a 4-byte big-endian length prefix followed by a UTF-8 JSON body
``{"v": 1, "id": <correlation id>, "type": <kind>, "payload": {...}}``.
The same codec runs over a spawned worker's standard streams or TCP.
Frames above 64 MiB are rejected. See docs/protocol.md for the schemas
and golden fixtures.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import IO

from .dtypes import is_float_dtype
from .errors import FrameTooLarge, MalformedFrame, VersionMismatch

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024
_LEN = struct.Struct(">I")


# -- test model ----------------------------------------------------------------


@dataclass(frozen=True)
class TensorLiteral:
    """A tensor shipped by value (captured production inputs)."""

    dtype: str
    shape: tuple[int, ...]
    values: tuple  # flattened, row-major

    def to_json(self) -> dict:
        return {
            "kind": "literal",
            "dtype": self.dtype,
            "shape": list(self.shape),
            "values": list(self.values),
        }


@dataclass(frozen=True)
class RandomTensor:
    """A tensor shipped as a seeded descriptor, materialized worker-side."""

    dtype: str
    shape: tuple[int, ...]
    seed: int
    distribution: str = "uniform"  # uniform | normal

    def to_json(self) -> dict:
        return {
            "kind": "random",
            "dtype": self.dtype,
            "shape": list(self.shape),
            "seed": self.seed,
            "distribution": self.distribution,
        }


def tensor_spec_from_json(doc: dict):
    kind = doc.get("kind")
    if kind == "literal":
        return TensorLiteral(
            dtype=doc["dtype"], shape=tuple(doc["shape"]), values=tuple(doc["values"])
        )
    if kind == "random":
        return RandomTensor(
            dtype=doc["dtype"],
            shape=tuple(doc["shape"]),
            seed=int(doc["seed"]),
            distribution=doc.get("distribution", "uniform"),
        )
    raise MalformedFrame(f"unknown tensor spec kind: {kind!r}")


@dataclass(frozen=True)
class TestCase:
    case_id: str
    dtype: str
    input_tensors: tuple = ()
    input_args: tuple = ()
    input_kwargs: dict = field(default_factory=dict)
    source: str = "opinfo"  # opinfo | captured

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "dtype": self.dtype,
            "input_tensors": [t.to_json() for t in self.input_tensors],
            "input_args": list(self.input_args),
            "input_kwargs": dict(self.input_kwargs),
            "source": self.source,
        }

    @staticmethod
    def from_json(doc: dict) -> "TestCase":
        return TestCase(
            case_id=doc["case_id"],
            dtype=doc["dtype"],
            input_tensors=tuple(tensor_spec_from_json(t) for t in doc.get("input_tensors", [])),
            input_args=tuple(doc.get("input_args", [])),
            input_kwargs=dict(doc.get("input_kwargs", {})),
            source=doc.get("source", "opinfo"),
        )


@dataclass(frozen=True)
class TolerancePolicy:
    """Per-dtype comparison policy. Floats compare elementwise under
    |a - b| <= atol + rtol * |b|; integer dtypes compare exactly."""

    float_tolerances: dict = field(default_factory=dict)  # dtype -> (rtol, atol)
    nan_equal: bool = True

    def __post_init__(self):
        for dtype, (rtol, atol) in self.float_tolerances.items():
            if rtol < 0 or atol < 0:
                raise ValueError(f"negative tolerance for {dtype}")

    def for_dtype(self, dtype: str):
        """(rtol, atol) for float dtypes, None for exact comparison."""
        if is_float_dtype(dtype):
            return self.float_tolerances.get(dtype, (0.0, 0.0))
        return None

    def to_json(self) -> dict:
        return {
            "float_tolerances": {k: [r, a] for k, (r, a) in self.float_tolerances.items()},
            "nan_equal": self.nan_equal,
        }

    @staticmethod
    def from_json(doc: dict) -> "TolerancePolicy":
        return TolerancePolicy(
            float_tolerances={k: (v[0], v[1]) for k, v in doc.get("float_tolerances", {}).items()},
            nan_equal=bool(doc.get("nan_equal", True)),
        )


def default_tolerances() -> TolerancePolicy:
    return TolerancePolicy(
        float_tolerances={
            "float32": (1.3e-6, 1e-5),
            "float16": (1e-3, 1e-5),
            "bfloat16": (1.6e-2, 1e-5),
        },
        nan_equal=True,
    )


def values_within_tolerance(actual, expected, dtype: str, policy: TolerancePolicy) -> bool:
    """Pure-python elementwise comparison over flat value sequences.

    This is the orchestrator-side reference semantics; workers implement
    the same rule over real tensors.
    """
    if len(actual) != len(expected):
        return False
    tol = policy.for_dtype(dtype)
    if tol is None:
        return all(a == b for a, b in zip(actual, expected))
    rtol, atol = tol
    for a, b in zip(actual, expected):
        a_nan, b_nan = math.isnan(a), math.isnan(b)
        if a_nan or b_nan:
            if not (a_nan and b_nan and policy.nan_equal):
                return False
            continue
        if math.isinf(a) or math.isinf(b):
            if a != b:
                return False
            continue
        if abs(a - b) > atol + rtol * abs(b):
            return False
    return True


# -- feedback payloads ----------------------------------------------------------


@dataclass(frozen=True)
class TensorSummary:
    """Abbreviated tensor view: head/tail excerpt plus whole-tensor stats."""

    dtype: str
    shape: tuple[int, ...]
    head: tuple = ()
    tail: tuple = ()
    stats: dict = field(default_factory=dict)  # min/max/mean/nan_count/inf_count

    def render(self) -> str:
        excerpt = list(self.head)
        joined = ", ".join(_fmt(v) for v in excerpt)
        if self.tail:
            joined += ", ..., " + ", ".join(_fmt(v) for v in self.tail)
        stats = ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(self.stats.items()))
        return (
            f"dtype={self.dtype}, shape={list(self.shape)}, "
            f"values=[{joined}], {stats}"
        )

    def to_json(self) -> dict:
        return {
            "dtype": self.dtype,
            "shape": list(self.shape),
            "head": list(self.head),
            "tail": list(self.tail),
            "stats": dict(self.stats),
        }

    @staticmethod
    def from_json(doc: dict) -> "TensorSummary":
        return TensorSummary(
            dtype=doc["dtype"],
            shape=tuple(doc["shape"]),
            head=tuple(doc.get("head", [])),
            tail=tuple(doc.get("tail", [])),
            stats=dict(doc.get("stats", {})),
        )


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass(frozen=True)
class AccuracyPayload:
    """Everything the accuracy feedback prompt needs about the first failure."""

    cpu_summary: TensorSummary
    device_summary: TensorSummary
    input_signature: str = ""
    output_signature: str = ""
    input_shape: tuple = ()
    input_tensor_excerpt: str = ""
    input_args: str = "[]"
    input_kwargs: str = "{}"

    def to_json(self) -> dict:
        return {
            "cpu_summary": self.cpu_summary.to_json(),
            "device_summary": self.device_summary.to_json(),
            "input_signature": self.input_signature,
            "output_signature": self.output_signature,
            "input_shape": list(self.input_shape),
            "input_tensor_excerpt": self.input_tensor_excerpt,
            "input_args": self.input_args,
            "input_kwargs": self.input_kwargs,
        }

    @staticmethod
    def from_json(doc: dict) -> "AccuracyPayload":
        return AccuracyPayload(
            cpu_summary=TensorSummary.from_json(doc["cpu_summary"]),
            device_summary=TensorSummary.from_json(doc["device_summary"]),
            input_signature=doc.get("input_signature", ""),
            output_signature=doc.get("output_signature", ""),
            input_shape=tuple(doc.get("input_shape", [])),
            input_tensor_excerpt=doc.get("input_tensor_excerpt", ""),
            input_args=doc.get("input_args", "[]"),
            input_kwargs=doc.get("input_kwargs", "{}"),
        )


MAX_CRASH_EXCERPT = 8192


@dataclass(frozen=True)
class CrashReport:
    """Structured runtime-crash summary passed through from the worker."""

    crash_kind: str
    backtrace_frames: tuple = ()  # of (function, location)
    register_summary: str = ""
    raw_excerpt: str = ""

    def __post_init__(self):
        if len(self.raw_excerpt) > MAX_CRASH_EXCERPT:
            object.__setattr__(self, "raw_excerpt", self.raw_excerpt[-MAX_CRASH_EXCERPT:])

    def to_json(self) -> dict:
        return {
            "crash_kind": self.crash_kind,
            "backtrace_frames": [[f, l] for f, l in self.backtrace_frames],
            "register_summary": self.register_summary,
            "raw_excerpt": self.raw_excerpt,
        }

    @staticmethod
    def from_json(doc: dict) -> "CrashReport":
        return CrashReport(
            crash_kind=doc["crash_kind"],
            backtrace_frames=tuple((f[0], f[1]) for f in doc.get("backtrace_frames", [])),
            register_summary=doc.get("register_summary", ""),
            raw_excerpt=doc.get("raw_excerpt", ""),
        )


# -- messages --------------------------------------------------------------------


@dataclass(frozen=True)
class Capabilities:
    msg_id: str


@dataclass(frozen=True)
class LoadCandidate:
    msg_id: str
    module_source: str
    operator: str
    dtype: str | None = None  # compile unit is per-dtype


@dataclass(frozen=True)
class RunTest:
    msg_id: str
    case: TestCase
    policy: TolerancePolicy


@dataclass(frozen=True)
class Shutdown:
    msg_id: str


@dataclass(frozen=True)
class CapabilitiesOk:
    msg_id: str
    backend: str  # jit | interpreter | mock
    dtypes: tuple = ()


@dataclass(frozen=True)
class LoadOk:
    msg_id: str


@dataclass(frozen=True)
class CompileError:
    msg_id: str
    log: str


@dataclass(frozen=True)
class TestPassed:
    msg_id: str
    case_id: str


@dataclass(frozen=True)
class TestFailed:
    msg_id: str
    case_id: str
    payload: AccuracyPayload


@dataclass(frozen=True)
class RuntimeCrash:
    msg_id: str
    case_id: str
    report: CrashReport


@dataclass(frozen=True)
class ProtocolError:
    msg_id: str
    detail: str


_REQUEST_KINDS = {
    Capabilities: "capabilities",
    LoadCandidate: "load_candidate",
    RunTest: "run_test",
    Shutdown: "shutdown",
}
_RESPONSE_KINDS = {
    CapabilitiesOk: "capabilities_ok",
    LoadOk: "load_ok",
    CompileError: "compile_error",
    TestPassed: "test_passed",
    TestFailed: "test_failed",
    RuntimeCrash: "runtime_crash",
    ProtocolError: "protocol_error",
}
MESSAGE_KINDS = {**_REQUEST_KINDS, **_RESPONSE_KINDS}


def _payload_of(msg) -> dict:
    if isinstance(msg, Capabilities) or isinstance(msg, Shutdown) or isinstance(msg, LoadOk):
        return {}
    if isinstance(msg, LoadCandidate):
        return {"module_source": msg.module_source, "operator": msg.operator, "dtype": msg.dtype}
    if isinstance(msg, RunTest):
        return {"case": msg.case.to_json(), "policy": msg.policy.to_json()}
    if isinstance(msg, CapabilitiesOk):
        return {"backend": msg.backend, "dtypes": list(msg.dtypes)}
    if isinstance(msg, CompileError):
        return {"log": msg.log}
    if isinstance(msg, TestPassed):
        return {"case_id": msg.case_id}
    if isinstance(msg, TestFailed):
        return {"case_id": msg.case_id, "payload": msg.payload.to_json()}
    if isinstance(msg, RuntimeCrash):
        return {"case_id": msg.case_id, "report": msg.report.to_json()}
    if isinstance(msg, ProtocolError):
        return {"detail": msg.detail}
    raise TypeError(f"not a protocol message: {type(msg).__name__}")


def _message_from(kind: str, msg_id: str, payload: dict):
    try:
        if kind == "capabilities":
            return Capabilities(msg_id)
        if kind == "load_candidate":
            return LoadCandidate(
                msg_id,
                module_source=payload["module_source"],
                operator=payload["operator"],
                dtype=payload.get("dtype"),
            )
        if kind == "run_test":
            return RunTest(
                msg_id,
                case=TestCase.from_json(payload["case"]),
                policy=TolerancePolicy.from_json(payload["policy"]),
            )
        if kind == "shutdown":
            return Shutdown(msg_id)
        if kind == "capabilities_ok":
            return CapabilitiesOk(msg_id, backend=payload["backend"], dtypes=tuple(payload.get("dtypes", [])))
        if kind == "load_ok":
            return LoadOk(msg_id)
        if kind == "compile_error":
            return CompileError(msg_id, log=payload["log"])
        if kind == "test_passed":
            return TestPassed(msg_id, case_id=payload["case_id"])
        if kind == "test_failed":
            return TestFailed(
                msg_id,
                case_id=payload["case_id"],
                payload=AccuracyPayload.from_json(payload["payload"]),
            )
        if kind == "runtime_crash":
            return RuntimeCrash(
                msg_id,
                case_id=payload["case_id"],
                report=CrashReport.from_json(payload["report"]),
            )
        if kind == "protocol_error":
            return ProtocolError(msg_id, detail=payload["detail"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFrame(f"bad payload for {kind!r}: {exc}") from exc
    raise MalformedFrame(f"unknown message type: {kind!r}")


def encode_message(msg) -> bytes:
    """Serialize a message to one length-prefixed frame."""
    kind = MESSAGE_KINDS.get(type(msg))
    if kind is None:
        raise TypeError(f"not a protocol message: {type(msg).__name__}")
    body = json.dumps(
        {"v": PROTOCOL_VERSION, "id": msg.msg_id, "type": kind, "payload": _payload_of(msg)},
        sort_keys=True,
    ).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"frame body is {len(body)} bytes")
    return _LEN.pack(len(body)) + body


def decode_frame(frame: bytes):
    """Decode one complete frame (prefix included) back into a message."""
    if len(frame) < _LEN.size:
        raise MalformedFrame("frame shorter than its length prefix")
    (length,) = _LEN.unpack(frame[: _LEN.size])
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"declared body of {length} bytes")
    body = frame[_LEN.size :]
    if len(body) != length:
        raise MalformedFrame(f"declared {length} bytes, got {len(body)}")
    return decode_body(body)


def decode_body(body: bytes):
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"frame body is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedFrame("frame body must be a JSON object")
    if doc.get("v") != PROTOCOL_VERSION:
        raise VersionMismatch(f"protocol version {doc.get('v')!r}, want {PROTOCOL_VERSION}")
    if "id" not in doc or "type" not in doc:
        raise MalformedFrame("frame body missing id or type")
    return _message_from(doc["type"], doc["id"], doc.get("payload", {}))


# -- stream helpers ---------------------------------------------------------------


def write_message(stream: IO[bytes], msg) -> None:
    stream.write(encode_message(msg))
    stream.flush()


def read_message(stream: IO[bytes]):
    """Read one message from a blocking byte stream. Returns None on EOF."""
    prefix = _read_exact(stream, _LEN.size)
    if prefix is None:
        return None
    (length,) = _LEN.unpack(prefix)
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"declared body of {length} bytes")
    body = _read_exact(stream, length)
    if body is None:
        raise MalformedFrame("stream ended mid-frame")
    return decode_body(body)


def _read_exact(stream: IO[bytes], n: int):
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise MalformedFrame("stream ended mid-frame")
        buf += chunk
    return buf
