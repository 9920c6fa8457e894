"""Scripted protocol-v1 worker for tests and dry runs.

Answers every request from an outcome table, so campaigns are reproducible
with no tensor stack installed. Runnable as a subprocess:

    python -m opforge.mockworker --transport stdio --backend mock --mock-script script.json

Script format (JSON)::

    {
      "schema_version": 1,
      "capabilities": {"backend": "mock", "dtypes": ["float32"]},
      "operators": {
        "<operator name>" | "__default__": {
          "load":  [{"outcome": "ok"} | {"outcome": "compile_error", "log": "..."} | {"outcome": "die"}],
          "tests": [{"outcome": "pass"} | {"outcome": "fail", "payload": {...}}
                    | {"outcome": "crash", "report": {...}} | {"outcome": "die"}]
        }
      }
    }

Outcome lists are consumed per operator in order; the last entry repeats.
"die" makes the process exit abruptly, simulating a worker killed mid-run.
Sequenced outcomes are deterministic only while all of one operator's
requests stay on one worker process, which holds because a session owns
its lease.
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys
from pathlib import Path

from .dtypes import DTYPE_TEST_ORDER
from .errors import MalformedFrame, VersionMismatch
from .protocol import (
    AccuracyPayload,
    Capabilities,
    CapabilitiesOk,
    CompileError,
    CrashReport,
    LoadCandidate,
    LoadOk,
    ProtocolError,
    RunTest,
    RuntimeCrash,
    Shutdown,
    TestFailed,
    TestPassed,
    read_message,
    write_message,
)
from .prompts import summarize_values


def default_accuracy_payload(case_id: str = "", dtype: str = "float32") -> AccuracyPayload:
    cpu = summarize_values(dtype, (4,), [0.1, 0.2, 0.3, 0.4])
    dev = summarize_values(dtype, (4,), [-0.1, -0.2, -0.3, -0.4])
    return AccuracyPayload(
        cpu_summary=cpu,
        device_summary=dev,
        input_signature="(Tensor input)",
        output_signature="Tensor",
        input_shape=(4,),
        input_tensor_excerpt="[0.5, 1.0, 1.5, 2.0]",
        input_args="[]",
        input_kwargs="{}",
    )


def default_crash_report() -> CrashReport:
    return CrashReport(
        crash_kind="IndexError",
        backtrace_frames=(("kernel", "candidate:12"), ("wrapper", "candidate:30")),
        raw_excerpt="IndexError: pointer offset out of bounds",
    )


class ScriptedWorker:
    """Protocol server whose behaviour is a pure function of the script."""

    def __init__(self, script: dict):
        caps = script.get("capabilities", {})
        self.backend = caps.get("backend", "mock")
        self.dtypes = tuple(caps.get("dtypes", DTYPE_TEST_ORDER))
        self.operators = script.get("operators", {})
        self._cursors: dict[tuple[str, str], int] = {}
        self.current_operator: str | None = None

    def _next_outcome(self, operator: str, phase: str) -> dict:
        table = self.operators.get(operator) or self.operators.get("__default__") or {}
        outcomes = table.get(phase) or [{"outcome": "ok" if phase == "load" else "pass"}]
        key = (operator, phase)
        idx = self._cursors.get(key, 0)
        entry = outcomes[min(idx, len(outcomes) - 1)]
        self._cursors[key] = idx + 1
        return entry

    def handle(self, msg):
        if isinstance(msg, Capabilities):
            return CapabilitiesOk(msg.msg_id, backend=self.backend, dtypes=self.dtypes)
        if isinstance(msg, Shutdown):
            return None
        if isinstance(msg, LoadCandidate):
            self.current_operator = msg.operator
            entry = self._next_outcome(msg.operator, "load")
            if entry["outcome"] == "die":
                os._exit(1)
            if entry["outcome"] == "compile_error":
                return CompileError(msg.msg_id, log=entry.get("log", "error: compilation failed"))
            return LoadOk(msg.msg_id)
        if isinstance(msg, RunTest):
            if self.current_operator is None:
                return ProtocolError(msg.msg_id, detail="RunTest before LoadCandidate")
            entry = self._next_outcome(self.current_operator, "tests")
            outcome = entry["outcome"]
            if outcome == "die":
                os._exit(1)
            if outcome == "pass":
                return TestPassed(msg.msg_id, case_id=msg.case.case_id)
            if outcome == "fail":
                payload = (
                    AccuracyPayload.from_json(entry["payload"])
                    if "payload" in entry
                    else default_accuracy_payload(msg.case.case_id, msg.case.dtype)
                )
                return TestFailed(msg.msg_id, case_id=msg.case.case_id, payload=payload)
            if outcome == "crash":
                report = (
                    CrashReport.from_json(entry["report"])
                    if "report" in entry
                    else default_crash_report()
                )
                return RuntimeCrash(msg.msg_id, case_id=msg.case.case_id, report=report)
            return ProtocolError(msg.msg_id, detail=f"unknown scripted outcome {outcome!r}")
        return ProtocolError(getattr(msg, "msg_id", "?"), detail=f"unhandled request {type(msg).__name__}")


def serve(reader, writer, worker: ScriptedWorker) -> None:
    while True:
        try:
            msg = read_message(reader)
        except (MalformedFrame, VersionMismatch) as exc:
            write_message(writer, ProtocolError("?", detail=str(exc)))
            continue
        if msg is None:
            return
        resp = worker.handle(msg)
        if resp is None:  # Shutdown
            return
        write_message(writer, resp)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="opforge-mockworker")
    parser.add_argument("--transport", default="stdio")
    parser.add_argument("--backend", default="mock", choices=["mock"])
    parser.add_argument("--mock-script", default=None)
    args = parser.parse_args(argv)

    script = {}
    if args.mock_script:
        script = json.loads(Path(args.mock_script).read_text())
    worker = ScriptedWorker(script)

    if args.transport == "stdio":
        serve(sys.stdin.buffer, sys.stdout.buffer, worker)
        return 0
    if args.transport.startswith("tcp:"):
        port = int(args.transport.split(":", 1)[1])
        server = socket.create_server(("127.0.0.1", port))
        conn, _ = server.accept()
        with conn:
            rfile = conn.makefile("rb")
            wfile = conn.makefile("wb")
            serve(rfile, wfile, worker)
        return 0
    print(f"unsupported transport: {args.transport}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
