"""Scripted mock backend: answers every request from an outcome table so
orchestrator test suites can run with zero tensor stack engaged. Same
script format as the orchestrator's bundled mock worker."""

from __future__ import annotations

import os


def _default_accuracy_payload() -> dict:
    return {
        "cpu_summary": {
            "dtype": "float32", "shape": [4], "head": [0.1, 0.2, 0.3, 0.4], "tail": [],
            "stats": {"min": 0.1, "max": 0.4, "mean": 0.25, "nan_count": 0, "inf_count": 0},
        },
        "device_summary": {
            "dtype": "float32", "shape": [4], "head": [-0.1, -0.2, -0.3, -0.4], "tail": [],
            "stats": {"min": -0.4, "max": -0.1, "mean": -0.25, "nan_count": 0, "inf_count": 0},
        },
        "input_signature": "(Tensor input)",
        "output_signature": "(Tensor[4] float32)",
        "input_shape": [4],
        "input_tensor_excerpt": "[0.5, 1.0, 1.5, 2.0]",
        "input_args": "[]",
        "input_kwargs": "{}",
    }


def _default_crash_report() -> dict:
    return {
        "crash_kind": "IndexError",
        "backtrace_frames": [["kernel", "candidate:12"]],
        "register_summary": "",
        "raw_excerpt": "IndexError: pointer offset out of bounds",
    }


class MockWorker:
    def __init__(self, script: dict | None = None):
        script = script or {}
        caps = script.get("capabilities", {})
        self.backend = "mock"
        self.dtypes = list(caps.get("dtypes", ["float32", "bfloat16", "float16", "int32", "int64"]))
        self.operators = script.get("operators", {})
        self._cursors: dict = {}
        self.current_operator = None

    def _next(self, operator: str, phase: str) -> dict:
        table = self.operators.get(operator) or self.operators.get("__default__") or {}
        outcomes = table.get(phase) or [{"outcome": "ok" if phase == "load" else "pass"}]
        key = (operator, phase)
        idx = self._cursors.get(key, 0)
        self._cursors[key] = idx + 1
        return outcomes[min(idx, len(outcomes) - 1)]

    def handle(self, msg_id: str, msg_type: str, payload: dict):
        if msg_type == "capabilities":
            return "capabilities_ok", {"backend": self.backend, "dtypes": self.dtypes}
        if msg_type == "shutdown":
            return None
        if msg_type == "load_candidate":
            self.current_operator = payload.get("operator", "")
            entry = self._next(self.current_operator, "load")
            if entry["outcome"] == "die":
                os._exit(1)
            if entry["outcome"] == "compile_error":
                return "compile_error", {"log": entry.get("log", "error: compilation failed")}
            return "load_ok", {}
        if msg_type == "run_test":
            if self.current_operator is None:
                return "protocol_error", {"detail": "RunTest before LoadCandidate"}
            case_id = payload.get("case", {}).get("case_id", "?")
            entry = self._next(self.current_operator, "tests")
            outcome = entry["outcome"]
            if outcome == "die":
                os._exit(1)
            if outcome == "pass":
                return "test_passed", {"case_id": case_id}
            if outcome == "fail":
                return "test_failed", {
                    "case_id": case_id,
                    "payload": entry.get("payload", _default_accuracy_payload()),
                }
            if outcome == "crash":
                return "runtime_crash", {
                    "case_id": case_id,
                    "report": entry.get("report", _default_crash_report()),
                }
            return "protocol_error", {"detail": f"unknown scripted outcome {outcome!r}"}
        return "protocol_error", {"detail": f"unhandled request type {msg_type!r}"}
