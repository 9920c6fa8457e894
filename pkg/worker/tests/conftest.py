"""Helpers: case documents, policies, and an in-process protocol client."""

from __future__ import annotations

from pathlib import Path

import pytest

from opforge_worker.server import Worker

FIXTURES = Path(__file__).parent / "fixtures"

DEFAULT_POLICY = {
    "float_tolerances": {
        "float32": [1.3e-6, 1e-5],
        "float16": [1e-3, 1e-5],
        "bfloat16": [1.6e-2, 1e-5],
    },
    "nan_equal": True,
}


def fixture_source(name: str) -> str:
    return (FIXTURES / name).read_text()


def random_case(case_id, dtype, shape, seed=1234, distribution="uniform"):
    return {
        "case_id": case_id,
        "dtype": dtype,
        "input_tensors": [
            {"kind": "random", "dtype": dtype, "shape": list(shape),
             "seed": seed, "distribution": distribution}
        ],
        "input_args": [],
        "input_kwargs": {},
        "source": "opinfo",
    }


def literal_case(case_id, dtype, shape, values, args=(), kwargs=None):
    return {
        "case_id": case_id,
        "dtype": dtype,
        "input_tensors": [
            {"kind": "literal", "dtype": dtype, "shape": list(shape), "values": list(values)}
        ],
        "input_args": list(args),
        "input_kwargs": dict(kwargs or {}),
        "source": "captured",
    }


class WorkerClient:
    """Drive a Worker through its handle() interface with protocol docs."""

    def __init__(self, backend="interpreter"):
        self.worker = Worker(backend)
        self._n = 0

    def request(self, msg_type, payload=None):
        self._n += 1
        result = self.worker.handle(f"m{self._n}", msg_type, payload or {})
        assert result is not None, "unexpected shutdown"
        return result

    def load(self, source, operator, dtype=None):
        return self.request(
            "load_candidate",
            {"module_source": source, "operator": operator, "dtype": dtype},
        )

    def run(self, case, policy=None):
        return self.request("run_test", {"case": case, "policy": policy or DEFAULT_POLICY})


@pytest.fixture
def client():
    return WorkerClient()
