import io
import json

import pytest
import torch

from conftest import DEFAULT_POLICY, fixture_source, literal_case, random_case
from opforge_worker import framing
from opforge_worker.mock_backend import MockWorker
from opforge_worker.server import Worker, serve


def test_capabilities_reports_backend(client):
    kind, payload = client.request("capabilities")
    assert kind == "capabilities_ok"
    assert payload["backend"] == "interpreter"
    assert "float32" in payload["dtypes"]


def test_run_before_load_is_protocol_error(client):
    kind, payload = client.run(random_case("exp/float32/0", "float32", (4,)))
    assert kind == "protocol_error"
    assert "LoadCandidate" in payload["detail"]


def test_load_syntax_error_is_compile_error(client):
    kind, payload = client.load("def wrapper(:\n", "exp")
    assert kind == "compile_error"
    assert "SyntaxError" in payload["log"]


def test_load_unknown_operator_is_compile_error(client):
    kind, payload = client.load("def wrapper(x):\n    return x\n", "definitely.not.an.op")
    assert kind == "compile_error"
    assert "no host reference" in payload["log"]


def test_exp_passes(client):
    kind, _ = client.load(fixture_source("exp_candidate.py"), "exp", "float32")
    assert kind == "load_ok"
    kind, payload = client.run(random_case("exp/float32/0", "float32", (33,)))
    assert kind == "test_passed", payload
    assert payload["case_id"] == "exp/float32/0"


def test_outer_fixture_pair_passes(client):
    source = (
        "\n".join(
            line
            for line in open("/root/pkg/tests/fixtures/outer.py").read().splitlines()
        )
        + "\n"
    )
    kind, payload = client.load(source, "outer", "float32")
    assert kind == "load_ok", payload
    case = {
        "case_id": "outer/float32/0",
        "dtype": "float32",
        "input_tensors": [
            {"kind": "literal", "dtype": "float32", "shape": [3], "values": [1.0, 2.0, 3.0]},
            {"kind": "literal", "dtype": "float32", "shape": [2], "values": [4.0, 5.0]},
        ],
        "input_args": [],
        "input_kwargs": {},
        "source": "opinfo",
    }
    kind, payload = client.run(case)
    assert kind == "test_passed", payload


def test_accuracy_failure_returns_payload(client):
    client.load(fixture_source("logsigmoid_flipped.py"), "nn.functional.logsigmoid", "float32")
    kind, payload = client.run(random_case("ls/float32/0", "float32", (16,)))
    assert kind == "test_failed"
    acc = payload["payload"]
    assert acc["cpu_summary"]["stats"]["mean"] < 0 < acc["device_summary"]["stats"]["mean"]
    assert acc["input_shape"] == [16]
    assert acc["input_signature"].startswith("(Tensor[16]")


def test_out_of_bounds_kernel_crashes(client):
    client.load(fixture_source("oob_candidate.py"), "exp", "float32")
    kind, payload = client.run(random_case("exp/float32/oob", "float32", (33,)))
    assert kind == "runtime_crash"
    report = payload["report"]
    assert report["crash_kind"] == "IndexError"
    assert len(report["backtrace_frames"]) >= 1
    assert "out of bounds" in report["raw_excerpt"]


def test_candidate_cannot_mutate_reference_inputs(client):
    cheat = (
        "def wrapper(input):\n"
        "    output = torch.empty_like(input)\n"
        "    n = input.numel()\n"
        "    kernel[(n,)](input.contiguous(), output.view(-1), n)\n"
        "    return output\n"
        "\n"
        "@triton.jit\n"
        "def kernel(input_ptr, output_ptr, n):\n"
        "    pid = tl.program_id(0)\n"
        "    if pid >= n:\n"
        "        return\n"
        "    x = tl.load(input_ptr + pid)\n"
        "    tl.store(input_ptr + pid, x * 0)\n"  # scribbles on its input copy
        "    tl.store(output_ptr + pid, x)\n"
    )
    client.load(cheat, "exp", "float32")
    # identity is not exp, so this fails on accuracy; critically the
    # reference side must have seen pristine inputs
    kind, payload = client.run(literal_case("exp/f32/0", "float32", (4,), [0.0, 1.0, 2.0, 3.0]))
    assert kind == "test_failed"
    cpu_mean = payload["payload"]["cpu_summary"]["stats"]["mean"]
    assert cpu_mean == pytest.approx(float(torch.exp(torch.tensor([0.0, 1.0, 2.0, 3.0])).mean()))


def test_integer_dtype_exact_comparison(client):
    offbyone = (
        "def wrapper(input, other):\n"
        "    output = torch.empty_like(input)\n"
        "    n = input.numel()\n"
        "    kernel[(n,)](input.contiguous(), other.contiguous(), output.view(-1), n)\n"
        "    return output\n"
        "\n"
        "@triton.jit\n"
        "def kernel(input_ptr, other_ptr, output_ptr, n):\n"
        "    pid = tl.program_id(0)\n"
        "    if pid >= n:\n"
        "        return\n"
        "    x = tl.load(input_ptr + pid)\n"
        "    y = tl.load(other_ptr + pid)\n"
        "    tl.store(output_ptr + pid, x + y + 1)\n"
    )
    client.load(offbyone, "add", "int32")
    case = {
        "case_id": "add/int32/0",
        "dtype": "int32",
        "input_tensors": [
            {"kind": "literal", "dtype": "int32", "shape": [3], "values": [1, 2, 3]},
            {"kind": "literal", "dtype": "int32", "shape": [3], "values": [1, 2, 3]},
        ],
        "input_args": [],
        "input_kwargs": {},
        "source": "opinfo",
    }
    # x + y + 1 is off by one from add: exact integer comparison must fail
    kind, payload = client.run(case)
    assert kind == "test_failed"


def test_seeded_descriptors_reproducible(client):
    from opforge_worker.reference import materialize

    spec = {"kind": "random", "dtype": "bfloat16", "shape": [7, 3], "seed": 99, "distribution": "normal"}
    a = materialize(spec)
    b = materialize(spec)
    assert torch.equal(a, b)
    assert a.dtype == torch.bfloat16


# -- framed serve loop ------------------------------------------------------------


def _frames(*messages):
    buf = io.BytesIO()
    for msg_id, msg_type, payload in messages:
        buf.write(framing.encode(msg_id, msg_type, payload))
    buf.seek(0)
    return buf


def _decode_all(blob: bytes):
    stream = io.BytesIO(blob)
    out = []
    while True:
        msg = framing.read(stream)
        if msg is None:
            return out
        out.append(msg)


def test_serve_loop_end_to_end():
    reader = _frames(
        ("c1", "capabilities", {}),
        ("l1", "load_candidate", {"module_source": fixture_source("exp_candidate.py"),
                                  "operator": "exp", "dtype": "float32"}),
        ("t1", "run_test", {"case": random_case("exp/float32/0", "float32", (33,)),
                            "policy": DEFAULT_POLICY}),
        ("s1", "shutdown", {}),
    )
    writer = io.BytesIO()
    serve(reader, writer, Worker("interpreter"))
    responses = _decode_all(writer.getvalue())
    assert [r[1] for r in responses] == ["capabilities_ok", "load_ok", "test_passed"]
    assert [r[0] for r in responses] == ["c1", "l1", "t1"]  # correlation ids echoed


def test_serve_answers_malformed_frame_with_protocol_error():
    buf = io.BytesIO()
    body = json.dumps({"v": 9, "id": "x", "type": "capabilities", "payload": {}}).encode()
    import struct

    buf.write(struct.pack(">I", len(body)) + body)
    buf.write(framing.encode("s", "shutdown", {}))
    buf.seek(0)
    writer = io.BytesIO()
    serve(buf, writer, Worker("interpreter"))
    responses = _decode_all(writer.getvalue())
    assert responses[0][1] == "protocol_error"


def test_mock_backend_scripted_outcomes():
    script = {
        "operators": {
            "exp": {"load": [{"outcome": "compile_error", "log": "boom"}, {"outcome": "ok"}],
                    "tests": [{"outcome": "fail"}, {"outcome": "pass"}]},
        }
    }
    worker = MockWorker(script)
    kind, payload = worker.handle("1", "load_candidate", {"operator": "exp", "module_source": ""})
    assert kind == "compile_error" and payload["log"] == "boom"
    kind, _ = worker.handle("2", "load_candidate", {"operator": "exp", "module_source": ""})
    assert kind == "load_ok"
    kind, _ = worker.handle("3", "run_test", {"case": {"case_id": "x"}})
    assert kind == "test_failed"
    kind, _ = worker.handle("4", "run_test", {"case": {"case_id": "y"}})
    assert kind == "test_passed"
