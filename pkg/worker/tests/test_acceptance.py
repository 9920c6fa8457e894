"""Worker acceptance suite: end-to-end interpreter-backend checks, the
tolerance oracle, and the capture tool, each printing a PASS line."""

import math
import random
from collections import Counter

import torch
import torch.nn as nn

from conftest import DEFAULT_POLICY, WorkerClient, fixture_source, random_case
from opforge_worker.capture import capture_inputs, replay_record
from opforge_worker.reference import compare_outputs


def announce(name):
    print(f"\nACCEPTANCE {name}: PASS")


# -- worker end-to-end -------------------------------------------------------------


def test_acceptance_exp_five_dtypes_three_shapes():
    client = WorkerClient()
    source = fixture_source("exp_candidate.py")
    shapes = [(33,), (4, 8), (128,)]  # 33 exercises the masking path
    for dtype in ("float32", "bfloat16", "float16", "int32", "int64"):
        kind, payload = client.load(source, "exp", dtype)
        assert kind == "load_ok", payload
        for i, shape in enumerate(shapes):
            case = random_case(f"exp/{dtype}/{i}", dtype, shape, seed=1000 + i)
            kind, payload = client.run(case)
            assert kind == "test_passed", (dtype, shape, payload)
    announce("worker-exp-5dtype-3shape")


def test_acceptance_sign_flipped_logsigmoid_fails_with_sign_split():
    client = WorkerClient()
    client.load(fixture_source("logsigmoid_flipped.py"), "nn.functional.logsigmoid", "float32")
    kind, payload = client.run(random_case("ls/float32/0", "float32", (64,)))
    assert kind == "test_failed"
    acc = payload["payload"]
    cpu_mean = acc["cpu_summary"]["stats"]["mean"]
    device_mean = acc["device_summary"]["stats"]["mean"]
    assert cpu_mean < 0.0, "reference logsigmoid is strictly negative"
    assert device_mean > 0.0, "flipped kernel output is strictly positive"
    announce("worker-logsigmoid-sign-flip")


def test_acceptance_out_of_bounds_crash_report():
    client = WorkerClient()
    client.load(fixture_source("oob_candidate.py"), "exp", "float32")
    kind, payload = client.run(random_case("exp/float32/oob", "float32", (33,)))
    assert kind == "runtime_crash"
    report = payload["report"]
    assert len(report["backtrace_frames"]) >= 1
    assert report["crash_kind"] == "IndexError"
    announce("worker-oob-crash")


# -- tolerance oracle ---------------------------------------------------------------


def _oracle_within(a, b, rtol, atol, nan_equal=True):
    """Independent elementwise check, written against the definition."""
    a_nan, b_nan = math.isnan(a), math.isnan(b)
    if a_nan or b_nan:
        return a_nan and b_nan and nan_equal
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= atol + rtol * abs(b)


def test_acceptance_tolerance_oracle_10000_pairs():
    rng = random.Random(424242)
    rtol, atol = DEFAULT_POLICY["float_tolerances"]["float32"]
    disagreements = 0
    for _ in range(10_000):
        roll = rng.random()
        if roll < 0.02:
            b = rng.choice([float("nan"), float("inf"), float("-inf")])
        else:
            b = rng.uniform(-1e3, 1e3) * 10 ** rng.randint(-3, 3)
        roll = rng.random()
        if roll < 0.25:
            a = b
        elif roll < 0.5:
            a = b * (1 + rng.uniform(-5e-7, 5e-7)) if not (math.isnan(b) or math.isinf(b)) else b
        elif roll < 0.6:
            a = rng.choice([float("nan"), float("inf"), float("-inf")])
        else:
            a = b + rng.uniform(-1, 1) * 10 ** rng.randint(-8, 2) if not (math.isnan(b) or math.isinf(b)) else -b

        a_t = torch.tensor([a], dtype=torch.float32)
        b_t = torch.tensor([b], dtype=torch.float32)
        ok, _ = compare_outputs(a_t, b_t, DEFAULT_POLICY)
        # the oracle sees exactly the float32-rounded values the worker stores
        expected = _oracle_within(float(a_t[0]), float(b_t[0]), rtol, atol)
        if ok != expected:
            disagreements += 1
    assert disagreements == 0
    announce("tolerance-oracle-10000")


# -- capture tool ---------------------------------------------------------------------


def test_acceptance_capture_mlp_multiset_and_replay():
    torch.manual_seed(7)
    model = nn.Sequential(nn.Linear(3, 5), nn.ReLU(), nn.Linear(5, 2))
    x = torch.randn(4, 3, requires_grad=True)

    def program():
        model(x).sum().backward()

    records = capture_inputs(program)

    # independent oracle recorder: same interception point, separate code
    from torch.utils._python_dispatch import TorchDispatchMode

    oracle = []

    class OracleRecorder(TorchDispatchMode):
        def __torch_dispatch__(self, func, types, args=(), kwargs=None):
            oracle.append(func._schema.name.replace("aten::", ""))
            return func(*args, **(kwargs or {}))

    model2 = nn.Sequential(nn.Linear(3, 5), nn.ReLU(), nn.Linear(5, 2))
    model2.load_state_dict(model.state_dict())
    x2 = x.detach().clone().requires_grad_(True)
    with OracleRecorder():
        model2(x2).sum().backward()

    assert Counter(r.operator for r in records) == Counter(oracle)

    # hand-derived core counts: one t + one addmm per Linear, one relu;
    # backward: 2 mm per addmm node, 1 bias-grad sum each, 1 threshold_backward
    counts = Counter(r.operator for r in records)
    forward = Counter(r.operator for r in records if r.phase == "forward")
    backward = Counter(r.operator for r in records if r.phase == "backward")
    assert forward["addmm"] == 2
    assert forward["relu"] == 1
    assert forward["t"] == 2
    assert forward["sum"] == 1
    assert backward["mm"] == 4
    assert backward["sum"] == 2
    assert backward["threshold_backward"] == 1
    assert counts["addmm"] == 2 and counts["relu"] == 1

    # replaying captured records through the reference ops reproduces shapes
    for record in records:
        _, shapes = replay_record(record)
        assert shapes == record.output_shapes, record.operator
    announce("capture-mlp-multiset-replay")
