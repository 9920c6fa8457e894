"""Capture tool: record the inputs every tensor operator sees during a
real program run.

A dispatch-mode interceptor wraps each operator call, recording tensor
arguments by value (dtype/shape/flattened data), scalars verbatim, the
phase (forward vs backward, detected from the autograd engine's active
graph task), and the output shapes. Records serialize into the captured
test-plan format the harness replays.

Values are recorded in full; point this at small probe runs, not
production-sized batches, unless you want very large JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch.utils._python_dispatch import TorchDispatchMode

from .reference import DTYPE_NAMES

PLAN_SCHEMA_VERSION = 1


@dataclass
class CaptureRecord:
    operator: str
    overload: str
    phase: str  # forward | backward
    input_tensors: list = field(default_factory=list)  # literal tensor specs
    input_args: list = field(default_factory=list)     # scalars + {"$tensor": i} markers
    input_kwargs: dict = field(default_factory=dict)
    output_shapes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "operator": self.operator,
            "overload": self.overload,
            "phase": self.phase,
            "input_tensors": self.input_tensors,
            "input_args": self.input_args,
            "input_kwargs": self.input_kwargs,
            "output_shapes": self.output_shapes,
        }

    @staticmethod
    def from_json(doc: dict) -> "CaptureRecord":
        return CaptureRecord(
            operator=doc["operator"],
            overload=doc.get("overload", "default"),
            phase=doc.get("phase", "forward"),
            input_tensors=list(doc.get("input_tensors", [])),
            input_args=list(doc.get("input_args", [])),
            input_kwargs=dict(doc.get("input_kwargs", {})),
            output_shapes=list(doc.get("output_shapes", [])),
        )


def _tensor_spec(t: torch.Tensor) -> dict:
    plain = t.detach().cpu()
    if plain.dtype not in DTYPE_NAMES:
        plain = plain.to(torch.float32)
    return {
        "kind": "literal",
        "dtype": DTYPE_NAMES[plain.dtype],
        "shape": list(plain.shape),
        "values": plain.reshape(-1).tolist(),
    }


def _plain_value(value):
    if isinstance(value, (bool, int, float, str)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_plain_value(v) for v in value]
    if isinstance(value, torch.dtype):
        return str(value)  # "torch.float32"; revived on replay
    if isinstance(value, torch.device):
        return str(value)
    if isinstance(value, torch.memory_format):
        return str(value)
    return repr(value)


def _revive_value(value):
    if isinstance(value, str) and value.startswith("torch."):
        revived = getattr(torch, value.split(".", 1)[1], None)
        if revived is not None:
            return revived
    if isinstance(value, list):
        return [_revive_value(v) for v in value]
    return value


def _in_backward() -> bool:
    current = getattr(torch._C, "_current_graph_task_id", None)
    if current is None:
        return False
    try:
        return current() != -1
    except Exception:
        return False


class _Recorder(TorchDispatchMode):
    def __init__(self):
        super().__init__()
        self.records: list[CaptureRecord] = []

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        kwargs = kwargs or {}
        schema_name = getattr(func, "_schema", None)
        if schema_name is not None:
            operator = func._schema.name.replace("aten::", "")
            overload = func._schema.overload_name or "default"
        else:
            operator = str(func)
            overload = "default"

        tensors: list = []
        arg_slots: list = []
        for arg in args:
            if isinstance(arg, torch.Tensor):
                arg_slots.append({"$tensor": len(tensors)})
                tensors.append(_tensor_spec(arg))
            else:
                arg_slots.append(_plain_value(arg))

        record = CaptureRecord(
            operator=operator,
            overload=overload,
            phase="backward" if _in_backward() else "forward",
            input_tensors=tensors,
            input_args=arg_slots,
            input_kwargs={k: _plain_value(v) for k, v in kwargs.items()},
        )

        out = func(*args, **kwargs)

        outputs = out if isinstance(out, (tuple, list)) else (out,)
        record.output_shapes = [
            list(o.shape) for o in outputs if isinstance(o, torch.Tensor)
        ]
        self.records.append(record)
        return out


class TargetCrashed(Exception):
    """The capture target raised; partial records are attached."""

    def __init__(self, cause: BaseException, records: list):
        super().__init__(f"capture target crashed: {cause!r}")
        self.records = records


def capture_inputs(target, out_dir=None) -> list[CaptureRecord]:
    """Run ``target`` (a callable, or a script path executed via runpy)
    under the recorder. Writes per-operator plan files when out_dir is
    given; returns the records either way."""
    recorder = _Recorder()
    try:
        with recorder:
            if callable(target):
                target()
            else:
                import runpy

                runpy.run_path(str(target), run_name="__main__")
    except BaseException as exc:
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        raise TargetCrashed(exc, recorder.records) from exc
    finally:
        if out_dir is not None:
            write_plans(recorder.records, out_dir)
    return recorder.records


def write_plans(records, out_dir) -> None:
    """Group records by operator into captured test-plan documents."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_op: dict[str, list] = {}
    for record in records:
        by_op.setdefault(record.operator, []).append(record)
    for operator, group in sorted(by_op.items()):
        cases = []
        for i, record in enumerate(group):
            dtype = record.input_tensors[0]["dtype"] if record.input_tensors else "float32"
            cases.append(
                {
                    "case_id": f"{operator}/captured/{i}",
                    "dtype": dtype,
                    "input_tensors": record.input_tensors,
                    "input_args": record.input_args,
                    "input_kwargs": record.input_kwargs,
                    "source": "captured",
                }
            )
        doc = {"schema_version": PLAN_SCHEMA_VERSION, "operator": operator, "cases": cases}
        safe = operator.replace("/", "_").replace("\\", "_")
        (out_dir / f"{safe}.json").write_text(json.dumps(doc) + "\n")
    (out_dir / "capture_records.json").write_text(
        json.dumps([r.to_json() for r in records]) + "\n"
    )


def replay_record(record: CaptureRecord):
    """Re-invoke the reference op from a record; returns the outputs.

    The acceptance check on captures: replaying must reproduce the
    recorded output shapes exactly.
    """
    from .reference import materialize

    tensors = [materialize(spec) for spec in record.input_tensors]
    args = [
        tensors[a["$tensor"]] if isinstance(a, dict) and "$tensor" in a else _revive_value(a)
        for a in record.input_args
    ]
    kwargs = {k: _revive_value(v) for k, v in record.input_kwargs.items()}
    packet = torch.ops.aten
    op = getattr(packet, record.operator, None)
    if op is None:
        raise ValueError(f"no aten op named {record.operator!r}")
    overload = getattr(op, record.overload if record.overload else "default")
    out = overload(*args, **kwargs)
    outputs = out if isinstance(out, (tuple, list)) else (out,)
    shapes = [list(o.shape) for o in outputs if isinstance(o, torch.Tensor)]
    return out, shapes
