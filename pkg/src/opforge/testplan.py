"""Test plan assembly: OpInfo-style generated samples and captured inputs.

OpInfo-style cases are seeded-random descriptors (small frames, bit-exact
replay worker-side); captured cases carry literal tensor values recorded
from a real model run. Plans are ordered dtype-major so each dtype
compiles at most once.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

from .catalog import OperatorSpec
from .dtypes import ordered
from .errors import ParseError
from .protocol import RandomTensor, TestCase

PLAN_SCHEMA_VERSION = 1

DEFAULT_SHAPES = ((33,), (4, 8), (128,))  # 33 exercises masking at a non-block-multiple


@dataclass(frozen=True)
class PlanConfig:
    shapes: tuple = DEFAULT_SHAPES
    distribution: str = "uniform"
    extra_args: tuple = ()      # positional args appended to every case
    extra_kwargs: tuple = ()    # of (key, value) pairs

    def to_json(self) -> dict:
        return {
            "shapes": [list(s) for s in self.shapes],
            "distribution": self.distribution,
            "extra_args": list(self.extra_args),
            "extra_kwargs": [list(kv) for kv in self.extra_kwargs],
        }


def _case_seed(op_name: str, dtype: str, index: int) -> int:
    return zlib.crc32(f"{op_name}:{dtype}:{index}".encode("utf-8"))


def build_opinfo_plan(op: OperatorSpec, config: PlanConfig = PlanConfig()) -> list[TestCase]:
    """Deterministic sample plan over the operator's dtypes and the
    configured shapes, dtype-major."""
    cases: list[TestCase] = []
    for dtype in ordered(op.dtypes):
        for i, shape in enumerate(config.shapes):
            cases.append(
                TestCase(
                    case_id=f"{op.name}/{dtype}/{i}",
                    dtype=dtype,
                    input_tensors=(
                        RandomTensor(
                            dtype=dtype,
                            shape=tuple(shape),
                            seed=_case_seed(op.name, dtype, i),
                            distribution=config.distribution,
                        ),
                    ),
                    input_args=tuple(config.extra_args),
                    input_kwargs=dict(config.extra_kwargs),
                    source="opinfo",
                )
            )
    return cases


def load_captured_plan(source) -> list[TestCase]:
    """Load a captured-input plan document (path or JSON text)."""
    from .catalog import _is_path_like

    if isinstance(source, Path) or (isinstance(source, str) and _is_path_like(source)):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed captured plan: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != PLAN_SCHEMA_VERSION:
        raise ParseError("captured plan needs schema_version 1")
    cases = [TestCase.from_json(c) for c in doc.get("cases", [])]
    for case in cases:
        if case.source != "captured":
            raise ParseError(f"case {case.case_id!r} in a captured plan must have source=captured")
    return cases


def resolve_plan(
    op: OperatorSpec,
    test_source: str,
    plan_config: PlanConfig = PlanConfig(),
    captured_dir=None,
) -> list[TestCase]:
    """Assemble the plan the session will run, per the configured source."""
    cases: list[TestCase] = []
    if test_source in ("opinfo", "both"):
        cases += build_opinfo_plan(op, plan_config)
    if test_source in ("captured", "both"):
        if captured_dir is not None:
            path = Path(captured_dir) / f"{sanitize_name(op.name)}.json"
            if path.exists():
                cases += load_captured_plan(path)
    return group_dtype_major(cases)


def group_dtype_major(cases) -> list[TestCase]:
    """Stable-sort cases into canonical dtype order."""
    from .dtypes import DTYPE_TEST_ORDER

    rank = {d: i for i, d in enumerate(DTYPE_TEST_ORDER)}
    return sorted(cases, key=lambda c: rank.get(c.dtype, len(rank)))


def sanitize_name(op_name: str) -> str:
    """Operator name as a filesystem-safe token."""
    return op_name.replace("/", "_").replace("\\", "_")
