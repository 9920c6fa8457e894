"""Host-side reference evaluation: input materialization, reference op
resolution, per-dtype tolerance comparison, and tensor summaries."""

from __future__ import annotations

import math

import torch

DTYPE_MAP = {
    "float32": torch.float32,
    "float16": torch.float16,
    "bfloat16": torch.bfloat16,
    "int32": torch.int32,
    "int64": torch.int64,
}
DTYPE_NAMES = {v: k for k, v in DTYPE_MAP.items()}

FLOAT_DTYPES = {"float32", "float16", "bfloat16"}


class UnknownOperator(Exception):
    pass


def resolve_reference(operator: str):
    """Map an operator name to its host implementation (torch namespace)."""
    target = torch
    for part in operator.split("."):
        target = getattr(target, part, None)
        if target is None:
            raise UnknownOperator(f"no host reference for operator {operator!r}")
    if not callable(target):
        raise UnknownOperator(f"host reference for {operator!r} is not callable")
    return target


def materialize(spec: dict) -> torch.Tensor:
    """Turn a wire tensor spec into a CPU tensor. Seeded descriptors are
    bitwise-reproducible: same {seed, shape, dtype, distribution} gives the
    same tensor in any process."""
    kind = spec.get("kind")
    dtype = DTYPE_MAP[spec["dtype"]]
    shape = tuple(int(s) for s in spec["shape"])
    if kind == "literal":
        return torch.tensor(spec["values"], dtype=dtype).reshape(shape)
    if kind == "random":
        gen = torch.Generator(device="cpu")
        gen.manual_seed(int(spec["seed"]))
        distribution = spec.get("distribution", "uniform")
        if spec["dtype"] in FLOAT_DTYPES:
            if distribution == "normal":
                base = torch.randn(shape, generator=gen, dtype=torch.float32)
            else:
                base = torch.rand(shape, generator=gen, dtype=torch.float32) * 4.0 - 2.0
            return base.to(dtype)
        return torch.randint(-10, 10, shape, generator=gen, dtype=dtype)
    raise ValueError(f"unknown tensor spec kind {kind!r}")


def materialize_case(case: dict):
    """(tensors, args, kwargs) for a TestCase document. Positional args may
    reference input tensors with {"$tensor": i} markers (captured plans
    preserve exact argument order that way); without markers the call is
    wrapper(*tensors, *args)."""
    tensors = [materialize(t) for t in case.get("input_tensors", [])]
    raw_args = list(case.get("input_args", []))
    kwargs = dict(case.get("input_kwargs", {}))
    has_markers = any(isinstance(a, dict) and "$tensor" in a for a in raw_args)
    if has_markers:
        args = [tensors[a["$tensor"]] if isinstance(a, dict) and "$tensor" in a else a
                for a in raw_args]
        return [], args, kwargs
    return tensors, raw_args, kwargs


# -- comparison -------------------------------------------------------------------


def _as_tensor(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value
    return torch.as_tensor(value)


def compare_outputs(actual, expected, policy: dict) -> tuple[bool, str]:
    """Elementwise |a - b| <= atol + rtol * |b| for floats (per-dtype pairs
    from the policy), exact equality for integers, NaN-equal per policy."""
    actual = _as_tensor(actual)
    expected = _as_tensor(expected)
    if tuple(actual.shape) != tuple(expected.shape):
        return False, f"shape mismatch: {tuple(actual.shape)} vs {tuple(expected.shape)}"
    if actual.dtype != expected.dtype:
        return False, f"dtype mismatch: {actual.dtype} vs {expected.dtype}"

    dtype_name = DTYPE_NAMES.get(expected.dtype)
    tolerances = policy.get("float_tolerances", {})
    if dtype_name not in FLOAT_DTYPES or not expected.is_floating_point():
        ok = bool(torch.equal(actual, expected))
        return ok, "" if ok else "integer outputs differ"

    rtol, atol = tolerances.get(dtype_name, (0.0, 0.0))
    nan_equal = bool(policy.get("nan_equal", True))

    a = actual.to(torch.float64)
    b = expected.to(torch.float64)
    a_nan = torch.isnan(a)
    b_nan = torch.isnan(b)
    if nan_equal:
        if not torch.equal(a_nan, b_nan):
            return False, "NaN positions differ"
    elif bool(a_nan.any() or b_nan.any()):
        return False, "NaN present and nan_equal is off"

    a_inf = torch.isinf(a)
    b_inf = torch.isinf(b)
    if not torch.equal(a_inf, b_inf) or not torch.equal(a[a_inf], b[b_inf]):
        return False, "infinities differ"

    finite = ~(a_nan | a_inf)
    diff = (a[finite] - b[finite]).abs()
    bound = atol + rtol * b[finite].abs()
    if bool((diff > bound).any()):
        worst = float((diff - bound).max())
        return False, f"max elementwise excess {worst:.3g} over atol+rtol*|ref|"
    return True, ""


# -- summaries ---------------------------------------------------------------------

EXCERPT_HEAD = 8
EXCERPT_TAIL = 8


def _scalar(value: torch.Tensor):
    v = value.item()
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return v
    return v


def summarize_tensor(tensor) -> dict:
    """TensorSummary document: bounded excerpt plus whole-tensor stats."""
    tensor = _as_tensor(tensor)
    flat = tensor.reshape(-1)
    values = flat[:EXCERPT_HEAD]
    head = [_scalar(v) for v in values]
    tail = []
    if flat.numel() > EXCERPT_HEAD:
        tail = [_scalar(v) for v in flat[-EXCERPT_TAIL:]]
    if tensor.is_floating_point():
        work = flat.to(torch.float64)
        nan_count = int(torch.isnan(work).sum())
        inf_count = int(torch.isinf(work).sum())
        finite = work[torch.isfinite(work)]
        stats = {
            "min": float(finite.min()) if finite.numel() else 0.0,
            "max": float(finite.max()) if finite.numel() else 0.0,
            "mean": float(finite.mean()) if finite.numel() else 0.0,
            "nan_count": nan_count,
            "inf_count": inf_count,
        }
    else:
        stats = {
            "min": int(flat.min()) if flat.numel() else 0,
            "max": int(flat.max()) if flat.numel() else 0,
            "mean": float(flat.to(torch.float64).mean()) if flat.numel() else 0.0,
            "nan_count": 0,
            "inf_count": 0,
        }
    return {
        "dtype": DTYPE_NAMES.get(tensor.dtype, str(tensor.dtype)),
        "shape": list(tensor.shape),
        "head": head,
        "tail": tail,
        "stats": stats,
    }


def render_signature(tensors, args, kwargs) -> str:
    parts = [f"Tensor{list(t.shape)} {DTYPE_NAMES.get(t.dtype, t.dtype)}" for t in tensors]
    parts += [repr(a) for a in args]
    parts += [f"{k}={v!r}" for k, v in kwargs.items()]
    return "(" + ", ".join(parts) + ")"


def render_excerpt(tensor, cap: int = 16) -> str:
    flat = _as_tensor(tensor).reshape(-1)
    shown = [_scalar(v) for v in flat[:cap]]
    suffix = ", ..." if flat.numel() > cap else ""
    return "[" + ", ".join(str(v) for v in shown) + suffix + "]"
