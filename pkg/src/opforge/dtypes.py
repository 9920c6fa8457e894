"""Supported dtypes and their canonical orderings."""

from __future__ import annotations

# The only dtypes the harness generates and tests for.
SUPPORTED_DTYPES = frozenset({"bfloat16", "float16", "float32", "int32", "int64"})

# Dtype-major test ordering: all tests of one dtype run before the next,
# so each dtype is compiled at most once per artifact.
DTYPE_TEST_ORDER = ("float32", "bfloat16", "float16", "int32", "int64")

FLOAT_DTYPES = frozenset({"bfloat16", "float16", "float32"})
INT_DTYPES = frozenset({"int32", "int64"})


def is_float_dtype(dtype: str) -> bool:
    return dtype in FLOAT_DTYPES


def ordered(dtypes) -> tuple[str, ...]:
    """Project a dtype set onto the canonical test order."""
    return tuple(d for d in DTYPE_TEST_ORDER if d in dtypes)
