"""Restricted namespace for candidate modules.

The sandbox is the runtime twin of the static linter: a candidate that
touches a name outside the allowlist fails at load (module level) or at
run (inside a function), regardless of what the linter saw. Only the JIT
decorator, the kernel-language module, and the allowlisted slice of the
tensor API are visible; there is no ``__import__``.
"""

from __future__ import annotations

import builtins as _builtins
import traceback

import torch

from . import kernel_language as tl
from .runtime import TritonFacade


class CandidateLoadError(Exception):
    """Module-level execution of a candidate failed; carries the log."""

    def __init__(self, log: str):
        super().__init__(log)
        self.log = log


_ALLOWED_TORCH = (
    "empty", "zeros", "ones", "empty_like", "zeros_like", "ones_like",
    "full", "full_like", "tensor", "broadcast_to",
    "Tensor", "device",
    "float32", "float16", "bfloat16", "int32", "int64",
)


class TorchFacade:
    """The tensor API surface matching the lint allowlist."""

    def __init__(self):
        for name in _ALLOWED_TORCH:
            setattr(self, name, getattr(torch, name))

    def __getattr__(self, name):
        raise AttributeError(
            f"torch.{name} is not available to candidate code "
            f"(allowed: {', '.join(sorted(_ALLOWED_TORCH))})"
        )


_SAFE_BUILTIN_NAMES = (
    "range", "len", "isinstance", "tuple", "list", "dict", "set",
    "int", "float", "bool", "str", "min", "max", "abs", "round",
    "enumerate", "zip", "reversed", "sorted", "sum", "all", "any", "divmod",
    "RuntimeError", "ValueError", "TypeError", "IndexError", "KeyError",
    "ZeroDivisionError", "ArithmeticError", "NotImplementedError",
    "AssertionError", "Exception", "True", "False", "None",
)

SAFE_BUILTINS = {
    name: getattr(_builtins, name)
    for name in _SAFE_BUILTIN_NAMES
    if hasattr(_builtins, name)
}


def candidate_globals() -> dict:
    return {
        "__builtins__": dict(SAFE_BUILTINS),
        "__name__": "candidate",
        "triton": TritonFacade(),
        "tl": tl,
        "torch": TorchFacade(),
    }


def load_candidate(module_source: str, overrides: dict | None = None) -> dict:
    """Execute candidate source in the restricted namespace.

    Returns the namespace on success. Any syntax error, import, or
    disallowed module-level name raises CandidateLoadError with a log the
    model can act on. ``overrides`` swaps in real toolchain modules for the
    jit backend.
    """
    namespace = candidate_globals()
    if overrides:
        namespace.update(overrides)
    try:
        code = compile(module_source, "<candidate>", "exec")
    except SyntaxError as exc:
        raise CandidateLoadError(
            f"SyntaxError: {exc.msg} (line {exc.lineno})"
        ) from exc
    try:
        exec(code, namespace)  # noqa: S102 (the namespace is the sandbox)
    except BaseException as exc:
        raise CandidateLoadError(_format_load_failure(exc)) from exc
    wrapper = namespace.get("wrapper")
    if not callable(wrapper):
        raise CandidateLoadError(
            "candidate module does not define a callable named \"wrapper\""
        )
    return namespace


def _format_load_failure(exc: BaseException) -> str:
    lines = traceback.format_exception(type(exc), exc, exc.__traceback__)
    kept = [l for l in lines if "opforge_worker" not in l]
    return "candidate module failed to load:\n" + "".join(kept)[-4000:]
