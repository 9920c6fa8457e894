"""Kernel launch runtime for the interpreter backend.

``@triton.jit`` wraps a kernel function in a JitKernel; ``kernel[grid]``
returns a launcher that converts tensor arguments to flat pointers and
invokes the function once per grid point, serially. Grid position is kept
in a thread-local so nested launches and threaded servers stay correct.
"""

from __future__ import annotations

import threading

import torch

from .kernel_language import TensorPointer

_state = threading.local()


def current_program_id(axis: int) -> int:
    point = getattr(_state, "point", None)
    if point is None:
        raise RuntimeError("tl.program_id called outside a kernel launch")
    return point[axis] if axis < len(point) else 0


def current_grid_size(axis: int) -> int:
    grid = getattr(_state, "grid", None)
    if grid is None:
        raise RuntimeError("tl.num_programs called outside a kernel launch")
    return grid[axis] if axis < len(grid) else 1


def _to_kernel_arg(value):
    if isinstance(value, torch.Tensor):
        if not value.is_contiguous():
            raise RuntimeError("kernel arguments must be contiguous tensors")
        return TensorPointer(value.view(-1))
    return value


class JitKernel:
    def __init__(self, fn):
        self.fn = fn
        self.__name__ = fn.__name__

    def __getitem__(self, grid):
        if isinstance(grid, int):
            grid = (grid,)
        if not isinstance(grid, tuple) or not all(isinstance(g, int) for g in grid):
            raise TypeError("kernel grid must be an int or a tuple of ints")

        def launcher(*args, **kwargs):
            conv_args = [_to_kernel_arg(a) for a in args]
            conv_kwargs = {k: _to_kernel_arg(v) for k, v in kwargs.items()}
            sizes = tuple(max(int(g), 0) for g in grid)
            prev_point = getattr(_state, "point", None)
            prev_grid = getattr(_state, "grid", None)
            _state.grid = sizes
            try:
                for point in _iter_grid(sizes):
                    _state.point = point
                    self.fn(*conv_args, **conv_kwargs)
            finally:
                _state.point = prev_point
                _state.grid = prev_grid

        return launcher

    def __call__(self, *args, **kwargs):
        raise RuntimeError(
            f"kernel {self.__name__} must be launched with a grid: {self.__name__}[grid](...)"
        )


def _iter_grid(sizes):
    if not sizes:
        yield (0,)
        return
    indices = [0] * len(sizes)
    total = 1
    for s in sizes:
        total *= s
    for _ in range(total):
        yield tuple(indices)
        for axis in range(len(sizes) - 1, -1, -1):
            indices[axis] += 1
            if indices[axis] < sizes[axis]:
                break
            indices[axis] = 0


def jit(fn=None, **_jit_options):
    if fn is None:
        return jit
    return JitKernel(fn)


def cdiv(a: int, b: int) -> int:
    return -(-int(a) // int(b))


class TritonFacade:
    """What candidate code sees as the ``triton`` module."""

    jit = staticmethod(jit)
    cdiv = staticmethod(cdiv)
