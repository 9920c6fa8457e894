"""Interpreter for the block-based kernel DSL (the ``tl`` surface).

Candidate kernels are ordinary Python functions over pointers and blocks;
this module gives those names meaning on the CPU so correctness can be
checked without an accelerator. Blocks wrap torch tensors (torch is the
backing store so bfloat16/float16 behave), pointers wrap a flat view of
the caller's tensor plus an integer offset block, and loads/stores are
bounds-checked gathers/scatters: an out-of-range access raises IndexError
the way the device would fault, instead of reading garbage.

Only the functionality on the default lint allowlist is implemented;
calling an unimplemented allowlisted name raises NotImplementedError,
which surfaces as a runtime crash for the candidate.
"""

from __future__ import annotations

import torch


class DType:
    """A kernel-language dtype handle (also what ``ptr.dtype.element_ty`` yields)."""

    def __init__(self, name: str, torch_dtype):
        self.name = name
        self.torch_dtype = torch_dtype

    @property
    def element_ty(self):
        return self

    def __repr__(self):
        return f"tl.{self.name}"


float32 = DType("float32", torch.float32)
float16 = DType("float16", torch.float16)
bfloat16 = DType("bfloat16", torch.bfloat16)
int1 = DType("int1", torch.bool)
int8 = DType("int8", torch.int8)
int16 = DType("int16", torch.int16)
int32 = DType("int32", torch.int32)
int64 = DType("int64", torch.int64)
uint8 = DType("uint8", torch.uint8)

_BY_TORCH = {d.torch_dtype: d for d in (float32, float16, bfloat16, int1, int8, int16, int32, int64, uint8)}


class constexpr:  # noqa: N801  (matches the DSL's lowercase name)
    """Marker used in kernel signatures; carries no behaviour here."""

    def __init__(self, value=None):
        self.value = value


def _unwrap(x):
    if isinstance(x, Block):
        return x.tensor
    if isinstance(x, DType):
        return x  # let torch raise; a dtype is not a value
    return x


def _wrap(x):
    if isinstance(x, torch.Tensor):
        return Block(x)
    return x


class Block:
    """A value in the kernel: a torch tensor with block semantics."""

    __slots__ = ("tensor",)

    def __init__(self, tensor):
        if not isinstance(tensor, torch.Tensor):
            tensor = torch.as_tensor(tensor)
        self.tensor = tensor

    @property
    def dtype(self) -> DType:
        return _BY_TORCH[self.tensor.dtype]

    @property
    def shape(self):
        return tuple(self.tensor.shape)

    def to(self, dtype):
        target = dtype.torch_dtype if isinstance(dtype, DType) else dtype
        return Block(self.tensor.to(target))

    def item(self):
        return self.tensor.item()

    def __bool__(self):
        return bool(self.tensor.item())

    def __int__(self):
        return int(self.tensor.item())

    def __float__(self):
        return float(self.tensor.item())

    def __index__(self):
        return int(self.tensor.item())

    def __len__(self):
        return self.tensor.shape[0]

    def __repr__(self):
        return f"Block({self.tensor})"

    # arithmetic
    def __add__(self, other):
        return Block(self.tensor + _unwrap(other))

    def __radd__(self, other):
        return Block(_unwrap(other) + self.tensor)

    def __sub__(self, other):
        return Block(self.tensor - _unwrap(other))

    def __rsub__(self, other):
        return Block(_unwrap(other) - self.tensor)

    def __mul__(self, other):
        return Block(self.tensor * _unwrap(other))

    def __rmul__(self, other):
        return Block(_unwrap(other) * self.tensor)

    def __truediv__(self, other):
        return Block(self.tensor / _unwrap(other))

    def __rtruediv__(self, other):
        return Block(_unwrap(other) / self.tensor)

    def __floordiv__(self, other):
        return Block(torch.div(self.tensor, _unwrap(other), rounding_mode="floor"))

    def __rfloordiv__(self, other):
        return Block(torch.div(torch.as_tensor(_unwrap(other)), self.tensor, rounding_mode="floor"))

    def __mod__(self, other):
        return Block(self.tensor % _unwrap(other))

    def __rmod__(self, other):
        return Block(_unwrap(other) % self.tensor)

    def __pow__(self, other):
        return Block(self.tensor ** _unwrap(other))

    def __rpow__(self, other):
        return Block(_unwrap(other) ** self.tensor)

    def __neg__(self):
        return Block(-self.tensor)

    def __abs__(self):
        return Block(torch.abs(self.tensor))

    # comparisons -> boolean blocks
    def __lt__(self, other):
        return Block(self.tensor < _unwrap(other))

    def __le__(self, other):
        return Block(self.tensor <= _unwrap(other))

    def __gt__(self, other):
        return Block(self.tensor > _unwrap(other))

    def __ge__(self, other):
        return Block(self.tensor >= _unwrap(other))

    def __eq__(self, other):  # noqa: PLW3201 (DSL semantics, not identity)
        return Block(self.tensor == _unwrap(other))

    def __ne__(self, other):
        return Block(self.tensor != _unwrap(other))

    __hash__ = None

    # bitwise / logical on int or bool blocks
    def __and__(self, other):
        return Block(self.tensor & _unwrap(other))

    def __rand__(self, other):
        return Block(_unwrap(other) & self.tensor)

    def __or__(self, other):
        return Block(self.tensor | _unwrap(other))

    def __ror__(self, other):
        return Block(_unwrap(other) | self.tensor)

    def __xor__(self, other):
        return Block(self.tensor ^ _unwrap(other))

    def __invert__(self):
        return Block(~self.tensor)

    def __lshift__(self, other):
        return Block(self.tensor << _unwrap(other))

    def __rshift__(self, other):
        return Block(self.tensor >> _unwrap(other))

    def __getitem__(self, item):
        return _wrap(self.tensor[_unwrap(item)])


class TensorPointer:
    """Pointer into a flat tensor: base storage plus an integer offset block."""

    __slots__ = ("base", "offsets")

    def __init__(self, base: torch.Tensor, offsets=0):
        self.base = base  # 1-D view sharing the caller's storage
        self.offsets = offsets  # python int or Block of int64

    @property
    def dtype(self) -> DType:
        return _BY_TORCH[self.base.dtype]

    def _shift(self, delta):
        if isinstance(delta, Block):
            new = (Block(torch.as_tensor(self.offsets)) + delta) if not isinstance(self.offsets, Block) else (self.offsets + delta)
            return TensorPointer(self.base, new)
        if isinstance(self.offsets, Block):
            return TensorPointer(self.base, self.offsets + delta)
        return TensorPointer(self.base, self.offsets + delta)

    def __add__(self, delta):
        return self._shift(delta)

    def __radd__(self, delta):
        return self._shift(delta)

    def __sub__(self, delta):
        if isinstance(delta, Block):
            return self._shift(Block(-delta.tensor))
        return self._shift(-delta)

    def __repr__(self):
        return f"TensorPointer(numel={self.base.numel()}, dtype={self.dtype})"


def _offsets_tensor(ptr: TensorPointer):
    if isinstance(ptr.offsets, Block):
        return ptr.offsets.tensor.to(torch.int64)
    return torch.tensor(int(ptr.offsets), dtype=torch.int64)


def _check_bounds(idx: torch.Tensor, numel: int, what: str):
    if idx.numel() == 0:
        return
    lo = int(idx.min())
    hi = int(idx.max())
    if lo < 0 or hi >= numel:
        raise IndexError(
            f"pointer {what} out of bounds: offsets [{lo}, {hi}] outside a "
            f"{numel}-element tensor"
        )


def program_id(axis=0):
    from . import runtime

    return runtime.current_program_id(axis)


def num_programs(axis=0):
    from . import runtime

    return runtime.current_grid_size(axis)


def arange(start, end):
    start = int(_unwrap(start)) if not isinstance(start, int) else start
    end = int(_unwrap(end)) if not isinstance(end, int) else end
    return Block(torch.arange(start, end, dtype=torch.int64))


def load(ptr, mask=None, other=None):
    if not isinstance(ptr, TensorPointer):
        raise TypeError("tl.load expects a pointer")
    idx = _offsets_tensor(ptr)
    numel = ptr.base.numel()
    if idx.dim() == 0:
        _check_bounds(idx.reshape(1), numel, "load")
        return Block(ptr.base[idx])
    if mask is None:
        _check_bounds(idx, numel, "load")
        return Block(ptr.base[idx])
    mask_t = mask.tensor.to(torch.bool) if isinstance(mask, Block) else torch.as_tensor(mask, dtype=torch.bool)
    selected = idx[mask_t]
    _check_bounds(selected, numel, "load")
    if other is None:
        out = torch.zeros(tuple(idx.shape), dtype=ptr.base.dtype)
    else:
        fill = _unwrap(other)
        if isinstance(fill, torch.Tensor):
            out = fill.to(ptr.base.dtype).broadcast_to(tuple(idx.shape)).clone()
        else:
            out = torch.full(tuple(idx.shape), fill, dtype=ptr.base.dtype)
    out[mask_t] = ptr.base[selected]
    return Block(out)


def store(ptr, value, mask=None):
    if not isinstance(ptr, TensorPointer):
        raise TypeError("tl.store expects a pointer")
    idx = _offsets_tensor(ptr)
    numel = ptr.base.numel()
    if isinstance(value, Block):
        val = value.tensor
    elif isinstance(value, torch.Tensor):
        val = value
    else:
        val = torch.tensor(value)
    val = val.to(ptr.base.dtype)
    if idx.dim() == 0:
        _check_bounds(idx.reshape(1), numel, "store")
        ptr.base[idx] = val
        return
    if val.dim() == 0:
        val = val.expand(tuple(idx.shape))
    if mask is None:
        _check_bounds(idx, numel, "store")
        ptr.base[idx] = val
        return
    mask_t = mask.tensor.to(torch.bool) if isinstance(mask, Block) else torch.as_tensor(mask, dtype=torch.bool)
    selected = idx[mask_t]
    _check_bounds(selected, numel, "store")
    ptr.base[selected] = val[mask_t]


def cast(x, dtype):
    return _as_block(x).to(dtype)


def _as_block(x) -> Block:
    return x if isinstance(x, Block) else Block(torch.as_tensor(x))


def _unary(torch_fn):
    def op(x):
        block = _as_block(x)
        return Block(torch_fn(block.tensor))

    return op


def _float_unary(torch_fn):
    # device math units work in float; int blocks fault like they would on hardware
    def op(x):
        block = _as_block(x)
        return Block(torch_fn(block.tensor))

    return op


exp = _float_unary(torch.exp)
exp2 = _float_unary(torch.exp2)
log = _float_unary(torch.log)
log2 = _float_unary(torch.log2)
sqrt = _float_unary(torch.sqrt)
rsqrt = _float_unary(torch.rsqrt)
sin = _float_unary(torch.sin)
cos = _float_unary(torch.cos)
erf = _float_unary(torch.erf)
sigmoid = _float_unary(torch.sigmoid)
floor = _float_unary(torch.floor)
ceil = _float_unary(torch.ceil)
abs = _unary(torch.abs)  # noqa: A001 (DSL surface name)


def add(a, b):
    return _as_block(a) + b


def maximum(a, b):
    return Block(torch.maximum(_as_block(a).tensor, torch.as_tensor(_unwrap(b))))


def minimum(a, b):
    return Block(torch.minimum(_as_block(a).tensor, torch.as_tensor(_unwrap(b))))


def clamp(x, lo, hi):
    return Block(torch.clamp(_as_block(x).tensor, _unwrap(lo), _unwrap(hi)))


def where(cond, a, b):
    cond_t = _as_block(cond).tensor.to(torch.bool)
    a_t = torch.as_tensor(_unwrap(a))
    b_t = torch.as_tensor(_unwrap(b))
    return Block(torch.where(cond_t, a_t, b_t))


def fma(a, b, c):
    return Block(_as_block(a).tensor * _unwrap(b) + _unwrap(c))


def div_rn(a, b):
    return Block(_as_block(a).tensor / _unwrap(b))


def sum(x, axis=None):  # noqa: A001
    t = _as_block(x).tensor
    return Block(t.sum() if axis is None else t.sum(dim=axis))


def max(x, axis=None):  # noqa: A001
    t = _as_block(x).tensor
    if axis is None:
        return Block(t.max())
    values, _ = t.max(dim=axis)
    return Block(values)


def min(x, axis=None):  # noqa: A001
    t = _as_block(x).tensor
    if axis is None:
        return Block(t.min())
    values, _ = t.min(dim=axis)
    return Block(values)


def argmax(x, axis=0):
    return Block(_as_block(x).tensor.argmax(dim=axis))


def argmin(x, axis=0):
    return Block(_as_block(x).tensor.argmin(dim=axis))


def cumsum(x, axis=0):
    return Block(_as_block(x).tensor.cumsum(dim=axis))


def cumprod(x, axis=0):
    return Block(_as_block(x).tensor.cumprod(dim=axis))


def full(shape, value, dtype):
    torch_dtype = dtype.torch_dtype if isinstance(dtype, DType) else dtype
    return Block(torch.full(tuple(int(s) for s in shape), _unwrap(value), dtype=torch_dtype))


def zeros(shape, dtype):
    torch_dtype = dtype.torch_dtype if isinstance(dtype, DType) else dtype
    return Block(torch.zeros(tuple(int(s) for s in shape), dtype=torch_dtype))


def zeros_like(x):
    return Block(torch.zeros_like(_as_block(x).tensor))


def cdiv(a, b):
    a = int(_unwrap(a))
    b = int(_unwrap(b))
    return -(-a // b)


def reshape(x, shape):
    return Block(_as_block(x).tensor.reshape(tuple(int(s) for s in shape)))


def view(x, shape):
    return reshape(x, shape)


def ravel(x):
    return Block(_as_block(x).tensor.reshape(-1))


def expand_dims(x, axis):
    return Block(_as_block(x).tensor.unsqueeze(axis))


def broadcast_to(x, shape):
    return Block(_as_block(x).tensor.broadcast_to(tuple(int(s) for s in shape)))


def trans(x):
    return Block(_as_block(x).tensor.t())


def dot(a, b):
    return Block(torch.matmul(_as_block(a).tensor, _as_block(b).tensor))


def device_assert(cond, msg=""):
    holds = bool(_as_block(cond).tensor.all()) if isinstance(cond, Block) else bool(cond)
    if not holds:
        raise AssertionError(msg or "tl.device_assert failed")


def static_assert(cond, msg=""):
    if not cond:
        raise AssertionError(msg or "tl.static_assert failed")


def static_print(*args):
    pass  # silent on the interpreter


def _unimplemented(name):
    def op(*args, **kwargs):
        raise NotImplementedError(f"tl.{name} is not implemented by the interpreter backend")

    return op


# allowlisted names without interpreter support yet fault loudly, not silently
for _name in (
    "advance", "atomic_add", "atomic_max", "atomic_min", "broadcast", "cat",
    "flip", "make_block_ptr", "multiple_of", "softmax", "sort", "split",
    "swizzle2d",
):
    globals()[_name] = _unimplemented(_name)
