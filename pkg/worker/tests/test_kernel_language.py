import pytest
import torch

import opforge_worker.kernel_language as tl
from opforge_worker.runtime import JitKernel, TensorPointer, cdiv, jit


def test_arange_and_block_arithmetic():
    block = tl.arange(0, 8)
    shifted = 4 + block * 2
    assert shifted.tensor.tolist() == [4, 6, 8, 10, 12, 14, 16, 18]
    mask = shifted < 10
    assert mask.tensor.tolist() == [True, True, True, False, False, False, False, False]


def test_block_to_and_dtype():
    block = tl.arange(0, 4).to(tl.float32)
    assert block.dtype is tl.float32
    back = block.to(tl.int64)
    assert back.tensor.dtype == torch.int64


def test_masked_load_uses_other_value():
    base = torch.tensor([10.0, 20.0, 30.0])
    ptr = TensorPointer(base)
    offsets = tl.arange(0, 5)
    mask = offsets < 3
    out = tl.load(ptr + offsets, mask=mask, other=-1.0)
    assert out.tensor.tolist() == [10.0, 20.0, 30.0, -1.0, -1.0]


def test_unmasked_oob_load_raises_index_error():
    ptr = TensorPointer(torch.zeros(4))
    with pytest.raises(IndexError):
        tl.load(ptr + tl.arange(0, 8))
    with pytest.raises(IndexError):
        tl.load(ptr + (-1))


def test_masked_store_only_touches_selected():
    base = torch.zeros(6)
    ptr = TensorPointer(base)
    offsets = tl.arange(0, 6)
    mask = offsets < 4
    tl.store(ptr + offsets, tl.arange(0, 6).to(tl.float32) + 1, mask=mask)
    assert base.tolist() == [1.0, 2.0, 3.0, 4.0, 0.0, 0.0]


def test_store_casts_to_pointer_dtype():
    base = torch.zeros(3, dtype=torch.int64)
    tl.store(TensorPointer(base) + tl.arange(0, 3), tl.arange(0, 3).to(tl.float32) + 0.0)
    assert base.tolist() == [0, 1, 2]


def test_scalar_load_store_roundtrip():
    base = torch.tensor([5.0, 6.0, 7.0])
    out = torch.zeros(3)
    for i in range(3):
        value = tl.load(TensorPointer(base) + i)
        tl.store(TensorPointer(out) + i, value * 2)
    assert out.tolist() == [10.0, 12.0, 14.0]


def test_pointer_element_type():
    ptr = TensorPointer(torch.zeros(2, dtype=torch.bfloat16))
    assert ptr.dtype.element_ty is tl.bfloat16


def test_where_and_reductions():
    x = tl.arange(0, 6).to(tl.float32)
    y = tl.where(x < 3, x, -x)
    assert y.tensor.tolist() == [0.0, 1.0, 2.0, -3.0, -4.0, -5.0]
    assert tl.sum(x).item() == 15.0
    assert tl.max(x).item() == 5.0
    assert tl.argmax(x).item() == 5


def test_unimplemented_allowlisted_name_faults_loudly():
    with pytest.raises(NotImplementedError):
        tl.softmax(tl.arange(0, 3).to(tl.float32))


def test_grid_launch_serial_program_ids():
    seen = []

    @jit
    def kernel(out_ptr):
        pid = tl.program_id(0)
        seen.append(pid)
        tl.store(out_ptr + pid, pid * 10)

    out = torch.zeros(4, dtype=torch.int64)
    kernel[(4,)](out)
    assert seen == [0, 1, 2, 3]
    assert out.tolist() == [0, 10, 20, 30]


def test_grid_launch_2d():
    points = []

    @jit
    def kernel():
        points.append((tl.program_id(0), tl.program_id(1)))

    kernel[(2, 3)]()
    assert points == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


def test_kernel_requires_grid():
    @jit
    def kernel():
        pass

    assert isinstance(kernel, JitKernel)
    with pytest.raises(RuntimeError):
        kernel()


def test_non_contiguous_argument_rejected():
    @jit
    def kernel(ptr):
        pass

    t = torch.zeros(4, 4).t()
    assert not t.is_contiguous()
    with pytest.raises(RuntimeError):
        kernel[(1,)](t)


def test_stores_visible_through_views():
    # launcher flattens via view(-1); writes must land in the caller's tensor
    out = torch.zeros(2, 3)

    @jit
    def kernel(ptr, n):
        pid = tl.program_id(0)
        if pid >= n:
            return
        tl.store(ptr + pid, 1.0 + pid)

    kernel[(6,)](out, 6)
    assert out.view(-1).tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]


def test_cdiv():
    assert cdiv(33, 32) == 2
    assert cdiv(32, 32) == 1
    assert cdiv(0, 32) == 0
