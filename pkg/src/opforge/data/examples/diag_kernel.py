@triton.jit
def kernel_embed(
    input_ptr,
    output_ptr,
    n,
    size,
    offset,
):
    pid = tl.program_id(0)
    if pid >= n:
        return
    value = tl.load(input_ptr + pid)
    row = pid
    col = pid
    if offset >= 0:
        col = pid + offset
    else:
        row = pid - offset
    tl.store(output_ptr + row * size + col, value)


@triton.jit
def kernel_extract(
    input_ptr,
    output_ptr,
    length,
    rows,
    cols,
    offset,
):
    pid = tl.program_id(0)
    if pid >= length:
        return
    row = pid
    col = pid
    if offset >= 0:
        col = pid + offset
    else:
        row = pid - offset
    value = tl.load(input_ptr + row * cols + col)
    tl.store(output_ptr + pid, value)
