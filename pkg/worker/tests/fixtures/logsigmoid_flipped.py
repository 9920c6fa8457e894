@triton.jit
def kernel(input_ptr, output_ptr, n_elements, BLOCK_SIZE: tl.constexpr):
    pid = tl.program_id(0)
    block_start = pid * BLOCK_SIZE
    offsets = block_start + tl.arange(0, BLOCK_SIZE)
    mask = offsets < n_elements
    x = tl.load(input_ptr + offsets, mask=mask, other=0.0)
    x_float = x.to(tl.float32)
    result = tl.log(1 + tl.exp(-x_float))
    tl.store(output_ptr + offsets, result, mask=mask)


def wrapper(input):
    output = torch.empty_like(input)
    input_contig = input.contiguous().view(-1)
    n_elements = input_contig.numel()
    if n_elements == 0:
        return output
    output_flat = output.view(-1)
    BLOCK_SIZE = 32
    grid = (triton.cdiv(n_elements, BLOCK_SIZE),)
    kernel[grid](
        input_contig,
        output_flat,
        n_elements,
        BLOCK_SIZE=BLOCK_SIZE,
    )
    return output
