@triton.jit
def kernel(
    input_ptr,
    output_ptr,
    n_elements,
):
    best_value = tl.load(input_ptr)
    best_index = 0
    for i in range(1, n_elements):
        value = tl.load(input_ptr + i)
        if value > best_value:
            best_value = value
            best_index = i
    tl.store(output_ptr, best_index)
