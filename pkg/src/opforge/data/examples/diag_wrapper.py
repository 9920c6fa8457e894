def wrapper(input, diagonal=0):
    if input.dim() == 1:
        n = input.size(0)
        size = n + abs(diagonal)
        output = torch.zeros((size, size), dtype=input.dtype, device=input.device)
        if n == 0:
            return output
        grid = (n,)
        kernel_embed[grid](input.contiguous(), output.view(-1), n, size, diagonal)
        return output
    if input.dim() == 2:
        rows = input.size(0)
        cols = input.size(1)
        if diagonal >= 0:
            length = min(rows, cols - diagonal)
        else:
            length = min(rows + diagonal, cols)
        length = max(length, 0)
        output = torch.empty((length,), dtype=input.dtype, device=input.device)
        if length == 0:
            return output
        grid = (length,)
        kernel_extract[grid](input.contiguous().view(-1), output, length, rows, cols, diagonal)
        return output
    raise RuntimeError("diag expects a 1D or 2D tensor")
