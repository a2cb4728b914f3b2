import numpy as np


def conv_out_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def im2col(x, kernel, stride=1, padding=0):
    """(B, C, H, W) -> (B, Ho*Wo, C*k*k) patch matrix, any dtype."""
    b, c, h, w = x.shape
    ho = conv_out_size(h, kernel, stride, padding)
    wo = conv_out_size(w, kernel, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b, c, kernel, kernel, ho, wo), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, :, i, j] = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b, ho * wo, c * kernel * kernel)


def col2out(z, batch, ho, wo):
    """(B, Ho*Wo, Cout) matmul result -> (B, Cout, Ho, Wo)."""
    return z.reshape(batch, ho, wo, -1).transpose(0, 3, 1, 2)


def weight_matrix(w):
    """(Cout, C, k, k) kernel -> (C*k*k, Cout) right operand."""
    return w.reshape(w.shape[0], -1).T.copy()
