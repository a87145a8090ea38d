"""Pure numpy version of the compiled row-sum kernel."""

import numpy as np


def kernel_rowsums(x, y, scale, tile=1024):
    """Row sums of ``exp(-scale * ||x_i - y_j||^2)`` over ``j``.

    Same contract as the compiled kernel: tiles of at most ``tile`` x
    ``tile`` vector pairs, squared distances clamped at zero.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if tile < 1:
        raise ValueError("tile must be positive")
    n, m = x.shape[0], y.shape[0]
    if n == 0 or m == 0 or x.shape[1] == 0:
        raise ValueError("empty input")
    nx = np.einsum("ij,ij->i", x, x)
    ny = np.einsum("ij,ij->i", y, y)
    out = np.zeros(n)
    for i0 in range(0, n, tile):
        i1 = min(i0 + tile, n)
        for j0 in range(0, m, tile):
            j1 = min(j0 + tile, m)
            s = x[i0:i1] @ y[j0:j1].T
            s *= -2.0
            s += nx[i0:i1, None]
            s += ny[None, j0:j1]
            np.maximum(s, 0.0, out=s)
            s *= -scale
            np.exp(s, out=s)
            out[i0:i1] += s.sum(axis=1)
    return out
