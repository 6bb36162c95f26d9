"""Dense float64 kernels shared by the rest of the package.

Matrices are C-ordered (row-major) ``numpy.float64`` arrays. The helpers
here validate shapes up front so a mismatch fails with both shapes in the
message instead of surfacing as a broadcasting accident three calls later.
"""

import numpy as np

__all__ = ["as_dense", "matmul", "l2_normalize", "saxpy", "column_norms", "row_norms"]


def as_dense(a, ndim=None):
    """Return ``a`` as a C-contiguous float64 array, optionally checking ``ndim``."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if ndim is not None and out.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {out.shape}")
    return out


def matmul(a, b):
    a = as_dense(a, 2)
    b = as_dense(b, 2)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def l2_normalize(v, target_norm=1.0):
    """Rescale ``v`` so its Euclidean norm equals ``target_norm``."""
    if not target_norm > 0:
        raise ValueError(f"target_norm must be positive, got {target_norm}")
    v = as_dense(v, 1)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v * (target_norm / norm)


def saxpy(alpha, x, y):
    x = as_dense(x)
    y = as_dense(y)
    if x.shape != y.shape:
        raise ValueError(f"saxpy length mismatch: {x.shape} vs {y.shape}")
    return alpha * x + y


def row_norms(a):
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def column_norms(a):
    return np.sqrt(np.einsum("ij,ij->j", a, a))
