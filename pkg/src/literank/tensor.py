"""Dense float64 kernels used by the scorers, heads and theory checks.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The helpers
here validate shapes and raise :class:`~literank.errors.ShapeError` with both
operand shapes in the message, which numpy's own errors do not always do.
"""

from __future__ import annotations

import math

import numpy as np

from literank.errors import ContractError, ShapeError

LN_EPS = 1e-5
EIG_TOL = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array with at least one row and column."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must have rows >= 1 and cols >= 1, got {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def relu(m) -> np.ndarray:
    return np.maximum(np.asarray(m, dtype=np.float64), 0.0)


def layer_norm(v, eps: float = LN_EPS) -> np.ndarray:
    """Normalize the last axis to zero mean and unit population variance.

    No gain or bias is applied. Works on a vector or row-wise on a matrix.
    """
    x = np.asarray(v, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ShapeError("layer_norm needs a nonempty vector")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def layer_norm_backward(dy: np.ndarray, y: np.ndarray, x: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Exact vector-Jacobian product of :func:`layer_norm` along the last axis.

    ``y`` is the forward output for input ``x``.
    """
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    mean_dy = dy.mean(axis=-1, keepdims=True)
    mean_dy_y = (dy * y).mean(axis=-1, keepdims=True)
    return (dy - mean_dy - y * mean_dy_y) * inv_std


def symmetric_eigenvalues(m, tol: float = EIG_TOL, max_sweeps: int = 64) -> list[float]:
    """All eigenvalues of a small symmetric matrix, sorted descending.

    Cyclic Jacobi rotations. ``tol`` is relative to ``max(1, ||m||_F)``: the
    symmetry check and the off-diagonal stopping rule both use that scale, since
    an absolute 1e-12 is below float64 resolution for matrices with entries in
    the thousands.
    """
    a = as_matrix(m).copy()
    n, cols = a.shape
    if n != cols:
        raise ContractError(f"eigenvalues need a square matrix, got {a.shape}")
    scale = max(1.0, float(np.linalg.norm(a)))
    asym = float(np.abs(a - a.T).max())
    if asym > tol * scale:
        raise ContractError(f"matrix is not symmetric (max |a - a^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)
    threshold = tol * scale

    for sweep in range(max_sweeps + 1):
        off = np.abs(a - np.diag(np.diag(a)))
        if n == 1 or off.max() < threshold:
            break
        if sweep == max_sweeps:
            raise ContractError(f"Jacobi did not converge in {max_sweeps} sweeps")
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < threshold * 1e-3:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

    return sorted((float(x) for x in np.diag(a)), reverse=True)
