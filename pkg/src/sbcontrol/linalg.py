"""Dense Gaussian elimination with partial pivoting.

The systems solved here are horizon-sized (tens of unknowns), so a direct
elimination keeps the arithmetic auditable and the dependency surface flat.
"""

from __future__ import annotations

import numpy as np


class SingularMatrixError(ArithmeticError):
    """Raised when elimination meets a pivot too small to divide by."""


def solve_dense(a: np.ndarray, b: np.ndarray, pivot_tol: float = 1e-300) -> np.ndarray:
    """Solve ``a @ x = b`` for square ``a`` by row-pivoted Gaussian elimination."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    if n == 0:
        return np.empty(0)
    for col in range(n - 1):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[pivot_row, col]) <= pivot_tol:
            raise SingularMatrixError(f"no usable pivot in column {col}")
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
            b[[col, pivot_row]] = b[[pivot_row, col]]
        for row in range(col + 1, n):
            if a[row, col] != 0.0:
                factor = a[row, col] / a[col, col]
                a[row, col + 1 :] -= factor * a[col, col + 1 :]
                a[row, col] = 0.0
                b[row] -= factor * b[col]
    if abs(a[n - 1, n - 1]) <= pivot_tol:
        raise SingularMatrixError("no usable pivot in final column")
    x = np.empty(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - float(np.dot(a[row, row + 1 :], x[row + 1 :]))) / a[row, row]
    return x
