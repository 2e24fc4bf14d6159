"""Dense LU factorisation with partial pivoting (complex or real)."""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, row: int):
        super().__init__(f"zero pivot at row {row} after pivoting; matrix is singular")
        self.row = row


def lu_factor(a: np.ndarray, block: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Blocked right-looking LU, ``P A = L U``.

    Returns ``(lu, perm)`` with unit-lower ``L`` and ``U`` packed in ``lu`` and
    ``perm`` such that ``a[perm] == L @ U``.
    """
    lu = np.array(a, dtype=np.result_type(a, np.float64), order="C", copy=True)
    n, m = lu.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {lu.shape}")
    perm = np.arange(n)
    for j0 in range(0, n, block):
        j1 = min(j0 + block, n)
        for j in range(j0, j1):
            p = j + int(np.argmax(np.abs(lu[j:, j])))
            if lu[p, j] == 0:
                raise SingularMatrixError(j)
            if p != j:
                lu[[j, p]] = lu[[p, j]]
                perm[[j, p]] = perm[[p, j]]
            lu[j + 1:, j] /= lu[j, j]
            if j + 1 < j1:
                lu[j + 1:, j + 1:j1] -= np.outer(lu[j + 1:, j], lu[j, j + 1:j1])
        if j1 < n:
            lu[j0:j1, j1:] = solve_triangular(lu[j0:j1, j0:j1], lu[j0:j1, j1:],
                                              lower=True, unit_diagonal=True)
            lu[j1:, j1:] -= lu[j1:, j0:j1] @ lu[j0:j1, j1:]
    return lu, perm


def lu_solve(lu: np.ndarray, perm: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = solve_triangular(lu, np.asarray(b)[perm], lower=True, unit_diagonal=True)
    return solve_triangular(lu, y, lower=False)


def solve_dense_complex(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    lu, perm = lu_factor(matrix)
    return lu_solve(lu, perm, rhs)
