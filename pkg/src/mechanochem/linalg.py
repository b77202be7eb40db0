"""Sparse storage helpers and the linear solvers used by every implicit stage.

Matrices are ``scipy.sparse.csr_matrix`` throughout.  ``cg_solve`` is a plain
(optionally Jacobi-preconditioned) conjugate-gradient loop; ``direct_solve``
wraps SuperLU with a pivot-size check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

CG = "CG"
DIRECT = "DIRECT"
NONE = "NONE"
JACOBI = "JACOBI"


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed; ``report`` carries the diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    method: str = CG


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def check_csr(A: sp.csr_matrix) -> None:
    """Raise ValueError unless ``A`` has a well-formed compressed-row layout."""
    n_rows, n_cols = A.shape
    off = A.indptr
    if len(off) != n_rows + 1 or off[0] != 0 or np.any(np.diff(off) < 0):
        raise ValueError("row_offsets must be nondecreasing with length n_rows + 1")
    if A.nnz and (A.indices.min() < 0 or A.indices.max() >= n_cols):
        raise ValueError("column index out of range")
    for r in range(n_rows):
        cols = A.indices[off[r]:off[r + 1]]
        if np.any(np.diff(cols) <= 0):
            raise ValueError(f"row {r}: column indices must strictly increase")


def is_symmetric(A, n_pairs: int = 5, rtol: float = 1e-12, seed: int = 0) -> bool:
    """Randomised symmetry certificate: x·(Ay) == y·(Ax) for random pairs."""
    rng = np.random.default_rng(seed)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        return False
    for _ in range(n_pairs):
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        a, b = x @ (A @ y), y @ (A @ x)
        scale = max(abs(a), abs(b), np.linalg.norm(x) * np.linalg.norm(A @ y), 1e-300)
        if abs(a - b) > rtol * scale:
            return False
    return True


def cg_solve(A, b, tol: float = 1e-10, max_iter: int | None = None,
             precond: str = JACOBI, x0=None) -> tuple[np.ndarray, SolveReport]:
    """Conjugate gradients for SPD ``A``.

    Stops once ``‖Ax − b‖₂ ≤ tol·‖b‖₂``.  Returns the last iterate with
    ``converged=False`` if ``max_iter`` (default ``10 n``) is exhausted.
    Raises SolverError("matrix not SPD") if a search direction has p·Ap ≤ 0.
    """
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape != (n,):
        raise ValueError(f"dimension mismatch: A is {A.shape}, b is {b.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    max_iter = 10 * n if max_iter is None else max_iter

    if precond == JACOBI:
        d = np.asarray(A.diagonal(), dtype=float)
        if np.any(d <= 0):
            raise SolverError("matrix not SPD")
        inv_d = 1.0 / d
    elif precond == NONE:
        inv_d = None
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    target = tol * bnorm
    rnorm = np.linalg.norm(r)
    if rnorm <= target or bnorm == 0.0:
        if bnorm == 0.0:
            x = np.zeros(n)
            rnorm = 0.0
        return x, SolveReport(0, float(rnorm), True, CG)

    z = r * inv_d if inv_d is not None else r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < max_iter:
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("matrix not SPD", SolveReport(it, float(rnorm), False, CG))
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            # guard against drift of the recursively updated residual
            rnorm = np.linalg.norm(b - A @ x)
            if rnorm <= target:
                return x, SolveReport(it, float(rnorm), True, CG)
            r = b - A @ x
        z = r * inv_d if inv_d is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(it, float(rnorm), False, CG)


def factorize(A):
    """Sparse LU (SuperLU, partial pivoting); raises SolverError if singular."""
    A = sp.csc_matrix(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix must be square, got {A.shape}")
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1.0)
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SolverError("singular system") from exc
    colmax = np.asarray(abs(A).max(axis=0).todense()).ravel()
    pivots = np.abs(lu.U.diagonal())
    # column j of U comes from original column inv(perm_c)[j]
    if np.any(pivots < 1e-14 * colmax[np.argsort(lu.perm_c)]) or not np.all(np.isfinite(pivots)):
        raise SolverError("singular system")
    return lu


def direct_solve(A, b) -> np.ndarray:
    """Solve ``Ax = b`` by sparse LU with partial pivoting."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, b is {b.shape}")
    return factorize(A).solve(b)


def lump_mass(M) -> np.ndarray:
    """Row-sum lumping; the total sum of entries is preserved."""
    d = np.asarray(M.sum(axis=1)).ravel()
    if np.any(d < 0):
        raise ValueError("invalid mass matrix")
    return d


def reduce_system(A, free: np.ndarray):
    """Restrict a square matrix to the rows/columns in ``free``."""
    A = sp.csr_matrix(A)
    return A[free][:, free]
