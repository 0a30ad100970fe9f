"""Minimal sparse linear algebra for the pressure systems.

Storage, mat-vec and the Bi-CGSTAB iteration ride on scipy; this module
wraps them behind a reporting contract (residual history in physical
norms, right-hand-side-relative or absolute stopping, honest
non-convergence) and adds the preconditioning plumbing the stencils
need: the interior pressure rows have an identically vanishing diagonal,
so plain Jacobi must skip them and the practical route is a cached LU of
the solved system.  The all-Neumann pressure systems (closed boxes,
fully periodic domains) are regularized by a zero-mean Lagrange
multiplier:

    [ A   Z ] [x]   [b]
    [ Z^T 0 ] [s] = [0]

with Z = [1] in the common case.  Z may carry further columns when the
operator has additional exact null vectors (the uniform fully periodic
arrangement does); the multipliers then absorb the components of b that
no x can reach, so the iteration converges to the least-squares solution
instead of stagnating on an inconsistent system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SparseMatrix = sp.csr_matrix


def csr_from_coo(n_rows, n_cols, rows, cols, vals) -> SparseMatrix:
    """Assemble CSR from triplets; duplicates are summed, columns sorted."""
    A = sp.coo_matrix(
        (np.asarray(vals, dtype=float), (rows, cols)), shape=(n_rows, n_cols)
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    return A @ x


@dataclass
class SolveReport:
    converged: bool
    n_iter: int
    residual: float
    target: float
    criterion: str
    restarts: int = 0
    history: list = field(default_factory=list)


def bicgstab(
    A: SparseMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    criterion: str = "relative",
    tol: float = 1e-7,
    max_iter: int = 10000,
    precondition="none",
) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned Bi-CGSTAB (scipy engine) with physical-norm reporting.

    criterion "relative" tests ||r||_2 <= tol * ||b||_2, "absolute" tests
    ||r||_2 <= tol.  b = 0 returns x = 0 immediately.  The report carries
    the true residual ||b - A x|| of the returned iterate and the history
    of true residual norms (entry 0 is the initial residual); convergence
    is judged on that measured value, never on the recurrence residual.
    Breakdown or iteration exhaustion returns the last iterate as
    non-converged rather than raising.

    precondition: "none", "jacobi" (diagonal scaling), or a callable
    z -> M^{-1} z (e.g. a cached LU solve).  All reported residuals are
    those of the original system either way.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    bnorm = np.linalg.norm(b)
    target = tol * bnorm if criterion == "relative" else float(tol)
    if criterion not in ("relative", "absolute"):
        raise ValueError(f"unknown criterion {criterion!r}")
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(True, 0, 0.0, target, criterion)

    if callable(precondition):
        M = spla.LinearOperator((n, n), matvec=precondition)
    elif precondition == "jacobi":
        diag = A.diagonal().copy()
        # scaling by a diagonal entry that is negligible against its row
        # (it cancels exactly in some stencils) would wreck conditioning;
        # leave such columns unscaled
        row_max = np.abs(A).max(axis=1).toarray().ravel()
        weak = np.abs(diag) <= 1e-8 * row_max
        diag[weak] = 1.0
        inv_diag = 1.0 / diag
        M = spla.LinearOperator((n, n), matvec=lambda z: z * inv_diag)
    elif precondition == "none":
        M = None
    else:
        raise ValueError(f"unknown preconditioner {precondition!r}")

    x_init = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    res0 = float(np.linalg.norm(b - A @ x_init))
    report = SolveReport(res0 <= target, 0, res0, target, criterion)
    report.history.append(res0)
    if report.converged:
        return x_init, report

    def record(xk):
        report.n_iter += 1
        report.history.append(float(np.linalg.norm(b - A @ xk)))

    # scipy's stop test max(rtol*||b||, atol) maps onto one criterion each
    rtol, atol = (tol, 0.0) if criterion == "relative" else (0.0, tol)
    x, info = spla.bicgstab(
        A, b, x0=x_init, rtol=rtol, atol=atol, maxiter=max_iter,
        M=M, callback=record,
    )
    res = float(np.linalg.norm(b - A @ x))
    if not np.isfinite(res) or res > res0:
        # diverged or broke down past the starting point: the initial
        # iterate is the best one we can honestly return
        x, res = x_init, res0
    report.residual = res
    report.converged = bool(res <= target)
    return x, report


def direct_preconditioner(A: SparseMatrix):
    """LU-factor A once; the returned solve acts as a right preconditioner.

    With M = A the preconditioned operator is the identity up to rounding
    and Bi-CGSTAB converges in an iteration or two with honestly measured
    residuals.  This is the practical route for the strongly indefinite
    pressure stencils whose interior diagonal vanishes identically, where
    diagonal scaling has nothing to work with and incomplete
    factorizations hit zero pivots.
    """
    factor = spla.splu(A.tocsc())
    return factor.solve


def attach_mean_constraint(
    A: SparseMatrix, extra_null: np.ndarray | None = None
) -> SparseMatrix:
    """Bordered system [[A, Z], [Z^T, 0]] as one CSR matrix.

    The first column of Z is always the ones vector (zero-mean pin).
    ``extra_null`` may supply further null vectors of A, shape (n, k);
    each adds one multiplier that absorbs the matching component of the
    right-hand side.
    """
    n = A.shape[0]
    cols = [np.ones((n, 1))]
    if extra_null is not None:
        extra = np.atleast_2d(np.asarray(extra_null, dtype=float))
        if extra.shape[0] != n:
            extra = extra.T
        cols.append(extra)
    Z = np.hstack(cols)
    return sp.bmat([[A, Z], [Z.T, None]], format="csr")


def solve_zero_mean(
    A: SparseMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    criterion: str = "relative",
    tol: float = 1e-7,
    max_iter: int = 10000,
    precondition="none",
    bordered: SparseMatrix | None = None,
) -> tuple[np.ndarray, float, SolveReport]:
    """Solve A x = b subject to sum(x) = 0 via the Lagrange bordered system.

    Returns (x, multiplier, report) where multiplier is the one attached
    to the mean constraint.  ``bordered`` may pass a prebuilt
    attach_mean_constraint(A, ...) to avoid reassembly in stepping loops;
    the number of constraint rows is inferred from its shape.  A callable
    preconditioner must act on the bordered system.  The relative
    criterion is taken against ||b|| of the original right-hand side (the
    appended constraint rows are homogeneous).
    """
    n = A.shape[0]
    M = bordered if bordered is not None else attach_mean_constraint(A)
    k = M.shape[0] - n
    rhs = np.concatenate([b, np.zeros(k)])
    guess = None
    if x0 is not None:
        guess = np.concatenate([x0, np.zeros(k)])
    x_ext, report = bicgstab(
        M, rhs, guess, criterion=criterion, tol=tol, max_iter=max_iter,
        precondition=precondition,
    )
    x = x_ext[:n]
    # the multiplier absorbs any incompatibility; re-center exactly
    x = x - x.mean()
    return x, float(x_ext[n]), report
