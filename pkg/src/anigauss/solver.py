"""Conjugate gradients and the two ways of solving for the surface elements.

* minimal norm: ``mu = A^T xi`` with ``B xi = 1/2`` (m <= 3, the default)
* least squares: ``H mu = sum_i A_i^T 1/2`` (m > 3)
"""

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceWarning, NumericalBreakdown
from .system import RowBlockMatrix, SolveConfig, assemble_gram, assemble_normal_eq

MINIMAL_NORM = "minimal_norm"
LEAST_SQUARES = "least_squares"


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    path: Optional[str] = None
    converged: bool = True
    seconds: float = 0.0
    history: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {
            "iterations": int(self.iterations),
            "relative_residual": float(self.relative_residual),
            "path": self.path,
            "converged": bool(self.converged),
        }


def _as_operator(apply):
    if callable(apply):
        return apply
    mat = np.asarray(apply)
    return lambda v: mat @ v


def cg_solve(apply, rhs, tol=1e-10, max_iter=2000, precond=None,
             callback: Optional[Callable] = None):
    """Solve ``apply(x) = rhs`` for a symmetric positive (semi)definite operator.

    ``apply`` is a matrix or a callable. ``precond`` is an optional vector of
    inverse diagonal entries (Jacobi). Starts from zero. Stops when the
    recurrence residual drops below ``tol * |rhs|``; the reported residual is
    recomputed from scratch.
    """
    op = _as_operator(apply)
    rhs = np.asarray(rhs, dtype=np.float64)
    if not np.all(np.isfinite(rhs)):
        raise NumericalBreakdown(0)
    t0 = time.perf_counter()
    x = np.zeros_like(rhs)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, seconds=0.0)
    r = rhs.copy()
    z = r * precond if precond is not None else r
    p = z.copy()
    rz = r @ z
    history = [1.0]
    k = 0
    converged = False
    while k < max_iter:
        ap = op(p)
        pap = p @ ap
        if not np.isfinite(pap):
            raise NumericalBreakdown(k + 1)
        if pap <= 0.0:
            # exact breakdown: p is in the null space of a semidefinite operator
            break
        a = rz / pap
        x += a * p
        r -= a * ap
        k += 1
        rel = np.linalg.norm(r) / bnorm
        if not np.isfinite(rel):
            raise NumericalBreakdown(k)
        history.append(rel)
        if callback is not None:
            callback(k, x)
        if rel <= tol:
            converged = True
            break
        z = r * precond if precond is not None else r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    true_rel = float(np.linalg.norm(op(x) - rhs) / bnorm)
    if not converged:
        converged = true_rel <= tol
    report = SolveReport(k, true_rel, converged=converged,
                         seconds=time.perf_counter() - t0, history=history)
    if not converged:
        warnings.warn(f"CG stopped after {k} iterations at relative residual {true_rel:.3e}",
                      ConvergenceWarning, stacklevel=2)
    return x, report


def _jacobi(mat, enabled):
    if not enabled:
        return None
    d = np.diag(mat).copy()
    d[d == 0.0] = 1.0
    return 1.0 / d


def minimal_norm_dense(A, d, alpha=1.0, tol=1e-12, max_iter=None):
    """Minimal-norm solution of a small dense wide system, for checks and tests."""
    A = np.asarray(A, dtype=np.float64)
    B = A @ A.T
    B[np.diag_indices_from(B)] *= alpha
    xi, report = cg_solve(B, d, tol=tol, max_iter=max_iter or 10 * len(B))
    report.path = MINIMAL_NORM
    return A.T @ xi, report


def least_squares_dense(blocks, d, alpha=1.0, tol=1e-12, max_iter=None):
    """Regularised least squares over a list of row blocks sharing one rhs value."""
    blocks = [np.asarray(a, dtype=np.float64) for a in blocks]
    H = sum(a.T @ a for a in blocks)
    H[np.diag_indices_from(H)] *= alpha
    rhs = sum(a.T @ np.broadcast_to(np.asarray(d, dtype=np.float64), (a.shape[0],))
              for a in blocks)
    mu, report = cg_solve(H, rhs, tol=tol, max_iter=max_iter or 10 * len(H))
    report.path = LEAST_SQUARES
    return mu, report


def solve_minimal_norm(velocities, cloud, widths, cfg=SolveConfig()):
    """Assemble ``B``, solve ``B xi = 1/2`` by CG and return ``mu = A^T xi``."""
    B = assemble_gram(velocities, cloud, widths, cfg)
    d = np.full(len(B), 0.5)
    xi, report = cg_solve(B, d, cfg.cg_tol, cfg.cg_max_iter, precond=_jacobi(B, cfg.jacobi))
    del B
    report.path = MINIMAL_NORM
    mu = RowBlockMatrix(velocities, cloud, widths, cfg.batch_size).rmatvec(xi)
    return mu, report


def solve_least_squares(velocities, cloud, widths, cfg=SolveConfig()):
    H, rhs = assemble_normal_eq(velocities, cloud, widths, cfg)
    mu, report = cg_solve(H, rhs, cfg.cg_tol, cfg.cg_max_iter, precond=_jacobi(H, cfg.jacobi))
    report.path = LEAST_SQUARES
    return mu, report


def choose_path(m, path="auto"):
    if path in ("minnorm", MINIMAL_NORM):
        return MINIMAL_NORM
    if path in ("lsq", LEAST_SQUARES):
        return LEAST_SQUARES
    if path != "auto":
        raise ValueError(f"unknown solve path {path!r}")
    return MINIMAL_NORM if m <= 3 else LEAST_SQUARES


def solve(velocities, cloud, widths, cfg=SolveConfig(), path="auto"):
    m = len(np.atleast_2d(getattr(velocities, "vectors", velocities)))
    if choose_path(m, path) == MINIMAL_NORM:
        return solve_minimal_norm(velocities, cloud, widths, cfg)
    return solve_least_squares(velocities, cloud, widths, cfg)
