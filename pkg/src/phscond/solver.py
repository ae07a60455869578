"""Reordering, preconditioning and BiCGSTAB for the assembled system.

The matrix is permuted symmetrically with reverse Cuthill-McKee, factored
with a zero-fill incomplete LU (or scaled by its diagonal), and solved with
right-preconditioned BiCGSTAB.  The returned residual is always recomputed
from scratch on the original, unpermuted system.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass

import numba
import numpy as np
import scipy.sparse as sp

PRECONDITIONERS = ("ilu0", "jacobi")
# ILU(0) pivots smaller than this fraction of the row's largest entry are
# shifted up to it; the RBF rows otherwise produce tiny pivots after RCM
PIVOT_FLOOR = 0.5
STALL_RESTARTS = 3
BREAKDOWN = 1e-14


class SolverError(RuntimeError):
    pass


class BreakdownError(SolverError):
    def __init__(self, iteration: int, residual: float):
        super().__init__(f"BiCGSTAB breakdown (rho ~ 0) at iteration {iteration}, residual {residual:.3e}")
        self.iteration = iteration
        self.residual = residual


class ConvergenceError(SolverError):
    def __init__(self, iterations: int, best_residual: float, best_x: np.ndarray, report=None):
        super().__init__(
            f"BiCGSTAB did not converge in {iterations} iterations (best relative residual {best_residual:.3e})"
        )
        self.iterations = iterations
        self.best_residual = best_residual
        self.best_x = best_x
        self.report = report


class ZeroPivotError(SolverError):
    def __init__(self, row: int):
        super().__init__(f"ILU(0) zero pivot at row {row}")
        self.row = row


@dataclass(frozen=True)
class SolverConfig:
    rel_tolerance: float = 1e-12
    max_iterations: int = 5000
    preconditioner: str = "ilu0"
    reorder: bool = True

    def __post_init__(self):
        if not 0.0 < self.rel_tolerance < 1.0:
            raise ValueError(f"rel_tolerance must lie in (0, 1), got {self.rel_tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}; choose from {PRECONDITIONERS}")


@dataclass
class SolveReport:
    iterations: int
    residual: float
    bandwidth_before: int
    bandwidth_after: int
    wall_time: float
    preconditioner: str = "ilu0"

    def as_dict(self) -> dict:
        return asdict(self)


def bandwidth(matrix) -> int:
    """Largest ``|i - j|`` over the stored nonzeros."""
    coo = sp.coo_matrix(matrix)
    if coo.nnz == 0:
        return 0
    return int(np.max(np.abs(coo.row.astype(np.int64) - coo.col)))


@numba.njit(cache=True)
def _rcm_kernel(indptr, indices, degree):
    n = indptr.size - 1
    order = np.empty(n, dtype=np.int64)
    seen = np.zeros(n, dtype=np.bool_)
    # vertices by (degree, index) give the min-degree start of each component
    by_degree = np.argsort(degree * (n + 1) + np.arange(n), kind="mergesort")
    head = 0
    tail = 0
    for s in by_degree:
        if seen[s]:
            continue
        seen[s] = True
        order[tail] = s
        tail += 1
        while head < tail:
            v = order[head]
            head += 1
            start = tail
            for jj in range(indptr[v], indptr[v + 1]):
                u = indices[jj]
                if not seen[u]:
                    seen[u] = True
                    order[tail] = u
                    tail += 1
            # newly queued neighbours in increasing degree, ties by index
            for a in range(start + 1, tail):
                u = order[a]
                b = a - 1
                while b >= start and (
                    degree[order[b]] > degree[u] or (degree[order[b]] == degree[u] and order[b] > u)
                ):
                    order[b + 1] = order[b]
                    b -= 1
                order[b + 1] = u
    return order[::-1].copy()


def rcm_permutation(matrix) -> np.ndarray:
    """Reverse Cuthill-McKee ordering of the symmetrized pattern.

    Returns ``perm`` such that ``A[perm][:, perm]`` has the reduced band.
    Each connected component starts from its minimum-degree vertex.  The
    result is only used if it does not widen the band; otherwise the
    identity is returned.
    """
    A = sp.csr_matrix(matrix)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("RCM needs a square matrix")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pat = sp.csr_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape)
    pat = (pat + pat.T).tocsr()
    pat.setdiag(0)
    pat.eliminate_zeros()
    pat.sort_indices()
    degree = np.diff(pat.indptr).astype(np.int64)
    perm = _rcm_kernel(pat.indptr.astype(np.int64), pat.indices.astype(np.int64), degree)
    if bandwidth(A[perm][:, perm]) > bandwidth(A):
        return np.arange(n, dtype=np.int64)
    return perm


@numba.njit(cache=True)
def _ilu0_kernel(indptr, indices, data, floor):
    n = indptr.size - 1
    shifted = 0
    lu = data.copy()
    diag = np.full(n, -1, dtype=np.int64)
    where = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        for jj in range(lo, hi):
            where[indices[jj]] = jj
        for kk in range(lo, hi):
            k = indices[kk]
            if k >= i:
                break
            pivot = lu[diag[k]]
            lu[kk] /= pivot
            lik = lu[kk]
            for jj in range(diag[k] + 1, indptr[k + 1]):
                pos = where[indices[jj]]
                if pos >= 0:
                    lu[pos] -= lik * lu[jj]
        for jj in range(lo, hi):
            if indices[jj] == i:
                diag[i] = jj
            where[indices[jj]] = -1
        if diag[i] < 0 or not np.isfinite(lu[diag[i]]):
            return lu, diag, i, shifted
        piv = lu[diag[i]]
        if abs(piv) < floor[i]:
            lu[diag[i]] = floor[i] if piv >= 0.0 else -floor[i]
            shifted += 1
        if lu[diag[i]] == 0.0:
            return lu, diag, i, shifted
    return lu, diag, -1, shifted


@numba.njit(cache=True)
def _ilu0_apply(indptr, indices, lu, diag, r):
    n = r.size
    y = r.copy()
    for i in range(n):
        s = y[i]
        for jj in range(indptr[i], diag[i]):
            s -= lu[jj] * y[indices[jj]]
        y[i] = s
    for i in range(n - 1, -1, -1):
        s = y[i]
        for jj in range(diag[i] + 1, indptr[i + 1]):
            s -= lu[jj] * y[indices[jj]]
        y[i] = s / lu[diag[i]]
    return y


class ILU0:
    """Incomplete LU with the sparsity pattern of ``A`` (no fill).

    Pivots below ``pivot_floor`` times the largest magnitude in their
    original row are shifted to that floor (sign kept); ``shifted`` counts
    them.  A missing diagonal or a zero row raises :class:`ZeroPivotError`.
    """

    def __init__(self, matrix, pivot_floor: float = PIVOT_FLOOR):
        A = sp.csr_matrix(matrix, copy=True)
        A.sum_duplicates()
        A.sort_indices()
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        rowmax = np.zeros(A.shape[0])
        nz = np.diff(A.indptr) > 0
        rowmax[nz] = np.maximum.reduceat(np.abs(A.data), A.indptr[:-1][nz])
        lu, diag, bad, shifted = _ilu0_kernel(self.indptr, self.indices, A.data.astype(float), pivot_floor * rowmax)
        self.shifted = int(shifted)
        if bad >= 0:
            raise ZeroPivotError(int(bad))
        self.lu = lu
        self.diag = diag

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return _ilu0_apply(self.indptr, self.indices, self.lu, self.diag, r)


class Jacobi:
    """Diagonal scaling; zero diagonal entries are replaced by one."""

    def __init__(self, matrix):
        d = sp.csr_matrix(matrix).diagonal().astype(float)
        d[d == 0] = 1.0
        self.inv = 1.0 / d

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.inv * r


def make_preconditioner(matrix, kind: str):
    """Build ``kind``; an ILU(0) zero pivot falls back to Jacobi with a warning."""
    if kind == "jacobi":
        return Jacobi(matrix), "jacobi"
    try:
        return ILU0(matrix), "ilu0"
    except ZeroPivotError as exc:
        warnings.warn(f"{exc}; falling back to jacobi", RuntimeWarning)
        return Jacobi(matrix), "jacobi"


def _bicgstab_core(A, b, x, M, tol, maxit, bnorm, shadow=None):
    """Right-preconditioned BiCGSTAB from ``x``.

    Returns ``(x, iterations, best_x, broke)``; ``broke`` flags a
    breakdown (``r_hat . r`` or ``r_hat . v`` vanishing relative to the
    vector norms, or ``omega = 0``).  ``shadow`` replaces the default
    shadow residual ``r_hat = r0``.
    """
    r = b - A @ x
    r_hat = r.copy() if shadow is None else shadow
    hat_norm = np.linalg.norm(r_hat)
    rho_old = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    best_x, best_res = x.copy(), np.linalg.norm(r) / bnorm
    if best_res <= tol:
        return x, 0, best_x, False
    for it in range(1, maxit + 1):
        rho = r_hat @ r
        if not abs(rho) > BREAKDOWN * hat_norm * np.linalg.norm(r):
            return x, it - 1, best_x, True
        if it == 1:
            p = r.copy()
        else:
            beta = (rho / rho_old) * (alpha / omega)
            p = r + beta * (p - omega * v)
        ph = M(p)
        v = A @ ph
        denom = r_hat @ v
        if not abs(denom) > BREAKDOWN * hat_norm * np.linalg.norm(v):
            return x, it, best_x, True
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= tol:
            x = x + alpha * ph
            return x, it, x, False
        sh = M(s)
        t = A @ sh
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x = x + alpha * ph + omega * sh
        r = s - omega * t
        res = np.linalg.norm(r) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            return x, it, best_x, False
        if omega == 0.0:
            return x, it, best_x, True
        rho_old = rho
    return x, maxit, best_x, False


def bicgstab(system, cfg: SolverConfig | None = None, x0: np.ndarray | None = None):
    """Solve ``system.matrix @ x = system.rhs``.

    ``system`` is a :class:`~phscond.assembly.SparseSystem` or anything with
    ``matrix`` and ``rhs`` attributes; a ``(matrix, rhs)`` tuple also works.
    Returns ``(x, SolveReport)``.  The iteration restarts from the true
    residual if the recursively updated one has drifted, so the reported
    residual is the recomputed ``||b - A x|| / ||b||``.  Three restarts in a
    row without halving the residual end the solve with
    :class:`ConvergenceError`, which carries the best iterate.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    if isinstance(system, tuple):
        matrix, rhs = system
    else:
        matrix, rhs = system.matrix, system.rhs
    A = sp.csr_matrix(matrix, dtype=float)
    b = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"matrix {A.shape} and rhs {b.shape} do not match")
    bw0 = bandwidth(A)
    perm = rcm_permutation(A) if cfg.reorder else np.arange(n)
    Ap = A[perm][:, perm].tocsr()
    Ap.sort_indices()
    bp = b[perm]
    bw1 = bandwidth(Ap)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, bw0, bw1, time.perf_counter() - t0, cfg.preconditioner)
    M, used = make_preconditioner(Ap, cfg.preconditioner)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)[perm].copy()
    out = np.empty(n)

    def true_residual(xp):
        out[perm] = xp
        return float(np.linalg.norm(b - A @ out) / bnorm)

    total = 0
    best_x, best_res = x.copy(), true_residual(x)
    stalled = 0
    shadow = None
    while best_res > cfg.rel_tolerance:
        x, its, bx, broke = _bicgstab_core(
            Ap, bp, x, M, cfg.rel_tolerance, cfg.max_iterations - total, bnorm, shadow
        )
        total += its
        if broke:
            if shadow is not None:
                raise BreakdownError(total + 1, min(best_res, true_residual(bx)))
            # a residual orthogonal to r0 is common when b lives on a few
            # rows; retry with a fixed pseudo-random shadow vector
            shadow = np.random.default_rng(0).standard_normal(n)
            continue
        previous = best_res
        for cand in (x, bx):
            res = true_residual(cand)
            if res < best_res:
                best_x, best_res = cand.copy(), res
        if best_res <= cfg.rel_tolerance:
            break
        # restarts that no longer halve the residual mean round-off has won
        stalled = stalled + 1 if best_res > 0.5 * previous else 0
        if total >= cfg.max_iterations or its == 0 or stalled >= STALL_RESTARTS:
            out[perm] = best_x
            rep = SolveReport(total, best_res, bw0, bw1, time.perf_counter() - t0, used)
            raise ConvergenceError(total, best_res, out.copy(), rep)
        x = best_x.copy()
    out[perm] = best_x
    return out.copy(), SolveReport(total, best_res, bw0, bw1, time.perf_counter() - t0, used)


solve = bicgstab
