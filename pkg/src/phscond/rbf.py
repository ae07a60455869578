"""Polyharmonic-spline differentiation weights with appended polynomials.

For a cloud ``x_1..x_q`` (base point first) the interpolant is

    s(x) = sum_i lam_i |x - x_i|^(2 alpha + 1) + sum_j gam_j P_j(x)

with ``sum_i lam_i P_j(x_i) = 0``.  The weights of a linear operator L at
the base point solve ``A w = [L phi; L P]`` with the symmetric saddle-point
matrix ``A = [[Phi, P], [P^T, 0]]``; the first q entries of ``w`` are the
differentiation weights.  Everything is assembled in local coordinates
``(x - x_base) / h`` with ``h`` the cloud radius, and derivative weights are
rescaled by ``h**-order`` afterwards.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

COND_WARN = 1e12
COND_FAIL = 1e15
_CHUNK_BYTES = 64 * 2**20


class RBFError(ValueError):
    pass


class SingularCloudError(RBFError):
    def __init__(self, index: int, cond: float):
        super().__init__(f"singular local system at cloud base point {index} (condition ~ {cond:.3g})")
        self.index = index
        self.cond = cond


@dataclass(frozen=True)
class KernelConfig:
    alpha: int = 1
    p: int = 3
    d: int = 2

    def __post_init__(self):
        if self.alpha < 1:
            raise RBFError(f"alpha must be a positive integer, got {self.alpha}")
        if self.p < 1:
            raise RBFError(f"polynomial degree must be >= 1, got {self.p}")
        if self.d not in (2, 3):
            raise RBFError(f"dimension must be 2 or 3, got {self.d}")

    @property
    def power(self) -> int:
        return 2 * self.alpha + 1

    @property
    def m(self) -> int:
        return math.comb(self.p + self.d, self.d)

    @property
    def q(self) -> int:
        return 2 * self.m

    @cached_property
    def exponents(self) -> np.ndarray:
        """Monomial exponents of total degree <= p, graded order."""
        out = []
        for deg in range(self.p + 1):
            if self.d == 2:
                out.extend((deg - j, j) for j in range(deg + 1))
            else:
                for a in range(deg, -1, -1):
                    for b in range(deg - a, -1, -1):
                        out.append((a, b, deg - a - b))
        return np.array(out, dtype=int)


@dataclass(frozen=True)
class DiffWeights:
    operator: str
    weights: np.ndarray
    normal: np.ndarray | None = None


AXIS_OPS = ("ddx", "ddy", "ddz")


def monomials(x: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    """Evaluate all monomials at points ``x`` (..., d) -> (..., m)."""
    out = np.ones(x.shape[:-1] + (exponents.shape[0],))
    for k in range(x.shape[-1]):
        out *= x[..., k, None] ** exponents[:, k]
    return out


def _localize(coords: np.ndarray):
    """Shift to the base point (first row) and scale by the cloud radius."""
    rel = coords - coords[..., :1, :]
    h = np.sqrt(np.max(np.einsum("...k,...k->...", rel, rel), axis=-1))
    if np.any(h == 0):
        raise RBFError("cloud collapsed to a single location")
    return rel / h[..., None, None], h


def _saddle(xi: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    q = xi.shape[-2]
    m = cfg.m
    diff = xi[..., :, None, :] - xi[..., None, :, :]
    r = np.sqrt(np.einsum("...k,...k->...", diff, diff))
    P = monomials(xi, cfg.exponents)
    A = np.zeros(xi.shape[:-2] + (q + m, q + m))
    A[..., :q, :q] = r ** cfg.power
    A[..., :q, q:] = P
    A[..., q:, :q] = np.swapaxes(P, -1, -2)
    return A


def local_matrix(coords: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Saddle-point matrix of one cloud in local (shifted, scaled) coordinates."""
    coords = np.asarray(coords, dtype=float)
    dup = _duplicate_pair(coords)
    if dup is not None:
        raise RBFError(f"cloud points {dup[0]} and {dup[1]} coincide")
    xi, _ = _localize(coords)
    return _saddle(xi, cfg)


def _duplicate_pair(coords):
    diff = coords[:, None, :] - coords[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    hit = np.argwhere(d2 == 0)
    return tuple(hit[0]) if hit.size else None


def _rhs(xi: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Columns: laplacian, d/dx_1..d/dx_d, then a probe for the condition estimate."""
    q, m, d, s = xi.shape[-2], cfg.m, cfg.d, cfg.power
    r = np.sqrt(np.einsum("...k,...k->...", xi, xi))
    rs2 = r ** (s - 2)
    b = np.zeros(xi.shape[:-2] + (q + m, d + 2))
    b[..., :q, 0] = s * (s + d - 2) * rs2
    b[..., :q, 1 : d + 1] = -s * rs2[..., None] * xi
    ex = cfg.exponents
    for k in range(d):
        unit = np.zeros(d, dtype=int)
        unit[k] = 1
        b[..., q:, 1 + k] = np.all(ex == unit, axis=1)
        b[..., q:, 0] += 2.0 * np.all(ex == 2 * unit, axis=1)
    n = q + m
    b[..., :, d + 1] = (-1.0) ** np.arange(n) * (1.0 + np.arange(n) / (n - 1))
    return b


def _solve_batch(coords: np.ndarray, cfg: KernelConfig, bases: np.ndarray | None = None):
    """Laplacian and gradient weights for a stack of clouds.

    Returns ``(lap (nc, q), grad (nc, q, d), cond (nc,))`` where ``cond`` is a
    one-norm condition estimate of each local matrix.
    """
    xi, h = _localize(coords)
    A = _saddle(xi, cfg)
    b = _rhs(xi, cfg)
    try:
        w = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        for c in range(A.shape[0]):
            try:
                np.linalg.solve(A[c], b[c])
            except np.linalg.LinAlgError:
                idx = int(bases[c]) if bases is not None else c
                raise SingularCloudError(idx, math.inf) from None
        raise
    q, d = xi.shape[-2], cfg.d
    anorm = np.max(np.sum(np.abs(A), axis=-2), axis=-1)
    ratio = np.sum(np.abs(w), axis=-2) / np.sum(np.abs(b), axis=-2)
    cond = anorm * np.max(ratio, axis=-1)
    lap = w[..., :q, 0] / (h**2)[..., None]
    grad = w[..., :q, 1 : d + 1] / h[..., None, None]
    return lap, grad, cond


def _check_cond(cond: np.ndarray, bases: np.ndarray | None) -> None:
    bad = np.flatnonzero(~(cond < COND_FAIL))
    if bad.size:
        c = int(bad[0])
        raise SingularCloudError(int(bases[c]) if bases is not None else c, float(cond[c]))
    high = int(np.sum(cond > COND_WARN))
    if high:
        warnings.warn(f"{high} local systems have condition estimates above {COND_WARN:.0e}", RuntimeWarning)


def diff_weights(coords: np.ndarray, cfg: KernelConfig, operator) -> DiffWeights:
    """Differentiation weights of one cloud at its first point.

    ``operator`` is ``"laplacian"``, ``"ddx"``, ``"ddy"``, ``"ddz"``, or a
    normal vector for the directional derivative along it.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.shape[-1] != cfg.d:
        raise RBFError(f"cloud is {coords.shape[-1]}-dimensional, config expects {cfg.d}")
    dup = _duplicate_pair(coords)
    if dup is not None:
        raise RBFError(f"cloud points {dup[0]} and {dup[1]} coincide")
    lap, grad, cond = _solve_batch(coords[None], cfg)
    _check_cond(cond, None)
    if isinstance(operator, str):
        if operator == "laplacian":
            return DiffWeights("laplacian", lap[0])
        if operator in AXIS_OPS[: cfg.d]:
            return DiffWeights(operator, grad[0, :, AXIS_OPS.index(operator)])
        raise RBFError(f"unknown operator {operator!r}")
    n = np.asarray(operator, dtype=float)
    if n.shape != (cfg.d,):
        raise RBFError(f"normal must have {cfg.d} components")
    return DiffWeights("directional", grad[0] @ n, n)


def cloud_weights(coords: np.ndarray, members: np.ndarray, cfg: KernelConfig, bases: np.ndarray | None = None):
    """Laplacian and gradient weights for every cloud of a plan.

    ``members`` is the (n_clouds, q) member index array.  Work is chunked to
    bound memory.
    """
    nc, q = members.shape
    per_cloud = (q + cfg.m) ** 2 * 8 * (cfg.d + 3)
    chunk = max(1, _CHUNK_BYTES // per_cloud)
    lap = np.empty((nc, q))
    grad = np.empty((nc, q, cfg.d))
    cond = np.empty(nc)
    for start in range(0, nc, chunk):
        sl = slice(start, min(start + chunk, nc))
        sub_bases = None if bases is None else bases[sl]
        lap[sl], grad[sl], cond[sl] = _solve_batch(coords[members[sl]], cfg, sub_bases)
    _check_cond(cond, members[:, 0] if bases is None else bases)
    return lap, grad, cond


def interpolate(coords: np.ndarray, cfg: KernelConfig, values: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Evaluate the PHS + polynomial interpolant of ``values`` at ``query``."""
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    query = np.atleast_2d(np.asarray(query, dtype=float))
    xi, h = _localize(coords)
    A = _saddle(xi, cfg)
    rhs = np.concatenate([values, np.zeros(cfg.m)])
    try:
        coef = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise SingularCloudError(0, math.inf) from None
    q = coords.shape[0]
    xq = (query - coords[0]) / h
    r = np.linalg.norm(xq[:, None, :] - xi[None, :, :], axis=-1)
    out = (r ** cfg.power) @ coef[:q] + monomials(xq, cfg.exponents) @ coef[q:]
    return out if out.size > 1 else float(out[0])


@dataclass(frozen=True, eq=False)
class PlanWeights:
    """Weights for every row of a :class:`~phscond.stencil.CloudPlan`."""

    lap: np.ndarray
    grad: np.ndarray
    cond: np.ndarray
    cfg: KernelConfig

    def directional(self, rows: np.ndarray, normals: np.ndarray) -> np.ndarray:
        return np.einsum("cqk,ck->cq", self.grad[rows], normals)


def plan_weights(ps, plan, cfg: KernelConfig) -> PlanWeights:
    if plan.q != cfg.q or ps.dim != cfg.d:
        raise RBFError(f"cloud plan (q={plan.q}, d={ps.dim}) does not match kernel config (q={cfg.q}, d={cfg.d})")
    lap, grad, cond = cloud_weights(ps.coords, plan.members, cfg, plan.base)
    return PlanWeights(lap, grad, cond, cfg)
