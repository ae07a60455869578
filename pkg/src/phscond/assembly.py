"""Global sparse system for steady conduction over all subdomains.

The governing equation is ``div(k grad T) + qdot = 0`` with ``qdot`` the
volumetric heat generation.  With constant conductivity per subdomain this
becomes ``k lap(T) = -qdot`` at interior points.  Interface points carry the
flux balance ``k1 dT/dn|_1 - k2 dT/dn|_2 = 0`` instead, with the normal
pointing from subdomain 2 into subdomain 1 and the row divided by
``max(k1, k2)``.

Finally every row, right-hand side included, is divided by its largest
coefficient magnitude (``SparseSystem.row_scale``).  Laplacian rows are
O(1/h^2) while Dirichlet rows are O(1); equilibrating them keeps the
attainable relative residual near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np
import scipy.sparse as sp

from phscond.geometry import BOUNDARY, INTERFACE, INTERIOR, PointSet
from phscond.rbf import PlanWeights
from phscond.stencil import CloudPlan

PDE, FLUX, DIRICHLET, NEUMANN = 0, 1, 2, 3
ROW_KINDS = ("pde", "interface_flux", "dirichlet", "neumann")
MODES = ("multidomain", "single_domain_smearing")

Value = Union[float, Callable[[np.ndarray], np.ndarray]]


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet temperature or Neumann outward flux ``k dT/dn``."""

    kind: str
    value: Value = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise AssemblyError(f"unknown boundary condition kind {self.kind!r}")

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        if callable(self.value):
            return np.asarray(self.value(x), dtype=float).reshape(x.shape[0])
        return np.full(x.shape[0], float(self.value))


def dirichlet(value: Value = 0.0) -> BoundaryCondition:
    return BoundaryCondition("dirichlet", value)


def neumann(value: Value = 0.0) -> BoundaryCondition:
    return BoundaryCondition("neumann", value)


@dataclass(frozen=True)
class ProblemSpec:
    """Material data, sources and boundary conditions.

    ``source`` maps subdomain -> constant heat generation.  ``source_fn``,
    when given, overrides it: ``source_fn(coords, subdomain_ids)`` returns
    the generation rate at each point.  ``boundary`` maps boundary region ->
    condition; key ``None`` is the default for unlisted regions.
    """

    conductivity: Mapping[int, float]
    boundary: Mapping[int | None, BoundaryCondition] = field(default_factory=lambda: {None: dirichlet(0.0)})
    source: Mapping[int, float] = field(default_factory=dict)
    source_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    mode: str = "multidomain"

    def __post_init__(self):
        if self.mode not in MODES:
            raise AssemblyError(f"unknown mode {self.mode!r}")
        bad = {s: k for s, k in self.conductivity.items() if not k > 0}
        if bad:
            raise AssemblyError(f"conductivities must be positive: {bad}")

    def k(self, subdomain: np.ndarray) -> np.ndarray:
        try:
            return np.array([self.conductivity[int(s)] for s in np.atleast_1d(subdomain)], dtype=float)
        except KeyError as exc:
            raise AssemblyError(f"no conductivity for subdomain {exc.args[0]}") from None

    def generation(self, coords: np.ndarray, subdomain: np.ndarray) -> np.ndarray:
        if self.source_fn is not None:
            return np.asarray(self.source_fn(coords, subdomain), dtype=float).reshape(coords.shape[0])
        return np.array([self.source.get(int(s), 0.0) for s in subdomain], dtype=float)

    def bc_for(self, region: int) -> BoundaryCondition:
        if region in self.boundary:
            return self.boundary[region]
        if None in self.boundary:
            return self.boundary[None]
        raise AssemblyError(f"no boundary condition for boundary region {region}")


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Assembled rows; ``row_scale[i]`` is the factor row ``i`` was divided by."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    row_kind: np.ndarray
    row_scale: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def row_counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.row_kind == code)) for code, name in enumerate(ROW_KINDS)}

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.rhs - self.matrix @ x

    def export(self, matrix_path, rhs_path) -> None:
        """Coordinate-format matrix ``i j value`` and one rhs value per line."""
        coo = self.matrix.tocoo()
        with open(matrix_path, "w") as fh:
            fh.write(f"# {self.n} {self.n} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {v!r}\n")
        np.savetxt(rhs_path, self.rhs, fmt="%.17g")


class _Rows:
    """Collects COO triplets row by row."""

    def __init__(self, n: int):
        self.n = n
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs = np.zeros(n)
        self.kind = np.full(n, -1, dtype=np.int8)

    def add(self, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> None:
        self.rows.append(np.repeat(rows, cols.shape[1]))
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel())

    def build(self) -> SparseSystem:
        missing = np.flatnonzero(self.kind < 0)
        if missing.size:
            raise AssemblyError(f"no equation assembled for point {missing[0]}")
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals)
        mat = sp.coo_matrix((v, (r, c)), shape=(self.n, self.n)).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        scale = np.zeros(self.n)
        nz = np.diff(mat.indptr) > 0
        scale[nz] = np.maximum.reduceat(np.abs(mat.data), mat.indptr[:-1][nz])
        if np.any(scale == 0):
            raise AssemblyError(f"row {int(np.flatnonzero(scale == 0)[0])} is empty")
        mat = sp.diags(1.0 / scale) @ mat
        return SparseSystem(mat.tocsr(), self.rhs / scale, self.kind, scale)


def _check(ps: PointSet, plan: CloudPlan, weights: PlanWeights) -> None:
    if weights.lap.shape != plan.members.shape:
        raise AssemblyError("weights are missing or misaligned with the cloud plan")
    if np.any(plan.primary < 0):
        raise AssemblyError(f"point {int(np.flatnonzero(plan.primary < 0)[0])} has no cloud")


def _boundary_rows(ps, plan, weights, spec, acc: _Rows, kvals: np.ndarray) -> None:
    idx = np.flatnonzero(ps.kind == BOUNDARY)
    if idx.size == 0:
        return
    has_normal = np.linalg.norm(ps.normal[idx], axis=1) > 0
    regions = ps.interface_id[idx]
    for region in np.unique(regions):
        sel = idx[regions == region]
        bc = spec.bc_for(int(region))
        vals = bc.evaluate(ps.coords[sel])
        if bc.kind == "neumann":
            nrm_ok = np.linalg.norm(ps.normal[sel], axis=1) > 0
            # corner/edge points carry no normal and stay Dirichlet
            corner = sel[~nrm_ok]
            if corner.size:
                _corner_rows(ps, spec, corner, acc)
            sel, vals = sel[nrm_ok], vals[nrm_ok]
            rows = plan.primary[sel]
            w = weights.directional(rows, ps.normal[sel]) * kvals[sel, None]
            acc.add(sel, plan.members[rows], w)
            acc.rhs[sel] = vals
            acc.kind[sel] = NEUMANN
        else:
            acc.add(sel, sel[:, None], np.ones((sel.size, 1)))
            acc.rhs[sel] = vals
            acc.kind[sel] = DIRICHLET


def _corner_rows(ps, spec, sel, acc: _Rows) -> None:
    """Dirichlet rows for normal-less points in a Neumann region.

    The value comes from any Dirichlet condition in the spec; corners of a
    fully Neumann boundary are rejected.
    """
    dirichlets = [bc for bc in spec.boundary.values() if bc.kind == "dirichlet"]
    if not dirichlets:
        raise AssemblyError(f"boundary point {sel[0]} has no normal and no Dirichlet condition applies")
    vals = dirichlets[0].evaluate(ps.coords[sel])
    acc.add(sel, sel[:, None], np.ones((sel.size, 1)))
    acc.rhs[sel] = vals
    acc.kind[sel] = DIRICHLET


def assemble_multidomain(ps: PointSet, plan: CloudPlan, weights: PlanWeights, spec: ProblemSpec) -> SparseSystem:
    """PDE rows per subdomain, flux-balance rows on interfaces, boundary rows."""
    _check(ps, plan, weights)
    acc = _Rows(ps.n)
    kvals = spec.k(ps.subdomain_id)

    pde = np.flatnonzero(ps.kind == INTERIOR)
    rows = plan.primary[pde]
    acc.add(pde, plan.members[rows], weights.lap[rows] * kvals[pde, None])
    acc.rhs[pde] = -spec.generation(ps.coords[pde], ps.subdomain_id[pde])
    acc.kind[pde] = PDE

    iface = np.flatnonzero(ps.kind == INTERFACE)
    if iface.size:
        if np.any(plan.secondary[iface] < 0):
            bad = iface[plan.secondary[iface] < 0][0]
            raise AssemblyError(f"interface point {bad} lacks a dual cloud")
        r1, r2 = plan.primary[iface], plan.secondary[iface]
        k1 = spec.k(ps.adjacent[iface, 0])
        k2 = spec.k(ps.adjacent[iface, 1])
        scale = np.maximum(k1, k2)
        n = ps.normal[iface]
        acc.add(iface, plan.members[r1], weights.directional(r1, n) * (k1 / scale)[:, None])
        acc.add(iface, plan.members[r2], -weights.directional(r2, n) * (k2 / scale)[:, None])
        acc.rhs[iface] = 0.0
        acc.kind[iface] = FLUX

    _boundary_rows(ps, plan, weights, spec, acc, kvals)
    return acc.build()


def conductivity_field(ps: PointSet, spec: ProblemSpec) -> np.ndarray:
    """Pointwise k; interface points take the first (matrix side) subdomain."""
    return spec.k(ps.subdomain_id)


def assemble_smearing(ps: PointSet, plan: CloudPlan, weights: PlanWeights, spec: ProblemSpec) -> SparseSystem:
    """Single-domain rows ``k lap T + grad k . grad T = -qdot`` at every non-boundary point.

    ``grad k`` is obtained by applying first-derivative weights to the
    pointwise conductivity field, so a jump in k is differentiated across.
    Interface points are treated as ordinary interior points.
    """
    _check(ps, plan, weights)
    if np.any(plan.secondary >= 0):
        raise AssemblyError("smearing mode expects unrestricted single clouds")
    acc = _Rows(ps.n)
    kvals = conductivity_field(ps, spec)
    pde = np.flatnonzero(ps.kind != BOUNDARY)
    rows = plan.primary[pde]
    mem = plan.members[rows]
    gk = np.einsum("cqk,cq->ck", weights.grad[rows], kvals[mem])
    coef = weights.lap[rows] * kvals[pde, None] + np.einsum("cqk,ck->cq", weights.grad[rows], gk)
    acc.add(pde, mem, coef)
    acc.rhs[pde] = -spec.generation(ps.coords[pde], ps.subdomain_id[pde])
    acc.kind[pde] = PDE
    _boundary_rows(ps, plan, weights, spec, acc, kvals)
    return acc.build()


def manufactured_rhs(spec: ProblemSpec, field, coords: np.ndarray, subdomain: np.ndarray, kind: np.ndarray | None = None) -> np.ndarray:
    """``k_s * lap(T_exact)`` at the given points of constant-k subdomains.

    ``field`` must provide ``laplacian(coords, subdomain)``.  Interface points
    have no PDE row and are rejected.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    subdomain = np.atleast_1d(subdomain)
    if kind is not None and np.any(np.atleast_1d(kind) == INTERFACE):
        raise AssemblyError("manufactured source requested at an interface point (no PDE row there)")
    return spec.k(subdomain) * field.laplacian(coords, subdomain)
