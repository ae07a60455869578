"""Interpolation clouds restricted to subdomains.

Every interior or boundary point gets one cloud drawn from its own
subdomain.  Interface points get two clouds, one per adjacent subdomain.
Interface points of any interface bounding a subdomain are eligible members
of that subdomain's clouds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from phscond import rbf
from phscond.geometry import INTERFACE, PointSet

ANY_SUBDOMAIN = 0
ISOLATE_INTERFACE_BASE = True
_EXTRA = 6  # spare neighbours fetched to detect distance ties at the cut
UNISOLVENT_TOL = 1e-9  # smallest / largest singular value of the monomial block
_CHUNK = 4096


class StencilError(ValueError):
    pass


def cloud_size(p: int, d: int) -> int:
    """Number of cloud points, twice the number of monomials of degree <= p."""
    return 2 * math.comb(p + d, p)


@dataclass(frozen=True)
class Cloud:
    base_index: int
    member_indices: np.ndarray
    subdomain_id: int


@dataclass(frozen=True, eq=False)
class CloudPlan:
    """All clouds of a point set, stored as aligned arrays.

    Row ``c`` describes one cloud: ``base[c]`` is the base point,
    ``members[c]`` its q member indices (base first) and ``subdomain[c]`` the
    subdomain it is restricted to (0 for unrestricted clouds).
    ``primary[i]`` is the cloud row of point ``i``; ``secondary[i]`` is the
    second cloud of an interface point and -1 elsewhere.  For interface
    points the primary cloud lies in ``adjacent[i, 0]`` and the secondary in
    ``adjacent[i, 1]``.
    """

    base: np.ndarray
    members: np.ndarray
    subdomain: np.ndarray
    primary: np.ndarray
    secondary: np.ndarray
    p: int

    @property
    def q(self) -> int:
        return self.members.shape[1]

    def __len__(self) -> int:
        return self.base.shape[0]

    def cloud(self, row: int) -> Cloud:
        return Cloud(int(self.base[row]), self.members[row].copy(), int(self.subdomain[row]))

    def clouds_of(self, point: int) -> list[Cloud]:
        rows = [self.primary[point], self.secondary[point]]
        return [self.cloud(r) for r in rows if r >= 0]

    def to_csv(self, path) -> None:
        """Debug dump: one line ``base_index, member_indices...`` per cloud."""
        with open(path, "w") as fh:
            for b, mem in zip(self.base, self.members):
                fh.write(",".join(str(int(v)) for v in (b, *mem)) + "\n")


def eligible_mask(ps: PointSet, subdomain: int) -> np.ndarray:
    """Points usable in clouds restricted to ``subdomain``."""
    if subdomain == ANY_SUBDOMAIN:
        return np.ones(ps.n, dtype=bool)
    own = (ps.kind != INTERFACE) & (ps.subdomain_id == subdomain)
    iface = (ps.kind == INTERFACE) & np.any(ps.adjacent == subdomain, axis=1)
    return own | iface


def _sq_dist(coords: np.ndarray, base: np.ndarray, idx: np.ndarray) -> np.ndarray:
    diff = coords[idx] - base[:, None, :] if idx.ndim == 2 else coords[idx] - base
    return np.einsum("...k,...k->...", diff, diff)


def _brute(coords: np.ndarray, base: int, cand: np.ndarray, q: int) -> np.ndarray:
    d2 = _sq_dist(coords, coords[base], cand)
    order = np.lexsort((cand, d2))
    return cand[order[:q]]


def nearest_eligible(ps: PointSet, base: int, subdomain: int, q: int) -> np.ndarray:
    """The ``q`` closest eligible points to ``base``, ties broken by index.

    This is the O(N) reference kernel; :func:`build_clouds` uses a tree and
    falls back to it when a distance tie straddles the cut.
    """
    cand = np.flatnonzero(eligible_mask(ps, subdomain))
    if cand.size < q:
        raise StencilError(
            f"subdomain {subdomain} has {cand.size} eligible points, need {q}"
        )
    return _brute(ps.coords, base, cand, q)


def _query(coords: np.ndarray, bases: np.ndarray, cand: np.ndarray, q: int) -> np.ndarray:
    """q nearest candidates per base, ties by index, exact via brute-force fallback."""
    k = min(q + _EXTRA, cand.size)
    tree = cKDTree(coords[cand])
    _, loc = tree.query(coords[bases], k=k)
    loc = np.asarray(loc).reshape(bases.size, k)
    idx = cand[loc]
    d2 = _sq_dist(coords, coords[bases], idx)
    # row-wise sort by (distance, index)
    order = np.argsort(idx, axis=1, kind="stable")
    idx = np.take_along_axis(idx, order, axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)
    order = np.argsort(d2, axis=1, kind="stable")
    idx = np.take_along_axis(idx, order, axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)
    out = idx[:, :q].copy()
    if k < cand.size:
        # a tie between the last kept and the last fetched distance means
        # unfetched points could tie too; redo those rows exactly
        ambiguous = np.flatnonzero(d2[:, q - 1] >= d2[:, -1])
        for r in ambiguous:
            out[r] = _brute(coords, int(bases[r]), cand, q)
    return out


def _subdomain_clouds(ps: PointSet, bases: np.ndarray, subdomain: int, p: int, interface_base: bool) -> np.ndarray:
    mask = eligible_mask(ps, subdomain)
    q = cloud_size(p, ps.dim)
    if interface_base and ISOLATE_INTERFACE_BASE:
        # flux stencils: the base plus the nearest non-interface points
        cand = np.flatnonzero(mask & (ps.kind != INTERFACE))
        need = q - 1
    else:
        cand = np.flatnonzero(mask)
        need = q
    if cand.size < need:
        raise StencilError(
            f"subdomain {subdomain} has {cand.size} eligible points, need {need} per cloud"
        )
    mem = _query(ps.coords, bases, cand, need)
    if need < q:
        mem = np.column_stack([bases, mem])
    if need < q:
        # the isolated base can leave the block rank deficient next to flat offset layers
        for r in np.flatnonzero(~unisolvent(ps.coords, mem, p)):
            mem[r] = _repair(ps.coords, int(bases[r]), cand, q, p, keep_base=True)
    return mem


def _monomial_block(coords: np.ndarray, members: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    x = coords[members]
    rel = x - x[..., :1, :]
    h = np.sqrt(np.max(np.einsum("...k,...k->...", rel, rel), axis=-1))
    return rbf.monomials(rel / np.where(h > 0, h, 1.0)[..., None, None], exponents)


def unisolvent(coords: np.ndarray, members: np.ndarray, p: int) -> np.ndarray:
    """Whether the monomials of degree <= p are determined by each cloud."""
    ex = rbf.KernelConfig(1, p, coords.shape[1]).exponents
    members = np.atleast_2d(members)
    ok = np.empty(members.shape[0], dtype=bool)
    for lo in range(0, members.shape[0], _CHUNK):
        sv = np.linalg.svd(_monomial_block(coords, members[lo : lo + _CHUNK], ex), compute_uv=False)
        ok[lo : lo + _CHUNK] = sv[:, -1] > UNISOLVENT_TOL * sv[:, 0]
    return ok


def _repair(coords: np.ndarray, base: int, cand: np.ndarray, q: int, p: int, keep_base: bool = True) -> np.ndarray:
    """Rebuild a degenerate cloud, taking points that raise the polynomial rank first.

    Candidates are visited by distance.  A candidate joins at once if it
    adds a new direction to the monomial block; the rest fill the cloud by
    distance after the block has full rank.  Points stacked on a few planes
    (flat offset layers) are what makes the plain nearest cloud degenerate.
    """
    ex = rbf.KernelConfig(1, p, coords.shape[1]).exponents
    m = ex.shape[0]
    pool = cand[cand != base] if keep_base else cand
    order = np.lexsort((pool, np.sum((coords[pool] - coords[base]) ** 2, axis=1)))
    pool = pool[order]
    scale = np.sqrt(np.sum((coords[pool[: 4 * q]] - coords[base]) ** 2, axis=1)).max()
    chosen = [base] if keep_base else []
    basis = np.zeros((0, m))
    spare = []
    for j in pool:
        if basis.shape[0] < m:
            v = rbf.monomials((coords[j] - coords[base]) / scale, ex)
            res = v - basis.T @ (basis @ v)
            res -= basis.T @ (basis @ res)
            nrm = np.linalg.norm(res)
            if nrm > 1e-6 * max(1.0, np.linalg.norm(v)):
                basis = np.vstack([basis, res / nrm])
                chosen.append(int(j))
                continue
        spare.append(int(j))
        if basis.shape[0] == m and len(chosen) + len(spare) >= q:
            break
    picked = chosen + spare[: q - len(chosen)]
    if len(picked) < q:
        raise StencilError(f"cannot form a unisolvent cloud at point {base}")
    rest = np.array(picked[1:] if keep_base else picked)
    rest = rest[np.lexsort((rest, np.sum((coords[rest] - coords[base]) ** 2, axis=1)))]
    return np.concatenate([[base], rest]) if keep_base else rest


def build_clouds(ps: PointSet, p: int, restrict: bool = True) -> CloudPlan:
    """Build the cloud plan for polynomial degree ``p``.

    With ``restrict=False`` every point gets a single cloud drawn from the
    whole point set, ignoring subdomains (single-domain mode).
    """
    q = cloud_size(p, ps.dim)
    n = ps.n
    primary = np.full(n, -1, dtype=np.int64)
    secondary = np.full(n, -1, dtype=np.int64)
    bases, members, subs = [], [], []
    row = 0

    def add(idx: np.ndarray, s: int, target: np.ndarray, iface_base: bool = False):
        nonlocal row
        if idx.size == 0:
            return
        mem = _subdomain_clouds(ps, idx, s, p, iface_base)
        bases.append(idx)
        members.append(mem)
        subs.append(np.full(idx.size, s))
        target[idx] = row + np.arange(idx.size)
        row += idx.size

    if not restrict:
        add(np.arange(n), ANY_SUBDOMAIN, primary)
    else:
        iface = ps.kind == INTERFACE
        for s in ps.subdomains:
            own = np.flatnonzero(~iface & (ps.subdomain_id == s))
            add(own, s, primary)
            add(np.flatnonzero(iface & (ps.adjacent[:, 0] == s)), s, primary, True)
            add(np.flatnonzero(iface & (ps.adjacent[:, 1] == s)), s, secondary, True)
    return CloudPlan(
        base=np.concatenate(bases),
        members=np.vstack(members),
        subdomain=np.concatenate(subs),
        primary=primary,
        secondary=secondary,
        p=p,
    )
