"""Scattered point sets for multi-material domains.

Points are tagged as interior, external boundary, or interface.  Interface
points carry the unit normal pointing out of the inclusion (subdomain 2 side)
into the surrounding matrix (subdomain 1 side) and the ordered pair of
subdomains they separate.  Subdomain 1 is always the outer matrix; inclusions
are numbered 2, 3, ... in declaration order.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

INTERIOR = 0
BOUNDARY = 1
INTERFACE = 2

KIND_LETTERS = {INTERIOR: "I", BOUNDARY: "B", INTERFACE: "F"}
LETTER_KINDS = {v: k for k, v in KIND_LETTERS.items()}

SHAPES = (
    "composite_slab",
    "circle_in_square",
    "astroid_in_square",
    "sphere_in_cube",
    "multi_inclusion_square",
    "wavy_tube",
    "cylindrical_fillets",
    "imported",
)

# lattice spacing relative to the target mean nearest-neighbour distance
LATTICE_FACTOR = {2: 1.05, 3: 1.2}
MIN_SEPARATION = 0.7
LAYERS = 1
NORMAL_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for degenerate geometry specs or invalid point sets."""


@dataclass(frozen=True, eq=False)
class PointSet:
    """Scattered points with subdomain labels and tags.

    ``interface_id`` holds the interface number for interface points and the
    boundary region number for boundary points (-1 for interior points).
    ``normal`` is zero where no normal is defined (interior points, box
    corners).  ``adjacent`` is ``(-1, -1)`` except on interface points, whose
    ``subdomain_id`` equals the first (matrix side) entry of the pair.
    """

    coords: np.ndarray
    subdomain_id: np.ndarray
    kind: np.ndarray
    interface_id: np.ndarray
    normal: np.ndarray
    adjacent: np.ndarray

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def subdomains(self) -> list[int]:
        ids = set(self.subdomain_id[self.kind != INTERFACE].tolist())
        ids.update(self.adjacent[self.kind == INTERFACE].ravel().tolist())
        return sorted(ids)

    def region_mask(self, subdomain: int, include_boundary: bool = True) -> np.ndarray:
        """Non-interface points belonging to ``subdomain``."""
        mask = (self.subdomain_id == subdomain) & (self.kind != INTERFACE)
        if not include_boundary:
            mask &= self.kind != BOUNDARY
        return mask

    def interface_mask(self, interface_id: int | None = None) -> np.ndarray:
        mask = self.kind == INTERFACE
        if interface_id is not None:
            mask &= self.interface_id == interface_id
        return mask

    def counts(self) -> dict[str, int]:
        """Point counts per category; the categories partition the set."""
        out = {"N": self.n, "boundary": int(np.sum(self.kind == BOUNDARY))}
        for s in sorted(set(self.subdomain_id[self.kind == INTERIOR].tolist())):
            out[f"interior_{s}"] = int(np.sum(self.region_mask(s, include_boundary=False)))
        for i in sorted(set(self.interface_id[self.kind == INTERFACE].tolist())):
            out[f"interface_{i}"] = int(np.sum(self.interface_mask(i)))
        return out

    def validate(self) -> None:
        n, d = self.coords.shape
        if d not in (2, 3):
            raise GeometryError(f"dimension must be 2 or 3, got {d}")
        for name in ("subdomain_id", "kind", "interface_id"):
            if getattr(self, name).shape != (n,):
                raise GeometryError(f"{name} has shape {getattr(self, name).shape}, expected ({n},)")
        if self.normal.shape != (n, d) or self.adjacent.shape != (n, 2):
            raise GeometryError("normal/adjacent arrays are misaligned with coords")
        if not np.all(np.isin(self.kind, list(KIND_LETTERS))):
            raise GeometryError("unknown point kind code")
        iface = np.flatnonzero(self.kind == INTERFACE)
        pair = self.adjacent[iface]
        bad = iface[(pair[:, 0] < 0) | (pair[:, 1] < 0) | (pair[:, 0] == pair[:, 1])]
        if bad.size:
            raise GeometryError(f"interface point {bad[0]} lacks two distinct adjacent subdomains")
        lengths = np.linalg.norm(self.normal, axis=1)
        defined = lengths > 0
        off = np.flatnonzero(defined & (np.abs(lengths - 1.0) > NORMAL_TOL))
        if off.size:
            raise GeometryError(f"normal of point {off[0]} is not unit length ({lengths[off[0]]!r})")
        missing = iface[~defined[iface]]
        if missing.size:
            raise GeometryError(f"interface point {missing[0]} has no normal")
        dup = find_duplicates(self.coords)
        if dup is not None:
            raise GeometryError(f"points {dup[0]} and {dup[1]} coincide")

    def replace(self, **changes) -> "PointSet":
        return dataclasses.replace(self, **changes)


def find_duplicates(coords: np.ndarray) -> tuple[int, int] | None:
    """Return the first pair of coincident point indices, if any."""
    tree = cKDTree(coords)
    pairs = tree.query_pairs(0.0)
    if not pairs:
        return None
    i, j = min(pairs)
    return int(i), int(j)


def average_spacing(ps: PointSet | np.ndarray) -> float:
    """Mean over all points of the distance to the nearest other point."""
    coords = ps.coords if isinstance(ps, PointSet) else np.asarray(ps, dtype=float)
    if coords.shape[0] < 2:
        raise GeometryError("average spacing needs at least 2 points")
    dist, _ = cKDTree(coords).query(coords, k=2)
    return float(np.mean(dist[:, 1]))


# ---------------------------------------------------------------------------
# shape primitives


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _ring(center2: np.ndarray, radius: float, spacing: float, phase: float = 0.0):
    n = max(int(round(2 * math.pi * radius / spacing)), 1)
    t = phase + 2 * math.pi * np.arange(n) / n
    return center2[0] + radius * np.cos(t), center2[1] + radius * np.sin(t), t


def _disk_points(radius: float, spacing: float) -> np.ndarray:
    """Concentric-ring layout of a closed disk in the plane (rim excluded)."""
    pts = [np.zeros((1, 2))]
    nr = int(round(radius / spacing))
    for j in range(1, nr):
        r = radius * j / nr
        x, y, _ = _ring(np.zeros(2), r, spacing, phase=0.5 * j)
        pts.append(np.column_stack([x, y]))
    return np.vstack(pts)


def _frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axis = _unit(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = _unit(np.cross(axis, helper))
    return e1, np.cross(axis, e1)


# fixed generic rotation applied to the Fibonacci sphere lattice
_SPHERE_TILT = Rotation.from_euler("xyz", [0.7, 0.4, 0.3]).as_matrix()


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    angle: float = 0.0

    dim = 2

    def _local(self, x):
        c, s = math.cos(self.angle), math.sin(self.angle)
        dx = x[:, 0] - self.center[0]
        dy = x[:, 1] - self.center[1]
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, x: np.ndarray) -> np.ndarray:
        u, v = self._local(x)
        a, b = self.semi_axes
        return (u / a) ** 2 + (v / b) ** 2 < 1.0

    def surface(self, spacing: float):
        a, b = self.semi_axes
        # arc-length resampling of a fine parametric polyline
        t = np.linspace(0.0, 2 * math.pi, 4001)
        speed = np.hypot(a * np.sin(t), b * np.cos(t))
        s = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t))])
        n = max(int(round(s[-1] / spacing)), 1)
        tt = np.interp(np.arange(n) * s[-1] / n, s, t)
        u, v = a * np.cos(tt), b * np.sin(tt)
        nu, nv = np.cos(tt) / a, np.sin(tt) / b
        c, sn = math.cos(self.angle), math.sin(self.angle)
        pts = np.column_stack([self.center[0] + c * u - sn * v, self.center[1] + sn * u + c * v])
        nrm = _unit(np.column_stack([c * nu - sn * nv, sn * nu + c * nv]))
        return pts, nrm

    def bounding_radius(self) -> float:
        return max(self.semi_axes)


def Circle(center, radius) -> Ellipse:
    return Ellipse(tuple(center), (radius, radius), 0.0)


@dataclass(frozen=True)
class Astroid:
    """Region |x/a|^(2/3) + |y/a|^(2/3) < 1."""

    center: tuple[float, float]
    a: float

    dim = 2

    def contains(self, x: np.ndarray) -> np.ndarray:
        u = np.abs(x[:, 0] - self.center[0]) / self.a
        v = np.abs(x[:, 1] - self.center[1]) / self.a
        return np.cbrt(u * u) + np.cbrt(v * v) < 1.0

    def surface(self, spacing: float):
        a = self.a
        quarter = 1.5 * a  # arc length of one quadrant
        n = max(int(round(quarter / spacing)), 1)
        s = np.arange(n) * quarter / n
        # s(theta) = 1.5 a sin^2(theta) on the first quadrant
        theta0 = np.arcsin(np.sqrt(s / quarter))
        pts, nrm = [], []
        for k in range(4):
            th = theta0 + k * math.pi / 2
            c, sn = np.cos(th), np.sin(th)
            pts.append(np.column_stack([a * c**3, a * sn**3]))
            nrm.append(np.column_stack([np.sign(c) * np.abs(sn), np.sign(sn) * np.abs(c)]))
        pts = np.vstack(pts)
        nrm = np.vstack(nrm)
        # the normal is undefined at the four cusps; they are returned with a
        # zero normal and left out of the interface set
        cusp = np.zeros(pts.shape[0], dtype=bool)
        cusp[::n] = True  # s = 0 starts each quadrant
        nrm[cusp] = 0.0
        pts = pts + np.asarray(self.center)
        nrm[~cusp] = _unit(nrm[~cusp])
        return pts, nrm

    def bounding_radius(self) -> float:
        return self.a


@dataclass(frozen=True)
class HalfPlane:
    """Left part x < position of a strip; used by the composite slab."""

    position: float
    y_range: tuple[float, float]

    dim = 2
    touches_boundary = True

    def contains(self, x: np.ndarray) -> np.ndarray:
        return x[:, 0] < self.position

    def surface(self, spacing: float):
        y0, y1 = self.y_range
        n = max(int(round((y1 - y0) / spacing)), 1)
        y = np.linspace(y0, y1, n + 1)
        pts = np.column_stack([np.full_like(y, self.position), y])
        nrm = np.tile([1.0, 0.0], (y.size, 1))
        return pts, nrm


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    dim = 3

    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.sum((x - np.asarray(self.center)) ** 2, axis=1) < self.radius**2

    def surface(self, spacing: float):
        # Fibonacci lattice; hexagonal-like density at the requested spacing
        area = 4 * math.pi * self.radius**2
        n = max(int(round(area / (0.5 * math.sqrt(3) * spacing**2))), 4)
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        phi = math.pi * (3.0 - math.sqrt(5.0)) * i
        rho = np.sqrt(1.0 - z * z)
        nrm = _unit(np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z]))
        # the spiral is irregular at its poles; tilt them off the lattice axes
        nrm = nrm @ _SPHERE_TILT.T
        return np.asarray(self.center) + self.radius * nrm, nrm

    def bounding_radius(self) -> float:
        return self.radius


@dataclass(frozen=True)
class CappedCylinder:
    center: tuple[float, float, float]
    axis: tuple[float, float, float]
    radius: float
    length: float

    dim = 3

    def contains(self, x: np.ndarray) -> np.ndarray:
        ax = _unit(np.asarray(self.axis))
        rel = x - np.asarray(self.center)
        t = rel @ ax
        radial = rel - np.outer(t, ax)
        return (np.abs(t) < 0.5 * self.length) & (np.sum(radial**2, axis=1) < self.radius**2)

    def surface(self, spacing: float):
        ax = _unit(np.asarray(self.axis))
        e1, e2 = _frame(ax)
        c = np.asarray(self.center)
        half = 0.5 * self.length
        nz = max(int(round(self.length / spacing)), 1)
        pts, nrm = [], []
        for j, t in enumerate(np.linspace(-half, half, nz + 1)):
            x, y, th = _ring(np.zeros(2), self.radius, spacing, phase=0.5 * j)
            radial = np.outer(np.cos(th), e1) + np.outer(np.sin(th), e2)
            pts.append(c + t * ax + self.radius * radial)
            if j in (0, nz):
                nrm.append(_unit(radial + math.copysign(1.0, t) * ax))
            else:
                nrm.append(radial)
        disk = _disk_points(self.radius, spacing)
        for sign in (-1.0, 1.0):
            pts.append(c + sign * half * ax + np.outer(disk[:, 0], e1) + np.outer(disk[:, 1], e2))
            nrm.append(np.tile(sign * ax, (disk.shape[0], 1)))
        return np.vstack(pts), _unit(np.vstack(nrm))

    def bounding_radius(self) -> float:
        return math.hypot(self.radius, 0.5 * self.length)


@dataclass(frozen=True)
class WavyTube:
    """Tube of constant radius around the centreline (A sin(2 pi z / L), 0, z)."""

    radius: float
    z_range: tuple[float, float]
    amplitude: float
    wavelength: float

    dim = 3

    def _offset(self, z):
        k = 2 * math.pi / self.wavelength
        return self.amplitude * np.sin(k * z), self.amplitude * k * np.cos(k * z)

    def contains(self, x: np.ndarray) -> np.ndarray:
        xc, _ = self._offset(x[:, 2])
        z0, z1 = self.z_range
        inside = (x[:, 0] - xc) ** 2 + x[:, 1] ** 2 < self.radius**2
        return inside & (x[:, 2] > z0) & (x[:, 2] < z1)

    def surface(self, spacing: float):
        z0, z1 = self.z_range
        nz = max(int(round((z1 - z0) / spacing)), 1)
        pts, nrm = [], []
        for j, z in enumerate(np.linspace(z0, z1, nz + 1)):
            x, y, _ = _ring(np.zeros(2), self.radius, spacing, phase=0.5 * j)
            xc, slope = self._offset(np.float64(z))
            p = np.column_stack([xc + x, y, np.full_like(x, z)])
            g = _unit(np.column_stack([x, y, -x * slope]))
            if j == 0:
                g = _unit(g + np.array([0.0, 0.0, -1.0]))
            elif j == nz:
                g = _unit(g + np.array([0.0, 0.0, 1.0]))
            pts.append(p)
            nrm.append(g)
        disk = _disk_points(self.radius, spacing)
        for z, sign in ((z0, -1.0), (z1, 1.0)):
            xc, _ = self._offset(np.float64(z))
            pts.append(np.column_stack([disk[:, 0] + xc, disk[:, 1], np.full(disk.shape[0], z)]))
            nrm.append(np.tile([0.0, 0.0, sign], (disk.shape[0], 1)))
        return np.vstack(pts), _unit(np.vstack(nrm))

    def bounding_radius(self) -> float:
        return math.inf


@dataclass(frozen=True)
class Box:
    """Axis-aligned outer box.

    Boundary regions: 2D edges are 1 bottom, 2 right, 3 top, 4 left; 3D faces
    are 1..6 for -x, +x, -y, +y, -z, +z.  Corner points (2D) and edge points
    (3D) carry no normal; 2D corners are assigned to the left/right regions.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.all((x > np.asarray(self.lo)) & (x < np.asarray(self.hi)), axis=1)

    def boundary(self, spacing: float):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        counts = np.maximum(np.round((hi - lo) / spacing).astype(int), 1)
        axes = [np.linspace(lo[k], hi[k], counts[k] + 1) for k in range(self.dim)]
        if self.dim == 2:
            return self._boundary_2d(axes)
        return self._boundary_3d(axes, lo, hi)

    def _boundary_2d(self, axes):
        xs, ys = axes
        pts, nrm, reg = [], [], []

        def add(p, n, r):
            pts.append(p)
            nrm.append(np.tile(n, (p.shape[0], 1)))
            reg.append(np.full(p.shape[0], r))

        add(np.column_stack([xs[1:-1], np.full(xs.size - 2, ys[0])]), [0.0, -1.0], 1)
        add(np.column_stack([np.full(ys.size - 2, xs[-1]), ys[1:-1]]), [1.0, 0.0], 2)
        add(np.column_stack([xs[1:-1], np.full(xs.size - 2, ys[-1])]), [0.0, 1.0], 3)
        add(np.column_stack([np.full(ys.size - 2, xs[0]), ys[1:-1]]), [-1.0, 0.0], 4)
        corners = np.array([[xs[0], ys[0]], [xs[-1], ys[0]], [xs[-1], ys[-1]], [xs[0], ys[-1]]])
        add(corners, [0.0, 0.0], 0)
        reg[-1] = np.array([4, 2, 2, 4])
        return np.vstack(pts), np.vstack(nrm), np.concatenate(reg)

    def _boundary_3d(self, axes, lo, hi):
        grids = np.meshgrid(*axes, indexing="ij")
        allpts = np.column_stack([g.ravel() for g in grids])
        on_lo = np.isclose(allpts, lo)
        on_hi = np.isclose(allpts, hi)
        hits = on_lo.sum(axis=1) + on_hi.sum(axis=1)
        keep = hits > 0
        pts = allpts[keep]
        on_lo, on_hi, hits = on_lo[keep], on_hi[keep], hits[keep]
        nrm = np.zeros_like(pts)
        reg = np.zeros(pts.shape[0], dtype=int)
        face = hits == 1
        for k in range(3):
            m = face & on_lo[:, k]
            nrm[m, k], reg[m] = -1.0, 2 * k + 1
            m = face & on_hi[:, k]
            nrm[m, k], reg[m] = 1.0, 2 * k + 2
        # edges and corners: Dirichlet-only points, region of first touched face
        for i in np.flatnonzero(~face):
            k = int(np.argmax(on_lo[i] | on_hi[i]))
            reg[i] = 2 * k + (1 if on_lo[i, k] else 2)
        return pts, nrm, reg

    def bbox(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)


@dataclass(frozen=True)
class ZCylinder:
    """Outer circular cylinder along z; regions 1 lateral, 2 bottom, 3 top."""

    radius: float
    z_range: tuple[float, float]

    dim = 3

    def contains(self, x: np.ndarray) -> np.ndarray:
        z0, z1 = self.z_range
        return (x[:, 0] ** 2 + x[:, 1] ** 2 < self.radius**2) & (x[:, 2] > z0) & (x[:, 2] < z1)

    def boundary(self, spacing: float):
        z0, z1 = self.z_range
        nz = max(int(round((z1 - z0) / spacing)), 1)
        pts, nrm, reg = [], [], []
        for j, z in enumerate(np.linspace(z0, z1, nz + 1)):
            x, y, th = _ring(np.zeros(2), self.radius, spacing, phase=0.5 * j)
            pts.append(np.column_stack([x, y, np.full_like(x, z)]))
            if j in (0, nz):
                nrm.append(np.zeros((x.size, 3)))
                reg.append(np.full(x.size, 2 if j == 0 else 3))
            else:
                nrm.append(np.column_stack([np.cos(th), np.sin(th), np.zeros_like(th)]))
                reg.append(np.full(x.size, 1))
        disk = _disk_points(self.radius, spacing)
        for z, sign, r in ((z0, -1.0, 2), (z1, 1.0, 3)):
            pts.append(np.column_stack([disk, np.full(disk.shape[0], z)]))
            nrm.append(np.tile([0.0, 0.0, sign], (disk.shape[0], 1)))
            reg.append(np.full(disk.shape[0], r))
        return np.vstack(pts), np.vstack(nrm), np.concatenate(reg)

    def bbox(self):
        z0, z1 = self.z_range
        r = self.radius
        return np.array([-r, -r, z0]), np.array([r, r, z1])


# ---------------------------------------------------------------------------
# specs and layouts


@dataclass(frozen=True)
class InclusionSpec:
    """One inclusion of a ``multi_inclusion_square`` or fillet layout."""

    center: tuple[float, ...]
    semi_axes: tuple[float, ...] = ()
    angle: float = 0.0
    axis: tuple[float, ...] = ()
    radius: float = 0.0
    length: float = 0.0


@dataclass(frozen=True)
class GeometrySpec:
    """Declarative geometry description.

    ``spacing`` is the target average nearest-neighbour distance.  Unused
    parameters are ignored by shapes that do not need them.
    """

    shape: str
    spacing: float
    half_width: float = 1.0
    radius: float = 0.5
    astroid_a: float = 0.5
    slab_length: float = 2.0
    slab_width: float = 0.5
    inclusions: tuple[InclusionSpec, ...] = ()
    tube_radius: float = 0.4
    tube_z: tuple[float, float] = (0.5, 5.5)
    tube_amplitude: float = 0.25
    tube_wavelength: float = 2.5
    outer_radius: float = 1.0
    outer_z: tuple[float, float] = (0.0, 6.0)
    path: str | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise GeometryError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if self.shape != "imported" and not self.spacing > 0:
            raise GeometryError(f"spacing must be positive, got {self.spacing}")

    @property
    def dim(self) -> int:
        return 3 if self.shape in ("sphere_in_cube", "wavy_tube", "cylindrical_fillets") else 2


def layout(spec: GeometrySpec):
    """Return the outer domain and the ordered inclusion list for a spec."""
    w = spec.half_width
    if spec.shape == "composite_slab":
        half = 0.5 * spec.slab_length
        outer = Box((-half, 0.0), (half, spec.slab_width))
        return outer, [HalfPlane(0.0, (0.0, spec.slab_width))]
    if spec.shape == "circle_in_square":
        return Box((-w, -w), (w, w)), [Circle((0.0, 0.0), spec.radius)]
    if spec.shape == "astroid_in_square":
        return Box((-w, -w), (w, w)), [Astroid((0.0, 0.0), spec.astroid_a)]
    if spec.shape == "sphere_in_cube":
        return Box((-w, -w, -w), (w, w, w)), [Sphere((0.0, 0.0, 0.0), spec.radius)]
    if spec.shape == "multi_inclusion_square":
        incl = []
        for inc in spec.inclusions:
            a, b = inc.semi_axes
            incl.append(Ellipse(tuple(inc.center), (a, b), inc.angle))
        return Box((-w, -w), (w, w)), incl
    if spec.shape == "wavy_tube":
        outer = ZCylinder(spec.outer_radius, spec.outer_z)
        return outer, [WavyTube(spec.tube_radius, spec.tube_z, spec.tube_amplitude, spec.tube_wavelength)]
    if spec.shape == "cylindrical_fillets":
        incl = [
            CappedCylinder(tuple(i.center), tuple(i.axis), i.radius, i.length) for i in spec.inclusions
        ]
        return Box((-w, -w, -w), (w, w, w)), incl
    raise GeometryError(f"shape {spec.shape!r} has no generator; use import_points")


def _lattice(lo: np.ndarray, hi: np.ndarray, h: float, rng: np.random.Generator) -> np.ndarray:
    d = lo.size
    if d == 2:
        dy = h * math.sqrt(3) / 2
        ys = np.arange(lo[1], hi[1] + dy, dy)
        xs = np.arange(lo[0], hi[0] + h, h)
        gx, gy = np.meshgrid(xs, ys)
        gx = gx + 0.5 * h * (np.arange(ys.size) % 2)[:, None]
        pts = np.column_stack([gx.ravel(), gy.ravel()])
    else:
        axes = [np.arange(lo[k], hi[k] + h, h) for k in range(3)]
        pts = np.column_stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")])
    # keep the worst-case pair distance above the separation threshold
    amp = min(0.1, (1.0 - MIN_SEPARATION / LATTICE_FACTOR[d]) / (2 * math.sqrt(d)) - 1e-3)
    return pts + rng.uniform(-amp * h, amp * h, size=pts.shape)


def _offset_layer(inc, pts: np.ndarray, nrm: np.ndarray, h: float) -> np.ndarray:
    """Candidate points one row off an interface on both sides.

    In 2D the row is staggered half a spacing along the curve so that each
    layer point forms near-equilateral triangles with the interface points.
    """
    if pts.shape[0] == 0 or LAYERS == 0:
        return pts[:0]
    delta = 0.5 * math.sqrt(3) * h
    rows = [pts + 2 * delta * nrm, pts - 2 * delta * nrm] if LAYERS > 1 else []
    if pts.shape[1] == 2:
        closed = not getattr(inc, "touches_boundary", False)
        nxt = np.roll(pts, -1, axis=0) if closed else pts[1:]
        nxt_n = np.roll(nrm, -1, axis=0) if closed else nrm[1:]
        base = pts if closed else pts[:-1]
        base_n = nrm if closed else nrm[:-1]
        mid = 0.5 * (base + nxt)
        mid_n = base_n + nxt_n
        ok = np.linalg.norm(mid_n, axis=1) > 1e-9
        pts, nrm = mid[ok], _unit(mid_n[ok])
    return np.vstack([pts + delta * nrm, pts - delta * nrm] + rows)


def _unpinched(pts: np.ndarray, radius: float) -> np.ndarray:
    """Mask dropping both points of every pair closer than ``radius``.

    Consecutive samples along a surface are a full spacing apart, so close
    pairs only occur where two parts of the surface pinch together, such
    as the flanks of a cusp.  Cusp tips have no close partner and survive.
    """
    keep = np.ones(pts.shape[0], dtype=bool)
    for i, j in cKDTree(pts).query_pairs(radius):
        keep[i] = keep[j] = False
    return keep


def _thin(cand: np.ndarray, fixed: np.ndarray, radius: float) -> np.ndarray:
    """Greedy in-order thinning: drop candidates closer than ``radius`` to
    fixed points or to previously kept candidates."""
    if cand.shape[0] == 0:
        return cand
    far = np.isinf(cKDTree(fixed).query(cand, distance_upper_bound=radius)[0])
    cand = cand[far]
    tree = cKDTree(cand)
    keep = np.ones(cand.shape[0], dtype=bool)
    for i, j in sorted(tree.query_pairs(radius)):
        if keep[i] and keep[j]:
            keep[j] = False
    return cand[keep]


def generate(spec: GeometrySpec, seed: int = 0) -> PointSet:
    """Build a quasi-uniform tagged point set for ``spec``.

    Boundary and interface points are placed first at the target spacing.
    Interior points come from a jittered lattice, rejected outside the domain
    and within ``0.7 * spacing`` of any boundary or interface point.
    """
    if spec.shape == "imported":
        if spec.path is None:
            raise GeometryError("imported geometry needs a path")
        return import_points(spec.path)
    outer, inclusions = layout(spec)
    d = spec.dim
    h = spec.spacing
    rng = np.random.default_rng(seed)

    bpts, bnrm, breg = outer.boundary(h)

    ipts, inrm, iid, isub, ghosts = [], [], [], [], []
    for k, inc in enumerate(inclusions):
        p, nrm = inc.surface(h)
        need = 2 if getattr(inc, "touches_boundary", False) else 3
        if p.shape[0] < need:
            raise GeometryError(
                f"spacing {h} too coarse: inclusion {k + 1} gets {p.shape[0]} interface points (need >= {need})"
            )
        if not getattr(inc, "touches_boundary", False):
            inside = outer.contains(p)
            if not np.all(inside):
                raise GeometryError(f"inclusion {k + 1} touches or crosses the outer boundary")
            gap = cKDTree(bpts).query(p)[0].min()
            if gap < 0.5 * h:
                raise GeometryError(f"inclusion {k + 1} is within {gap:.3g} of the outer boundary")
        for j, other in enumerate(inclusions):
            if j != k and np.any(other.contains(p)):
                raise GeometryError(f"inclusions {k + 1} and {j + 1} overlap")
        ghosts.append(p)
        keep = _unpinched(p, MIN_SEPARATION * h) & (np.linalg.norm(nrm, axis=1) > 0)
        p, nrm = p[keep], nrm[keep]
        ipts.append(p)
        inrm.append(nrm)
        iid.append(np.full(p.shape[0], k + 1))
        isub.append(np.full(p.shape[0], k + 2))
    ipts = np.vstack(ipts) if ipts else np.zeros((0, d))
    inrm = np.vstack(inrm) if inrm else np.zeros((0, d))
    iid = np.concatenate(iid) if iid else np.zeros(0, int)
    isub = np.concatenate(isub) if isub else np.zeros(0, int)

    if ipts.shape[0]:
        # boundary points coinciding with interface endpoints belong to the interface
        near = cKDTree(ipts).query(bpts)[0] < 0.5 * h
        bpts, bnrm, breg = bpts[~near], bnrm[~near], breg[~near]
        for k in range(len(inclusions)):
            m = iid == k + 1
            gap = cKDTree(ipts[~m]).query(ipts[m])[0].min() if np.any(~m) else np.inf
            if gap < 0.5 * h:
                raise GeometryError(f"inclusion {k + 1} is within {gap:.3g} of another interface")

    # the full surface samples, including pinched ones, keep interior
    # points out of slivers narrower than the clearance
    fixed = np.vstack([bpts, ipts] + ghosts)
    layer = [_offset_layer(inc, ipts[iid == k + 1], inrm[iid == k + 1], h) for k, inc in enumerate(inclusions)]
    layer = np.vstack(layer) if layer else np.zeros((0, d))
    layer = _thin(layer[outer.contains(layer)], fixed, MIN_SEPARATION * h)

    lo, hi = outer.bbox()
    cand = _lattice(lo, hi, LATTICE_FACTOR[d] * h, rng)
    cand = cand[outer.contains(cand)]
    fixed = np.vstack([fixed, layer])
    clear = cKDTree(fixed).query(cand, distance_upper_bound=MIN_SEPARATION * h)[0]
    cand = np.vstack([layer, cand[np.isinf(clear)]])

    def label(x):
        sub = np.ones(x.shape[0], dtype=int)
        for k, inc in enumerate(inclusions):
            sub[inc.contains(x)] = k + 2
        return sub

    n_b, n_f, n_i = bpts.shape[0], ipts.shape[0], cand.shape[0]
    coords = np.vstack([cand, bpts, ipts])
    kind = np.concatenate(
        [np.full(n_i, INTERIOR), np.full(n_b, BOUNDARY), np.full(n_f, INTERFACE)]
    ).astype(np.int8)
    sub = np.concatenate([label(cand), label(bpts), np.ones(n_f, dtype=int)])
    tag = np.concatenate([np.full(n_i, -1), breg, iid]).astype(int)
    normal = np.vstack([np.zeros((n_i, d)), bnrm, inrm])
    adjacent = np.full((coords.shape[0], 2), -1, dtype=int)
    adjacent[n_i + n_b :, 0] = 1
    adjacent[n_i + n_b :, 1] = isub
    ps = PointSet(coords, sub, kind, tag, normal, adjacent)
    ps.validate()
    return ps


# ---------------------------------------------------------------------------
# text point files


def export_points(ps: PointSet, path: str | os.PathLike) -> None:
    """Write ``ps`` in the plain-text point format read by :func:`import_points`.

    Header lines start with ``#``: ``# dim=<d> n=<count>`` followed by one
    ``# interface <id> <subdomain_1> <subdomain_2>`` line per interface.
    """
    d = ps.dim
    lines = [f"# dim={d} n={ps.n}"]
    pairs = {}
    for i in np.flatnonzero(ps.kind == INTERFACE):
        pairs.setdefault(int(ps.interface_id[i]), tuple(int(v) for v in ps.adjacent[i]))
    for iid, (s1, s2) in sorted(pairs.items()):
        lines.append(f"# interface {iid} {s1} {s2}")
    has_normal = np.linalg.norm(ps.normal, axis=1) > 0
    for i in range(ps.n):
        xyz = " ".join(repr(float(v)) for v in ps.coords[i])
        k = int(ps.kind[i])
        rec = f"{xyz} {int(ps.subdomain_id[i])} {KIND_LETTERS[k]}"
        if k != INTERIOR:
            rec += f" {int(ps.interface_id[i])}"
            if has_normal[i]:
                rec += " " + " ".join(repr(float(v)) for v in ps.normal[i])
        lines.append(rec)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def import_points(path: str | os.PathLike) -> PointSet:
    """Read a point file; normals are re-normalised on input."""
    dim = None
    pairs: dict[int, tuple[int, int]] = {}
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                tokens = line[1:].split()
                try:
                    if tokens and tokens[0] == "interface":
                        pairs[int(tokens[1])] = (int(tokens[2]), int(tokens[3]))
                    for tok in tokens:
                        if tok.startswith("dim="):
                            dim = int(tok[4:])
                except (IndexError, ValueError) as exc:
                    raise GeometryError(f"{path}:{lineno}: bad header line: {exc}") from None
                continue
            if dim not in (2, 3):
                raise GeometryError(f"{path}:{lineno}: missing or invalid '# dim=' header")
            rows.append((lineno, line.split()))
    n = len(rows)
    if dim is None:
        raise GeometryError(f"{path}: empty point file")
    coords = np.zeros((n, dim))
    sub = np.zeros(n, dtype=int)
    kind = np.zeros(n, dtype=np.int8)
    tag = np.full(n, -1, dtype=int)
    normal = np.zeros((n, dim))
    adjacent = np.full((n, 2), -1, dtype=int)
    for i, (lineno, tok) in enumerate(rows):
        try:
            coords[i] = [float(t) for t in tok[:dim]]
            sub[i] = int(tok[dim])
            letter = tok[dim + 1]
            if letter not in LETTER_KINDS:
                raise ValueError(f"unknown kind {letter!r}")
            kind[i] = LETTER_KINDS[letter]
            rest = tok[dim + 2 :]
            if kind[i] == INTERIOR and rest:
                raise ValueError("interior records take no extra fields")
            if rest:
                tag[i] = int(rest[0])
                if len(rest) == 1 + dim:
                    normal[i] = [float(t) for t in rest[1:]]
                elif len(rest) != 1:
                    raise ValueError(f"expected 1 or {1 + dim} trailing fields, got {len(rest)}")
            if kind[i] == INTERFACE:
                if tag[i] < 0:
                    raise ValueError("interface record needs an interface id")
                adjacent[i] = pairs.get(int(tag[i]), (sub[i], -1))
        except (IndexError, ValueError) as exc:
            raise GeometryError(f"{path}:{lineno}: {exc}") from None
    lengths = np.linalg.norm(normal, axis=1)
    defined = lengths > 0
    bad = np.flatnonzero(defined & (np.abs(lengths - 1.0) > 1e-6))
    if bad.size:
        raise GeometryError(f"point {bad[0]} has non-unit normal (length {lengths[bad[0]]:.6g})")
    normal[defined] /= lengths[defined, None]
    ps = PointSet(coords, sub, kind, tag, normal, adjacent)
    ps.validate()
    return ps
