"""Heat-generating inclusions with prescribed exterior temperatures.

Cases are declared in INI files: a ``[case]`` section, an optional
``[geometry]`` section with :class:`~phscond.geometry.GeometrySpec` fields,
one ``[subdomain N]`` section per subdomain with ``k`` and ``qdot`` (plus the
shape of inclusion N >= 2 where the geometry needs one), and a
``[boundary]`` section mapping region numbers or ``default`` to
``dirichlet <value>`` / ``neumann <value>``.  Built-in cases ship with the
package and are addressed by name.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.spatial import cKDTree

from phscond import assembly, rbf, solver, stencil
from phscond.geometry import (
    INTERFACE,
    Ellipse,
    GeometrySpec,
    InclusionSpec,
    PointSet,
    generate,
    layout,
)

PROBE_SAMPLES = 512
_FLOAT_FIELDS = (
    "spacing", "half_width", "radius", "astroid_a", "slab_length", "slab_width",
    "tube_radius", "tube_amplitude", "tube_wavelength", "outer_radius",
)
_PAIR_FIELDS = ("tube_z", "outer_z")


class CaseError(ValueError):
    """Malformed case file or unknown case name."""


@dataclass(frozen=True)
class Probe:
    name: str
    start: tuple[float, ...]
    end: tuple[float, ...]

    def points(self, samples: int = PROBE_SAMPLES) -> tuple[np.ndarray, np.ndarray]:
        """Parameter values in [0, 1] and the matching coordinates."""
        t = np.linspace(0.0, 1.0, samples)
        a, b = np.asarray(self.start, float), np.asarray(self.end, float)
        return t, a + t[:, None] * (b - a)


@dataclass(frozen=True)
class ApplicationCase:
    name: str
    geometry: GeometrySpec
    conductivity: dict[int, float]
    generation: dict[int, float]
    boundary: dict[int | None, assembly.BoundaryCondition]
    p: int = 6
    ladder: tuple[float, ...] = ()
    probes: tuple[Probe, ...] = ()
    labels: dict[int, str] = field(default_factory=dict)

    def problem(self) -> assembly.ProblemSpec:
        return assembly.ProblemSpec(self.conductivity, dict(self.boundary), dict(self.generation))

    def with_spacing(self, spacing: float) -> "ApplicationCase":
        from dataclasses import replace

        return replace(self, geometry=replace(self.geometry, spacing=spacing))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bc(text: str) -> assembly.BoundaryCondition:
    parts = text.split()
    if len(parts) != 2 or parts[0] not in ("dirichlet", "neumann"):
        raise CaseError(f"boundary condition must read 'dirichlet <value>' or 'neumann <value>', got {text!r}")
    return assembly.BoundaryCondition(parts[0], float(parts[1]))


def parse_case(text: str, source: str = "<string>") -> ApplicationCase:
    """Build an :class:`ApplicationCase` from INI text."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise CaseError(f"{source}: {exc}") from None
    try:
        return _from_config(cp)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, CaseError):
            raise CaseError(f"{source}: {exc}") from None
        raise CaseError(f"{source}: {type(exc).__name__}: {exc}") from None


def _from_config(cp: configparser.ConfigParser) -> ApplicationCase:
    if not cp.has_section("case"):
        raise CaseError("missing [case] section")
    case = cp["case"]
    geo = dict(cp["geometry"]) if cp.has_section("geometry") else {}
    kw: dict = {"shape": case["geometry"], "spacing": float(case["spacing"])}
    for key, val in geo.items():
        if key in _FLOAT_FIELDS:
            kw[key] = float(val)
        elif key in _PAIR_FIELDS:
            kw[key] = _floats(val)
        elif key == "path":
            kw[key] = val
        else:
            raise CaseError(f"unknown geometry key {key!r}")

    subs = []
    for sec in cp.sections():
        if sec.startswith("subdomain"):
            try:
                sid = int(sec.split()[1])
            except (IndexError, ValueError):
                raise CaseError(f"section [{sec}] needs a numeric id") from None
            subs.append((sid, cp[sec]))
    if not subs:
        raise CaseError("no [subdomain N] sections")
    subs.sort(key=lambda s: s[0])
    conductivity, generation, labels, inclusions = {}, {}, {}, []
    for sid, sec in subs:
        conductivity[sid] = float(sec["k"])
        generation[sid] = float(sec.get("qdot", "0"))
        labels[sid] = sec.get("label", str(sid))
        if "center" in sec:
            inclusions.append(
                InclusionSpec(
                    center=_floats(sec["center"]),
                    semi_axes=_floats(sec.get("semi_axes", "")),
                    angle=math.radians(float(sec.get("angle", "0"))),
                    axis=_floats(sec.get("axis", "")),
                    radius=float(sec.get("radius", "0")),
                    length=float(sec.get("length", "0")),
                )
            )
    if inclusions:
        kw["inclusions"] = tuple(inclusions)
    geometry = GeometrySpec(**kw)

    boundary: dict[int | None, assembly.BoundaryCondition] = {}
    if cp.has_section("boundary"):
        for key, val in cp["boundary"].items():
            boundary[None if key == "default" else int(key)] = _bc(val)
    else:
        boundary[None] = assembly.dirichlet(0.0)

    probes = []
    for i, spec in enumerate(s for s in case.get("probes", "").split(";") if s.strip()):
        vals = _floats(spec)
        d = geometry.dim
        if len(vals) != 2 * d:
            raise CaseError(f"probe {i + 1} needs {2 * d} coordinates, got {len(vals)}")
        probes.append(Probe(f"probe{i + 1}", vals[:d], vals[d:]))
    return ApplicationCase(
        name=case.get("name", "case"),
        geometry=geometry,
        conductivity=conductivity,
        generation=generation,
        boundary=boundary,
        p=int(case.get("p", "6")),
        ladder=_floats(case.get("ladder", "")),
        probes=tuple(probes),
        labels=labels,
    )


def builtin_cases() -> list[str]:
    files = resources.files("phscond").joinpath("cases")
    return sorted(f.name[:-4] for f in files.iterdir() if f.name.endswith(".ini"))


def load_case(name_or_path: str | os.PathLike) -> ApplicationCase:
    """Load a case by built-in name or from an INI file path."""
    path = os.fspath(name_or_path)
    if os.path.exists(path):
        with open(path) as fh:
            return parse_case(fh.read(), path)
    res = resources.files("phscond").joinpath("cases", f"{path}.ini")
    if not res.is_file():
        raise CaseError(f"unknown case {path!r}; built-in cases: {', '.join(builtin_cases())}")
    return parse_case(res.read_text(), f"{path}.ini")


def average_temperature(T, ps: PointSet | None = None) -> float:
    """Unweighted mean over all points."""
    T = np.asarray(T, dtype=float)
    if T.size == 0:
        raise CaseError("cannot average an empty field")
    if ps is not None and ps.n != T.size:
        raise CaseError(f"field has {T.size} values for {ps.n} points")
    return float(np.mean(T))


@dataclass
class ApplicationResult:
    case: ApplicationCase
    points: PointSet
    temperature: np.ndarray
    report: solver.SolveReport
    average: float
    profiles: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]
    plan: stencil.CloudPlan
    kernel: rbf.KernelConfig

    def summary(self) -> dict:
        return {
            "case": self.case.name,
            "n_points": self.points.n,
            "p": self.kernel.p,
            "average_temperature": self.average,
            "average_kind": "point average",
            "min_temperature": float(self.temperature.min()),
            "max_temperature": float(self.temperature.max()),
            "solver": self.report.as_dict(),
        }


def locate(ps: PointSet, query: np.ndarray, geometry: GeometrySpec | None = None) -> np.ndarray:
    """Subdomain of each query point.

    Uses the geometry's inclusion shapes when available (later inclusions
    win, as in point generation); imported point sets fall back to the
    subdomain of the nearest non-interface point.
    """
    query = np.atleast_2d(query)
    if geometry is not None and geometry.shape != "imported":
        _, inclusions = layout(geometry)
        sub = np.ones(query.shape[0], dtype=int)
        for k, inc in enumerate(inclusions):
            sub[inc.contains(query)] = k + 2
        return sub
    solid = np.flatnonzero(ps.kind != INTERFACE)
    _, j = cKDTree(ps.coords[solid]).query(query)
    return ps.subdomain_id[solid[j]]


def sample_field(ps, plan, cfg, T, query, subdomains) -> np.ndarray:
    """Interpolate ``T`` at ``query`` with the cloud of the nearest eligible point.

    The cloud is the one restricted to the query's subdomain, so values
    never mix across an interface.  At a point location the nodal value is
    returned exactly, since every cloud contains its base point.
    """
    query = np.atleast_2d(query)
    out = np.empty(query.shape[0])
    for s in np.unique(subdomains):
        sel = np.flatnonzero(subdomains == s)
        cand = np.flatnonzero(stencil.eligible_mask(ps, int(s)))
        _, j = cKDTree(ps.coords[cand]).query(query[sel])
        base = cand[j]
        rows = np.where(plan.subdomain[plan.primary[base]] == s, plan.primary[base], plan.secondary[base])
        for r in np.unique(rows):
            hit = sel[rows == r]
            mem = plan.members[r]
            val = rbf.interpolate(ps.coords[mem], cfg, T[mem], query[hit])
            out[hit] = val
    return out


def run_application(
    case: ApplicationCase,
    p: int | None = None,
    solver_cfg: solver.SolverConfig | None = None,
    seed: int = 0,
    alpha: int = 1,
    points: PointSet | None = None,
) -> ApplicationResult:
    """Solve ``case`` with the multidomain method and sample its probes."""
    p = case.p if p is None else p
    ps = generate(case.geometry, seed) if points is None else points
    missing = sorted(set(ps.subdomains) - set(case.conductivity))
    if missing:
        raise CaseError(f"case {case.name!r} gives no conductivity for subdomains {missing}")
    cfg = rbf.KernelConfig(alpha, p, ps.dim)
    plan = stencil.build_clouds(ps, p)
    weights = rbf.plan_weights(ps, plan, cfg)
    system = assembly.assemble_multidomain(ps, plan, weights, case.problem())
    T, report = solver.bicgstab(system, solver_cfg)
    profiles = {}
    geo = case.geometry if points is None else None
    for probe in case.probes:
        t, xq = probe.points()
        subs = locate(ps, xq, geo)
        profiles[probe.name] = (t, xq, sample_field(ps, plan, cfg, T, xq, subs))
    return ApplicationResult(case, ps, T, report, average_temperature(T, ps), profiles, plan, cfg)


@dataclass
class GridStudy:
    levels: list[ApplicationResult]

    @property
    def averages(self) -> list[float]:
        return [lvl.average for lvl in self.levels]

    def deviation(self) -> float:
        """Largest probe-profile difference between the two finest levels."""
        if len(self.levels) < 2:
            raise CaseError("grid independence needs at least two levels")
        a, b = self.levels[-2].profiles, self.levels[-1].profiles
        if not a:
            return 0.0
        return float(max(np.max(np.abs(a[k][2] - b[k][2])) for k in a))

    def average_change(self) -> float:
        """Relative change of the average temperature between the two finest levels."""
        x, y = self.averages[-2:]
        return abs(y - x) / abs(y) if y != 0 else abs(y - x)


def grid_independence(case: ApplicationCase, ladder=None, p: int | None = None, **kw) -> GridStudy:
    """Solve ``case`` on every ladder spacing, coarse to fine."""
    ladder = tuple(case.ladder if ladder is None else ladder)
    if len(ladder) < 2:
        raise CaseError("grid independence needs at least two ladder levels")
    return GridStudy([run_application(case.with_spacing(h), p, **kw) for h in ladder])


def pack_ellipses(semi_axes, half_width: float, gap: float, seed: int = 0, tries: int = 20000):
    """Place ellipses in a square without overlap, largest first.

    Each ellipse gets a uniform random center and angle; a candidate is
    kept when its sampled outline stays ``gap`` away from the walls and
    from every ellipse already placed.  Returns ``(centers, angles)`` in
    the input order; raises :class:`CaseError` when an ellipse cannot be
    placed within ``tries`` attempts.
    """
    rng = np.random.default_rng(seed)
    order = np.argsort([-a * b for a, b in semi_axes], kind="stable")
    placed: list[tuple[Ellipse, np.ndarray]] = []
    centers = np.zeros((len(semi_axes), 2))
    angles = np.zeros(len(semi_axes))
    for i in order:
        a, b = semi_axes[i]
        for _ in range(tries):
            ang = 0.0 if a == b else float(rng.uniform(0.0, math.pi))
            c = rng.uniform(-half_width, half_width, 2)
            e = Ellipse(tuple(c), (a, b), ang)
            outline = e.surface(0.02)[0]
            if np.any(np.abs(outline) > half_width - gap):
                continue
            ok = True
            for other, other_outline in placed:
                grow = Ellipse(other.center, (other.semi_axes[0] + gap, other.semi_axes[1] + gap), other.angle)
                if np.any(grow.contains(outline)) or np.any(e.contains(other_outline)):
                    ok = False
                    break
                if cKDTree(other_outline).query(outline)[0].min() < gap:
                    ok = False
                    break
            if ok:
                placed.append((e, outline))
                centers[i] = c
                angles[i] = ang
                break
        else:
            raise CaseError(f"could not place ellipse {i} ({a}, {b}) after {tries} tries")
    return centers, angles
