import json
from dataclasses import replace

import numpy as np
import pytest

from phscond import applications
from phscond.applications import (
    CaseError,
    average_temperature,
    builtin_cases,
    grid_independence,
    load_case,
    locate,
    pack_ellipses,
    parse_case,
    run_application,
    sample_field,
)
from phscond.geometry import INTERFACE, Ellipse

SLAB = """
[case]
name = slab
geometry = composite_slab
spacing = {dr}
p = 3
probes = -1 0.25 1 0.25

[geometry]
slab_length = 2.0
slab_width = 0.5

[subdomain 1]
k = {k1}
qdot = 0

[subdomain 2]
k = {k2}
qdot = 0

[boundary]
1 = neumann 0
3 = neumann 0
4 = dirichlet 1
2 = dirichlet 0
"""


def slab(dr=0.1, k1=10.0, k2=1.0):
    return parse_case(SLAB.format(dr=dr, k1=k1, k2=k2))


def slab_exact(x, k1, k2):
    # piecewise linear: left layer (k2) on [-1, 0], right layer (k1) on [0, 1]
    tm = k2 / (k1 + k2)
    return np.where(x < 0, tm - (1 - tm) * x, tm * (1 - x))


@pytest.fixture(scope="module")
def astroid_coarse():
    case = load_case("astroid_a").with_spacing(0.053)
    return run_application(case, p=4)


def test_builtin_cases_listed():
    assert set(builtin_cases()) >= {"astroid_a", "astroid_b", "composite_slab", "multi_inclusion", "wavy_tube", "cylindrical_fillets"}
    for name in builtin_cases():
        case = load_case(name)
        assert case.conductivity and case.boundary


@pytest.mark.parametrize("k1,k2", [(10.0, 1.0), (1.0, 1.0), (100.0, 1.0)])
def test_composite_slab_piecewise_linear(k1, k2):
    res = run_application(slab(0.1, k1, k2))
    x = res.points.coords[:, 0]
    np.testing.assert_allclose(res.temperature, slab_exact(x, k1, k2), atol=1e-8)
    t, xq, Tq = res.profiles["probe1"]
    np.testing.assert_allclose(Tq, slab_exact(xq[:, 0], k1, k2), atol=1e-8)


def test_zero_source_zero_field():
    case = load_case("astroid_a").with_spacing(0.08)
    case = replace(case, generation={1: 0.0, 2: 0.0})
    res = run_application(case, p=3)
    assert np.max(np.abs(res.temperature)) <= 1e-12
    assert res.average == pytest.approx(0.0, abs=1e-12)


def test_average_examples():
    assert average_temperature(np.full(7, 2.5)) == 2.5
    assert average_temperature([0.0, 2.0]) == 1.0
    with pytest.raises(CaseError):
        average_temperature([])


def test_astroid_positive_and_summary(astroid_coarse):
    res = astroid_coarse
    inner = res.points.subdomain_id == 2
    assert res.temperature.min() > -1e-3 * res.temperature.max()
    assert res.temperature[inner].mean() > res.temperature[~inner].mean()
    s = res.summary()
    json.dumps(s)
    assert s["n_points"] == res.points.n and s["average_kind"] == "point average"
    assert s["solver"]["residual"] <= 1e-12


def test_probe_exact_at_nodes(astroid_coarse):
    res = astroid_coarse
    ps = res.points
    idx = np.flatnonzero(ps.kind != INTERFACE)[::37]
    subs = ps.subdomain_id[idx]
    got = sample_field(ps, res.plan, res.kernel, res.temperature, ps.coords[idx], subs)
    np.testing.assert_allclose(got, res.temperature[idx], atol=1e-10 * np.abs(res.temperature).max())


def test_locate_matches_labels(astroid_coarse):
    ps = astroid_coarse.points
    solid = np.flatnonzero(ps.kind != INTERFACE)
    geo = astroid_coarse.case.geometry
    np.testing.assert_array_equal(locate(ps, ps.coords[solid], geo), ps.subdomain_id[solid])
    # nearest-point fallback agrees away from the interface
    far = solid[np.abs(np.linalg.norm(ps.coords[solid], axis=1) - 0.3) > 0.2]
    np.testing.assert_array_equal(locate(ps, ps.coords[far]), ps.subdomain_id[far])


def test_identical_levels_zero_deviation(astroid_coarse):
    study = applications.GridStudy([astroid_coarse, astroid_coarse])
    assert study.deviation() == 0.0 and study.average_change() == 0.0


def test_average_decreases_with_matrix_conductivity():
    base = load_case("astroid_a").with_spacing(0.08)
    avgs = [run_application(replace(base, conductivity={1: k, 2: 1.0}), p=3).average for k in (1.0, 2.0, 10.0, 100.0)]
    assert all(a > b for a, b in zip(avgs, avgs[1:]))


def test_average_grows_with_source():
    base = load_case("astroid_a").with_spacing(0.08)
    a = run_application(base, p=3).average
    b = run_application(replace(base, generation={1: 0.0, 2: 200.0}), p=3).average
    assert b == pytest.approx(2 * a, rel=1e-9)


def test_grid_independence_ladder():
    study = grid_independence(slab(), ladder=(0.1, 0.07))
    assert len(study.levels) == 2 and study.deviation() < 1e-8
    with pytest.raises(CaseError):
        grid_independence(slab(), ladder=(0.1,))


def test_parse_errors():
    good = SLAB.format(dr=0.1, k1=1, k2=1)
    with pytest.raises(CaseError, match="\\[case\\]"):
        parse_case("[geometry]\nslab_length = 1\n")
    with pytest.raises(CaseError, match="subdomain"):
        parse_case(good.split("[subdomain 1]")[0])
    with pytest.raises(CaseError, match="dirichlet"):
        parse_case(good.replace("dirichlet 0", "fixed 0"))
    with pytest.raises(CaseError, match="geometry key"):
        parse_case(good.replace("slab_width", "slab_height"))
    with pytest.raises(CaseError, match="probe 1"):
        parse_case(good.replace("-1 0.25 1 0.25", "-1 0.25 1"))
    with pytest.raises(CaseError):
        parse_case("not an ini")
    with pytest.raises(CaseError, match="unknown case"):
        load_case("no_such_case")


def test_missing_conductivity_rejected():
    case = replace(slab(), conductivity={1: 1.0})
    with pytest.raises(CaseError, match="no conductivity"):
        run_application(case)


def test_load_from_path(tmp_path):
    f = tmp_path / "s.ini"
    f.write_text(SLAB.format(dr=0.1, k1=2, k2=1))
    case = load_case(f)
    assert case.name == "slab" and case.conductivity == {1: 2.0, 2: 1.0}


def test_pack_ellipses_disjoint():
    axes = [(0.8, 0.4), (0.6, 0.3), (0.5, 0.25), (0.4, 0.2)]
    centers, angles = pack_ellipses(axes, half_width=3.0, gap=0.2, seed=1)
    assert centers.shape == (4, 2) and angles.shape == (4,)
    shapes = [Ellipse(tuple(c), ab, t) for c, ab, t in zip(centers, axes, angles)]
    outlines = [e.surface(0.01)[0] for e in shapes]
    for i, a in enumerate(outlines):
        assert np.all(np.abs(a) <= 3.0 - 0.2 + 1e-12)
        for j, b in enumerate(outlines):
            if i != j:
                assert not np.any(shapes[j].contains(a))
    again = pack_ellipses(axes, half_width=3.0, gap=0.2, seed=1)
    np.testing.assert_array_equal(again[0], centers)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["wavy_tube", "cylindrical_fillets"])
def test_3d_smoke(name):
    case = load_case(name)
    res = run_application(case, p=3)
    assert res.report.residual <= 1e-10
    assert np.all(np.isfinite(res.temperature))
