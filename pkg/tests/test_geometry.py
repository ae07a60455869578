import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist, squareform

from phscond.geometry import (
    BOUNDARY,
    INTERFACE,
    INTERIOR,
    MIN_SEPARATION,
    GeometryError,
    GeometrySpec,
    average_spacing,
    export_points,
    generate,
    import_points,
)

from conftest import points


def test_circle_counts_match_table_regime(circle_ps):
    c = circle_ps.counts()
    n_int = c["interface_1"]
    n_one = c["interior_1"] + c["boundary"]
    n_two = c["interior_2"]
    assert abs(circle_ps.n - 1541) <= 0.15 * 1541
    assert abs(n_one - 1221) <= 0.15 * 1221
    assert abs(n_two - 266) <= 0.15 * 266
    assert abs(n_int - 54) <= 0.15 * 54


def test_slab_interface_normals_planar():
    ps = generate(GeometrySpec("composite_slab", 0.5), 0)
    f = ps.kind == INTERFACE
    assert f.sum() == 2
    np.testing.assert_array_equal(ps.normal[f], np.tile([1.0, 0.0], (2, 1)))


def test_circle_normal_at_east_point(circle_ps):
    f = np.flatnonzero(circle_ps.kind == INTERFACE)
    i = f[np.argmin(np.linalg.norm(circle_ps.coords[f] - [0.5, 0.0], axis=1))]
    np.testing.assert_allclose(circle_ps.coords[i], [0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(circle_ps.normal[i], [1.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("shape,dr", [("circle_in_square", 0.052), ("sphere_in_cube", 0.1)])
def test_radial_normals(shape, dr):
    ps = points(shape, dr)
    f = ps.kind == INTERFACE
    x = ps.coords[f]
    radial = x / np.linalg.norm(x, axis=1, keepdims=True)
    assert np.max(np.linalg.norm(ps.normal[f] - radial, axis=1)) < 1e-10


@pytest.mark.parametrize(
    "shape,dr",
    [("circle_in_square", 0.052), ("astroid_in_square", 0.053), ("sphere_in_cube", 0.1), ("composite_slab", 0.05)],
)
def test_point_set_invariants(shape, dr):
    ps = points(shape, dr)
    ps.validate()
    f = ps.kind == INTERFACE
    pair = ps.adjacent[f]
    assert np.all(pair[:, 0] != pair[:, 1]) and np.all(pair >= 1)
    assert np.all(ps.adjacent[~f] == -1)
    lengths = np.linalg.norm(ps.normal, axis=1)
    assert np.all(np.abs(lengths[lengths > 0] - 1.0) < 1e-12)
    assert np.all(lengths[f] > 0)
    # partition: every point in exactly one category
    c = ps.counts()
    assert c["N"] == sum(v for k, v in c.items() if k != "N")
    assert np.all(np.isin(ps.kind, [INTERIOR, BOUNDARY, INTERFACE]))


def test_minimum_separation(circle_ps):
    d = pdist(circle_ps.coords)
    assert d.min() > 0
    # generated interior points respect the clearance against everything
    interior = circle_ps.kind == INTERIOR
    full = squareform(d)
    np.fill_diagonal(full, np.inf)
    assert full[interior].min() >= MIN_SEPARATION * 0.052 * (1 - 1e-9)


def test_generate_reproducible():
    a = generate(GeometrySpec("astroid_in_square", 0.08), 3)
    b = generate(GeometrySpec("astroid_in_square", 0.08), 3)
    for name in ("coords", "subdomain_id", "kind", "interface_id", "normal", "adjacent"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_subdomain_labels_match_shape(circle_ps):
    r = np.linalg.norm(circle_ps.coords, axis=1)
    solid = circle_ps.kind != INTERFACE
    assert np.all(circle_ps.subdomain_id[solid & (r < 0.5)] == 2)
    assert np.all(circle_ps.subdomain_id[solid & (r > 0.5)] == 1)


def test_astroid_has_no_cusp_tips():
    ps = points("astroid_in_square", 0.053)
    f = ps.interface_mask()
    tips = np.array([[0.5, 0], [0, 0.5], [-0.5, 0], [0, -0.5]])
    d = np.linalg.norm(ps.coords[f][:, None] - tips[None], axis=2)
    assert d.min() > 1e-6


@pytest.mark.parametrize(
    "kwargs",
    [dict(shape="circle_in_square", spacing=0.0), dict(shape="circle_in_square", spacing=-1.0), dict(shape="blob", spacing=0.1)],
)
def test_bad_spec_rejected(kwargs):
    with pytest.raises(GeometryError):
        GeometrySpec(**kwargs)


def test_inclusion_crossing_boundary_rejected():
    with pytest.raises(GeometryError):
        generate(GeometrySpec("circle_in_square", 0.05, radius=1.2), 0)


# ---------------------------------------------------------------------------
# point files


def test_import_minimal_file(tmp_path):
    path = tmp_path / "five.pts"
    path.write_text(
        "# dim=2 n=5\n"
        "0.5 0.5 1 I\n"
        "0 0 1 B 1\n"
        "1 0 1 B 2\n"
        "1 1 1 B 3\n"
        "0 1 1 B 4\n"
    )
    ps = import_points(path)
    assert ps.n == 5
    assert list(ps.kind) == [INTERIOR] + [BOUNDARY] * 4


def test_import_duplicate_names_both(tmp_path):
    path = tmp_path / "dup.pts"
    path.write_text("# dim=2\n0 0 1 B 1\n0.5 0.5 1 I\n0 0 1 B 1\n")
    with pytest.raises(GeometryError, match=r"points 0 and 2"):
        import_points(path)


def test_import_rejects_bad_rows(tmp_path):
    path = tmp_path / "bad.pts"
    path.write_text("# dim=2\n0 0 1 Q\n")
    with pytest.raises(GeometryError):
        import_points(path)
    path.write_text("0 0 1 I\n")
    with pytest.raises(GeometryError):
        import_points(path)


def test_round_trip_bitwise(tmp_path, circle_ps):
    path = tmp_path / "circle.pts"
    export_points(circle_ps, path)
    back = import_points(path)
    np.testing.assert_array_equal(back.coords, circle_ps.coords)
    np.testing.assert_array_equal(back.kind, circle_ps.kind)
    np.testing.assert_array_equal(back.subdomain_id, circle_ps.subdomain_id)
    np.testing.assert_array_equal(back.adjacent, circle_ps.adjacent)
    np.testing.assert_allclose(back.normal, circle_ps.normal, atol=1e-15)


def test_imported_geometry_spec(tmp_path, circle_ps):
    path = tmp_path / "c.pts"
    export_points(circle_ps, path)
    ps = generate(GeometrySpec("imported", 0.0, path=str(path)))
    assert ps.n == circle_ps.n


# ---------------------------------------------------------------------------
# average spacing


def test_spacing_two_points():
    assert average_spacing(np.array([[0.0, 0.0], [1.0, 0.0]])) == 1.0


def test_spacing_unit_square():
    assert average_spacing(np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])) == 1.0


def test_spacing_brute_force(circle_ps):
    full = squareform(pdist(circle_ps.coords))
    np.fill_diagonal(full, np.inf)
    brute = full.min(axis=1).mean()
    got = average_spacing(circle_ps)
    assert got == pytest.approx(brute, rel=1e-12)
    assert 0.042 <= got <= 0.062


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**16))
def test_spacing_matches_brute_random(n, seed):
    x = np.random.default_rng(seed).uniform(size=(n, 3))
    full = squareform(pdist(x))
    np.fill_diagonal(full, np.inf)
    assert average_spacing(x) == pytest.approx(full.min(axis=1).mean(), rel=1e-12)
