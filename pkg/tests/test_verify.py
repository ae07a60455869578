import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phscond import solver, verify
from phscond.geometry import INTERFACE
from phscond.verify import (
    StudyError,
    VerifyError,
    error_domain,
    error_norms,
    error_subdomain,
    fit_order,
    run_study,
    solve_case,
)

from conftest import discretized, points


def test_error_domain_zero():
    T = np.array([1.0, -2.0, 3.0])
    assert error_domain(T, T) == 0.0


def test_error_domain_hand():
    assert error_domain([1.0, 0.9], [1.0, 1.0]) == pytest.approx(0.05, abs=1e-15)


def test_error_domain_random_perturbation(rng):
    Te = rng.uniform(-2, 5, size=5000)
    eps = rng.uniform(-1e-3, 1e-3, size=Te.size)
    expect = np.mean(np.abs(eps)) / np.max(np.abs(Te))
    assert error_domain(Te + eps, Te) == pytest.approx(expect, rel=1e-12)


def test_error_subdomain_examples():
    T = np.array([0.0, 1.0, 2.0])
    assert error_subdomain(T, T, np.ones(3, bool)) == 0.0
    region = np.array([False, True, False])
    assert error_subdomain(T + 0.1, T, region, denominator=2.0) == pytest.approx(0.05)
    # default denominator is the region's own range
    assert error_subdomain(T + 0.1, T, np.ones(3, bool)) == pytest.approx(0.05)


def test_error_guards():
    with pytest.raises(VerifyError):
        error_domain([1.0], [0.0])
    with pytest.raises(VerifyError):
        error_domain([1.0, 2.0], [1.0])
    with pytest.raises(VerifyError):
        error_subdomain([1.0, 2.0], [1.0, 1.0], np.array([True, True]))
    with pytest.raises(VerifyError):
        error_subdomain([1.0], [1.0], np.array([False]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16), st.floats(1e-6, 1.0))
def test_norms_non_negative_and_scale_free(seed, scale):
    rng = np.random.default_rng(seed)
    Te = rng.normal(size=50)
    Tc = Te + rng.normal(scale=scale, size=50)
    a = error_domain(Tc, Te)
    assert a >= 0
    assert error_domain(7.0 * Tc, 7.0 * Te) == pytest.approx(a, rel=1e-12)


def test_fit_exact_power_law():
    h = np.array([0.1, 0.05, 0.025, 0.0125])
    assert fit_order(h, h**2) == pytest.approx(2.0, abs=1e-12)


def test_fit_noisy_cubic(rng):
    h = np.array([0.052, 0.037, 0.027, 0.019])
    for _ in range(50):
        e = 3.0 * h**3 * (1 + rng.uniform(-0.1, 0.1, size=4))
        assert 2.5 <= fit_order(h, e) <= 3.5


def test_fit_guards():
    with pytest.raises(VerifyError):
        fit_order([0.1, 0.05], [1e-2, 1e-3])
    with pytest.raises(VerifyError):
        fit_order([0.1, 0.05, 0.02], [1e-2, 0.0, 1e-4])


def test_norms_recomputed_independently():
    case = verify.make_case("circle_in_square", 10.0)
    ps, disc = discretized("circle_in_square", 0.052, 3)
    T, Te, rep, norms = solve_case(case, ps, 3, discretization=disc)
    r = np.linalg.norm(ps.coords, axis=1)
    solid = ps.kind != INTERFACE
    outer, inner, iface = solid & (r > 0.5), solid & (r < 0.5), ~solid
    err = np.abs(T - Te)
    rng_o = Te[outer].max() - Te[outer].min()
    rng_i = Te[inner].max() - Te[inner].min()
    assert norms["domain"] == pytest.approx(err.sum() / (np.abs(Te).max() * ps.n), rel=1e-12)
    assert norms["I"] == pytest.approx(err[outer].mean() / rng_o, rel=1e-12)
    assert norms["II"] == pytest.approx(err[inner].mean() / rng_i, rel=1e-12)
    assert norms["interface"] == pytest.approx(err[iface].mean() / (0.5 * (rng_o + rng_i)), rel=1e-12)
    assert norms["mean"] == pytest.approx((norms["I"] + norms["II"] + norms["interface"]) / 3, rel=1e-12)
    assert norms == error_norms(T, Te, ps)


def test_exact_initial_guess_consistency():
    case = verify.make_case("astroid_in_square", 5.0)
    ps, disc = discretized("astroid_in_square", 0.053, 3)
    T, Te, rep, norms = solve_case(case, ps, 3, discretization=disc)
    T2, _, rep2, norms2 = solve_case(case, ps, 3, discretization=disc, x0=Te)
    # Te is not the discrete solution, so the iteration count need not drop
    assert rep2.residual <= 1e-10
    np.testing.assert_allclose(T2, T, atol=1e-8 * np.abs(T).max())
    assert norms2 == pytest.approx(error_norms(T2, Te, ps), rel=1e-14)
    assert norms2["domain"] == pytest.approx(norms["domain"], rel=1e-6)


def test_manufactured_cases_c0_and_flux():
    for name in verify.CASES:
        case = verify.make_case(name, 10.0)
        ps = points(case.geometry, 0.1 if case.geometry == "sphere_in_cube" else 0.053)
        f = np.flatnonzero(ps.kind == INTERFACE)
        f = f[np.linspace(0, f.size - 1, 100).astype(int)]
        x, n = ps.coords[f], ps.normal[f]
        one, two = np.ones(f.size, int), np.full(f.size, 2)
        np.testing.assert_allclose(case.temperature(x, one), case.temperature(x, two), atol=1e-12)
        q1 = case.k1 * np.sum(case.gradient(x, one) * n, axis=1)
        q2 = case.k2 * np.sum(case.gradient(x, two) * n, axis=1)
        np.testing.assert_allclose(q1, q2, atol=1e-10)


def test_laplacian_matches_finite_differences(rng):
    h = 1e-4
    for name in verify.CASES:
        case = verify.make_case(name, 5.0)
        d = 3 if name == "sphere_in_cube" else 2
        x = rng.uniform(-0.9, 0.9, size=(20, d))
        x = x[np.all(np.abs(x) > 0.05, axis=1)]  # keep away from the astroid field's |x|^(2/3) kinks
        s = np.where(np.linalg.norm(x, axis=1) < 0.5, 2, 1)
        fd = sum(
            (case.temperature(x + h * e, s) - 2 * case.temperature(x, s) + case.temperature(x - h * e, s)) / h**2
            for e in np.eye(d)
        )
        np.testing.assert_allclose(case.laplacian(x, s), fd, rtol=1e-5, atol=1e-5)


def test_unknown_case():
    with pytest.raises(VerifyError):
        run_study("nope")
    with pytest.raises(ValueError):
        verify.make_case("nope")


def _small_study(**kw):
    return run_study("circle_in_square", spacings=(0.1, 0.075, 0.06), p_list=(2, 3), ratios=(5.0, 100.0), **kw)


def test_study_rows_orders_and_csv_determinism():
    a = _small_study()
    assert len(a.rows) == 3 * 2 * 2
    assert set(a.orders) == {("multidomain", r, p) for r in (5.0, 100.0) for p in (2, 3)}
    for row in a.rows:
        for n in verify.NORMS:
            assert getattr(row, f"error_{n}") >= 0
        assert row.residual <= 1e-10
    text = a.to_csv()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 12
    assert float(rows[0]["order_domain"]) == a.order("multidomain", 5.0, 2)
    b = _small_study(workers=2)
    assert b.to_csv() == text
    assert "C_domain" in a.summary()


def test_study_fields_and_equal_k_ratio():
    rep = run_study("equal_k_circle", spacings=(0.1, 0.075, 0.06), p_list=(3,), ratios=(5.0, 10.0), keep_fields=True)
    assert {r.ratio for r in rep.rows} == {1.0}
    assert len(rep.fields) == 3
    ps, T, Te = rep.fields[("multidomain", 1.0, 3, 0.06)]
    assert ps.n == T.size == Te.size
    row = [r for r in rep.rows if r.dr == 0.06][0]
    assert row.error_domain == error_domain(T, Te)


def test_study_failure_is_wrapped(monkeypatch):
    def boom(*a, **k):
        raise solver.BreakdownError(3, 1.0)

    monkeypatch.setattr(solver, "bicgstab", boom)
    with pytest.raises(StudyError, match=r"circle_in_square dr=0.1 p=2"):
        run_study("circle_in_square", spacings=(0.1,), p_list=(2,))


def test_stalled_solve_accepted_within_certificate(monkeypatch):
    case = verify.make_case("circle_in_square", 10.0)
    ps, disc = discretized("circle_in_square", 0.052, 3)
    real = solver.bicgstab

    def stalled(system, cfg=None, x0=None):
        x, rep = real(system, cfg, x0)
        rep.residual = 5e-11
        raise solver.ConvergenceError(rep.iterations, 5e-11, x, rep)

    monkeypatch.setattr(solver, "bicgstab", stalled)
    with pytest.warns(RuntimeWarning, match="accepting"):
        T, Te, rep, _ = solve_case(case, ps, 3, discretization=disc)
    assert rep.residual == 5e-11

    def hopeless(system, cfg=None, x0=None):
        x, rep = real(system, cfg, x0)
        raise solver.ConvergenceError(rep.iterations, 1e-6, x, rep)

    monkeypatch.setattr(solver, "bicgstab", hopeless)
    with pytest.raises(solver.ConvergenceError):
        solve_case(case, ps, 3, discretization=disc)


@pytest.mark.slow
def test_circle_p3_order_band():
    rep = run_study("circle_in_square", p_list=(3,), ratios=(10.0,))
    c = rep.order("multidomain", 10.0, 3)
    assert 1.9 - 0.5 <= c <= 1.9 + 1.5
    assert not math.isnan(c)
