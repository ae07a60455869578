import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from phscond import solver, verify
from phscond.assembly import assemble_multidomain
from phscond.solver import (
    ILU0,
    BreakdownError,
    ConvergenceError,
    Jacobi,
    SolverConfig,
    ZeroPivotError,
    bandwidth,
    bicgstab,
    make_preconditioner,
    rcm_permutation,
)

from conftest import discretized


def tridiag(n):
    return sp.diags([-np.ones(n - 1), 4 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


@pytest.fixture(scope="module")
def circle_system():
    case = verify.make_case("circle_in_square", 10.0)
    ps, (plan, w) = discretized("circle_in_square", 0.052, 4)
    return assemble_multidomain(ps, plan, w, verify._boundary_spec(case, "multidomain"))


def test_identity_one_iteration():
    b = np.arange(1.0, 6.0)
    x, rep = bicgstab((sp.identity(5, format="csr"), b))
    np.testing.assert_allclose(x, b, rtol=1e-14)
    assert rep.iterations <= 1


def test_two_by_two():
    x, rep = bicgstab((sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([1.0, 1.0])))
    np.testing.assert_allclose(x, [1 / 3, 1 / 3], atol=1e-12)
    assert rep.residual <= 1e-12


def test_zero_rhs():
    x, rep = bicgstab((tridiag(4), np.zeros(4)))
    assert np.all(x == 0) and rep.iterations == 0


def test_tridiagonal_bandwidth_kept():
    A = tridiag(50)
    perm = rcm_permutation(A)
    assert bandwidth(A[perm][:, perm]) == 1


def test_reversed_tridiagonal_restored():
    n = 40
    scramble = np.random.default_rng(3).permutation(n)
    A = tridiag(n)[scramble][:, scramble]
    assert bandwidth(A) > 1
    perm = rcm_permutation(A)
    assert bandwidth(A[perm][:, perm]) == 1
    J = sp.csr_matrix(np.fliplr(np.eye(n)))
    B = J @ tridiag(n) @ J  # anti-ordered band
    perm = rcm_permutation(B)
    assert bandwidth(B[perm][:, perm]) == 1


def test_rcm_is_permutation_and_min_degree_start():
    # path graph 0-1-2 plus isolated 3: components start at a minimum-degree vertex
    A = sp.csr_matrix(np.array([[1, 1, 0, 0], [1, 1, 1, 0], [0, 1, 1, 0], [0, 0, 0, 1]], dtype=float))
    perm = rcm_permutation(A)
    assert sorted(perm.tolist()) == [0, 1, 2, 3]


def test_rcm_reduces_circle_bandwidth(circle_system):
    A = circle_system.matrix
    perm = rcm_permutation(A)
    assert bandwidth(A[perm][:, perm]) < bandwidth(A)


def test_matches_direct_solve(circle_system):
    x, rep = bicgstab(circle_system)
    ref = spla.spsolve(circle_system.matrix.tocsc(), circle_system.rhs)
    assert np.max(np.abs(x - ref)) < 1e-8
    assert rep.bandwidth_after < rep.bandwidth_before


def test_residual_certificate(circle_system):
    x, rep = bicgstab(circle_system)
    b = circle_system.rhs
    true = np.linalg.norm(b - circle_system.matrix @ x) / np.linalg.norm(b)
    assert rep.residual == pytest.approx(true, rel=1e-14, abs=0)
    assert rep.residual <= 1e-12


def test_permutation_transparent(circle_system):
    x1, _ = bicgstab(circle_system, SolverConfig(reorder=True))
    x2, _ = bicgstab(circle_system, SolverConfig(reorder=False))
    assert np.max(np.abs(x1 - x2)) < 1e-9


def test_preconditioners_agree(circle_system):
    x1, r1 = bicgstab(circle_system, SolverConfig(preconditioner="ilu0"))
    x2, r2 = bicgstab(circle_system, SolverConfig(preconditioner="jacobi"))
    assert r1.preconditioner == "ilu0" and r2.preconditioner == "jacobi"
    A, b = circle_system.matrix, circle_system.rhs
    tol = SolverConfig().rel_tolerance
    # the two answers solve the same system to within 10x the tolerance
    assert np.linalg.norm(A @ (x1 - x2)) / np.linalg.norm(b) <= 10 * tol
    assert np.max(np.abs(x1 - x2)) / np.max(np.abs(x1)) < 1e-9


def test_ilu0_exact_on_tridiagonal():
    A = tridiag(30)
    M = ILU0(A)
    b = np.random.default_rng(1).normal(size=30)
    np.testing.assert_allclose(A @ M(b), b, atol=1e-12)
    assert M.shifted == 0


def test_ilu0_matches_dense_factorization_on_full_pattern():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(8, 8)) + 8 * np.eye(8)
    M = ILU0(sp.csr_matrix(A), pivot_floor=0.0)
    b = rng.normal(size=8)
    np.testing.assert_allclose(M(b), np.linalg.solve(A, b), rtol=1e-10)


def test_ilu0_zero_pivot_and_fallback():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ZeroPivotError):
        ILU0(A)
    with pytest.warns(RuntimeWarning, match="jacobi"):
        M, used = make_preconditioner(A, "ilu0")
    assert used == "jacobi" and isinstance(M, Jacobi)
    x, rep = bicgstab((A, np.array([2.0, 3.0])), SolverConfig(reorder=False))
    np.testing.assert_allclose(x, [3.0, 2.0], atol=1e-12)


def test_breakdown_retry_on_dirichlet_supported_rhs():
    # rhs only on the first row of a nonsymmetric system
    n = 30
    A = tridiag(n).tolil()
    A[0, :] = 0
    A[0, 0] = 1.0
    A = A.tocsr() + sp.diags([0.5 * np.ones(n - 2)], [2], shape=(n, n))
    b = np.zeros(n)
    b[0] = 1.0
    x, rep = bicgstab((A, b), SolverConfig(preconditioner="jacobi", reorder=False))
    assert np.linalg.norm(b - A @ x) <= 1e-12


def test_convergence_error_carries_best_iterate():
    A = tridiag(200) + sp.diags([np.linspace(-3, 3, 200)], [0])
    b = np.ones(200)
    cfg = SolverConfig(max_iterations=2, preconditioner="jacobi", reorder=False)
    with pytest.raises(ConvergenceError) as info:
        bicgstab((A, b), cfg)
    err = info.value
    assert err.best_x.shape == (200,)
    assert err.best_residual == pytest.approx(np.linalg.norm(b - A @ err.best_x) / np.linalg.norm(b), rel=1e-12)
    assert err.report is not None and err.report.iterations == err.iterations


def test_breakdown_error_type():
    assert issubclass(BreakdownError, solver.SolverError)


@pytest.mark.parametrize("kw", [dict(rel_tolerance=0.0), dict(max_iterations=0), dict(preconditioner="amg")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        bicgstab((tridiag(3), np.ones(4)))


def test_initial_guess_exact(circle_system):
    x, _ = bicgstab(circle_system)
    x2, rep = bicgstab(circle_system, x0=x)
    assert rep.iterations <= 2
    np.testing.assert_allclose(x2, x, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 60), st.integers(0, 2**16))
def test_random_diagonally_dominant(n, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.2, random_state=seed, format="csr")
    A = A + sp.diags(np.abs(A).sum(axis=1).A1 + 1.0)
    b = rng.normal(size=n)
    x, rep = bicgstab((A, b))
    assert np.linalg.norm(b - A @ x) / np.linalg.norm(b) <= 1e-12
    perm = rcm_permutation(A)
    assert sorted(perm.tolist()) == list(range(n))
    assert bandwidth(A[perm][:, perm]) <= bandwidth(A)
