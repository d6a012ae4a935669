from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom.assembly import build_operator
from perfhom.errors import ArgumentError, SolverError
from perfhom.geometry import BoundaryKind, DomainSpec
from perfhom.mesh import mesh_full_domain
from perfhom.solvers import dense_eigs, eigs_window, expm_apply, factorization, opnorm_diff, solve

SQUARE = DomainSpec.unit_square()


@pytest.fixture(scope="module")
def dirichlet_square():
    return build_operator(mesh_full_domain(SQUARE, 1 / 16), BoundaryKind.dirichlet())


@pytest.fixture(scope="module")
def small_robin(robin_pair):
    _, perf, _ = robin_pair
    return build_operator(perf, BoundaryKind.robin(1 + 1j), 0.0, -1.0)


# linear solves ---------------------------------------------------------------


def test_neumann_constant_solution():
    m = mesh_full_domain(SQUARE, 0.125)
    op = build_operator(m, BoundaryKind.neumann())
    u, rep = solve(op, op.Mass @ np.ones(m.n_vertices))
    assert np.allclose(u, 1, atol=1e-10)
    assert rep.residual <= 1e-10


@pytest.mark.parametrize("method", ["direct", "cg", "bicgstab"])
def test_solve_residual(robin_pair, method):
    _, perf, _ = robin_pair
    op = build_operator(perf, BoundaryKind.robin(1))
    b = np.random.default_rng(2).standard_normal(op.n)
    x, rep = solve(op, b, tol=1e-9, method=method)
    r = np.linalg.norm(op.system @ x - b) / np.linalg.norm(b)
    assert r <= 1e-9 and rep.method == method


def test_cg_refuses_non_hermitian(small_robin):
    with pytest.raises(ArgumentError):
        solve(small_robin, np.ones(small_robin.n), method="cg")


def test_factorization_reused(robin_pair):
    _, perf, _ = robin_pair
    op = build_operator(perf, BoundaryKind.robin(2))
    solve(op, np.ones(op.n))
    _, rep = solve(op, np.arange(op.n, dtype=float))
    assert rep.reused
    assert factorization(op)[1]


def test_adjoint_solve_identity(small_robin):
    op = small_robin
    rng = np.random.default_rng(5)
    b = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
    x_adj, _ = solve(op, b.conj(), adjoint=True)
    A_H = op.system.csr.conj().T.tocsc()
    import scipy.sparse.linalg as spla

    ref = spla.spsolve(A_H, b.conj())
    assert np.allclose(x_adj, ref, atol=1e-10 * np.abs(ref).max())
    # complex symmetric: A^H = conj(A), so the adjoint solve is the conjugate of a plain solve
    x, _ = solve(op, b)
    assert np.allclose(x_adj, x.conj(), atol=1e-10 * np.abs(x).max())


def test_cg_energy_error_monotone(dirichlet_square):
    op = dirichlet_square
    b = np.random.default_rng(0).standard_normal(op.n_free)
    x, rep = solve(op, b, method="cg", record=True, tol=1e-10)
    A = op.system.csr
    ref = sla.solve(A.toarray(), b)
    errs = [float(np.real(np.vdot(h - ref, A @ (h - ref)))) for h in rep.history]
    assert len(errs) > 3
    assert all(e2 <= e1 * (1 + 1e-9) for e1, e2 in zip(errs, errs[1:]))


def test_bad_vector_length(dirichlet_square):
    with pytest.raises(ArgumentError):
        solve(dirichlet_square, np.ones(3))


# eigenvalues -----------------------------------------------------------------


def test_first_dirichlet_eigenvalue(dirichlet_square):
    res = eigs_window(dirichlet_square, (1.0, 25.0))
    assert len(res) == 1
    assert res.values[0].real == pytest.approx(2 * math.pi**2 + 1, rel=2e-2)


def test_second_eigenvalue_double(dirichlet_square):
    res = eigs_window(dirichlet_square, (25.0, 60.0))
    assert len(res) == 2
    assert np.allclose(res.values.real, 5 * math.pi**2 + 1, rtol=5e-2)


def test_window_below_one_empty(robin_pair):
    _, perf, _ = robin_pair
    for bc in (BoundaryKind.dirichlet(), BoundaryKind.neumann(), BoundaryKind.robin(1 + 2j)):
        res = eigs_window(build_operator(perf, bc), (-5.0, 0.99))
        assert len(res) == 0


@pytest.mark.parametrize("bc", [BoundaryKind.neumann(), BoundaryKind.robin(1), BoundaryKind.robin(1 + 1j)])
def test_eigs_match_dense(bc):
    m = mesh_full_domain(SQUARE, 1 / 12)
    assert m.n_vertices <= 300
    op = build_operator(m, bc, 0.0, -1.0)
    win = (0.0, 60.0)
    a = eigs_window(op, win, k_max=100)
    b = dense_eigs(op, win)
    assert len(a) == len(b)
    assert np.max(np.abs(a.values - b.values)) <= 1e-8 * max(1, np.abs(b.values).max())


def test_eig_residuals_reported(dirichlet_square):
    res = eigs_window(dirichlet_square, (1.0, 60.0))
    assert res.residuals.max() <= 1e-8 and res.complete


def test_bad_window(dirichlet_square):
    with pytest.raises(ArgumentError):
        eigs_window(dirichlet_square, (5.0, 1.0))


# operator norms --------------------------------------------------------------


def test_opnorm_zero():
    est = opnorm_diff(lambda x: 0 * x, lambda y: 0 * y, 5)
    assert est.value == 0.0


def test_opnorm_identity_mass_orthonormal():
    M = np.diag([1.0, 4.0, 9.0])
    est = opnorm_diff(lambda x: x, lambda y: y, 3, in_mass=M,
                      out_norm=lambda y: math.sqrt(np.real(np.vdot(y, M @ y))))
    assert est.value == pytest.approx(1.0, rel=1e-3)


def test_opnorm_diagonal():
    d = np.array([1.0, 2.0, 3.0])
    est = opnorm_diff(lambda x: d * x, lambda y: d * y, 3, tol=1e-6)
    assert est.value == pytest.approx(3.0, rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_opnorm_matches_svd(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    sv = np.linalg.svd(A, compute_uv=False)
    if (sv[0] - sv[1]) / sv[0] < 1e-2:
        return  # nearly double top singular value: convergence too slow for the cap
    est = opnorm_diff(lambda x: A @ x, lambda y: A.conj().T @ y, 12, tol=1e-3, seed=seed)
    assert est.value == pytest.approx(sv[0], rel=1e-3)
    assert est.value <= sv[0] * (1 + 1e-12)  # every iterate is a lower bound


def test_opnorm_stagnation_reports_lower_bound():
    A = np.diag([1.0, 0.999999])
    with pytest.raises(SolverError) as info:
        opnorm_diff(lambda x: A @ x, lambda y: A @ y, 2, tol=1e-14, maxiter=3)
    assert 0 < info.value.report.value <= 1.0


# exp(-tB) --------------------------------------------------------------------


def test_expm_t0(small_robin):
    v = np.random.default_rng(0).standard_normal(small_robin.n_free) + 0j
    assert np.array_equal(expm_apply(small_robin, 0.0, v), v)


def test_expm_eigenvector():
    m = mesh_full_domain(SQUARE, 1 / 10)
    op = build_operator(m, BoundaryKind.robin(1), 0.0, -1.0)
    res = dense_eigs(op)
    lam, v = res.values[0].real, res.vectors[:, 0]
    for t in (0.3, 1.0, 2.5):
        y = expm_apply(op, t, v, tol=1e-7)
        M = op.mass_free.csr
        err = y - math.exp(-lam * t) * v
        assert math.sqrt(np.vdot(err, M @ err).real) <= 1e-6 * math.sqrt(np.vdot(v, M @ v).real)


def test_expm_matches_dense(small_robin):
    op = small_robin
    S, M = op.system.toarray(), op.mass_free.toarray().real
    v = np.random.default_rng(1).standard_normal(op.n_free) + 0j
    ref = sla.expm(-1.3 * np.linalg.solve(M, S)) @ v
    y = expm_apply(op, 1.3, v, tol=1e-8)
    err = y - ref
    assert math.sqrt(np.vdot(err, M @ err).real) <= 1e-6 * math.sqrt(np.vdot(v, M @ v).real)


def test_expm_semigroup_property(small_robin):
    op = small_robin
    tol = 1e-6
    v = np.random.default_rng(2).standard_normal(op.n_free) + 0j
    a = expm_apply(op, 1.1, v, tol)
    b = expm_apply(op, 0.4, expm_apply(op, 0.7, v, tol), tol)
    M = op.mass_free.csr
    nrm = lambda x: math.sqrt(np.vdot(x, M @ x).real)  # noqa: E731
    assert nrm(a - b) <= 3 * tol * nrm(v)


def test_expm_contractive(small_robin):
    op = small_robin
    M = op.mass_free.csr
    rng = np.random.default_rng(3)
    for t in (0.1, 0.5, 2.0):
        v = rng.standard_normal(op.n_free) + 1j * rng.standard_normal(op.n_free)
        y = expm_apply(op, t, v)
        assert np.vdot(y, M @ y).real <= np.vdot(v, M @ v).real * (1 + 10 * 1e-6) ** 2


def test_expm_adjoint(small_robin):
    op = small_robin
    M = op.mass_free.csr
    rng = np.random.default_rng(4)
    u, v = rng.standard_normal((2, op.n_free)) + 1j * rng.standard_normal((2, op.n_free))
    lhs = np.vdot(u, M @ expm_apply(op, 0.8, v, 1e-9))
    rhs = np.vdot(expm_apply(op, 0.8, u, 1e-9, adjoint=True), M @ v)
    scale = math.sqrt(np.vdot(u, M @ u).real * np.vdot(v, M @ v).real)
    assert abs(lhs - rhs) <= 1e-8 * scale


def test_expm_negative_time(small_robin):
    with pytest.raises(ArgumentError):
        expm_apply(small_robin, -1.0, np.ones(small_robin.n_free))
