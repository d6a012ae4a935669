from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom.assembly import (
    SparseMatrix,
    WeightSpec,
    assemble_boundary_mass,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_mass,
    build_operator,
    extend_by_zero,
    extension_energy_ratio,
    harmonic_extension,
    hole_mass,
    ji_defect_estimate,
    l2_defect,
    restrict_to_perforated,
)
from perfhom.errors import ArgumentError, AssemblyError
from perfhom.geometry import BoundaryKind, DomainSpec, holes_volume
from perfhom.mesh import OUTER, Mesh, mesh_full_domain

from conftest import cached_pair

SQUARE = DomainSpec.unit_square()


def ref_triangle(scale=1.0):
    v = scale * np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    e = np.array([[0, 1], [1, 2], [2, 0]])
    return Mesh(v, np.array([[0, 1, 2]]), e, np.full(3, OUTER))


def test_reference_stiffness():
    K = assemble_stiffness(ref_triangle()).toarray()
    assert np.allclose(K, 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)


def test_reference_mass():
    M = assemble_mass(ref_triangle()).toarray()
    assert np.allclose(M, 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), atol=1e-16)


def test_inverted_triangle_rejected():
    m = ref_triangle()
    bad = Mesh(m.vertices, np.array([[0, 2, 1]]), m.boundary_edges, m.edge_markers)
    with pytest.raises(AssemblyError):
        assemble_stiffness(bad)


def test_edge_mass():
    v = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 4.0]])
    m = Mesh(v, np.array([[0, 1, 2]]), np.array([[0, 1]]), np.array([OUTER]))
    R = assemble_boundary_mass(m, "outer").toarray()
    assert np.allclose(R[:2, :2], 5 / 6 * np.array([[2, 1], [1, 2]]))
    assert R[2].sum() == 0


def test_boundary_mass_unit_form_is_length(robin_pair_9):
    _, perf, _ = robin_pair_9
    one = np.ones(perf.n_vertices)
    assert one @ assemble_boundary_mass(perf, "outer").csr @ one == pytest.approx(4.0, rel=1e-14)
    ring_len = sum(np.sum(np.linalg.norm(perf.vertices[np.roll(r, -1)] - perf.vertices[r], axis=1))
                   for r in map(np.asarray, perf.hole_rings))
    assert one @ assemble_boundary_mass(perf, "hole").csr @ one == pytest.approx(ring_len, rel=1e-13)


def test_boundary_mass_without_edges_is_zero():
    m = ref_triangle()
    m = Mesh(m.vertices, m.triangles, np.zeros((0, 2), int), np.zeros(0, int))
    assert assemble_boundary_mass(m, "hole").nnz == 0


def test_stiffness_kernel_and_symmetry(robin_pair_9):
    _, perf, _ = robin_pair_9
    K = assemble_stiffness(perf)
    assert np.abs(K @ np.ones(perf.n_vertices)).max() <= 1e-12
    assert K.check_symmetry()
    assert assemble_mass(perf).csr.sum() == pytest.approx(perf.areas().sum(), rel=1e-13)


def test_stiffness_matches_double_quadrature():
    # gradients are constant per triangle: recompute the form triangle by triangle
    m = mesh_full_domain(SQUARE, 0.25)
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal((2, m.n_vertices))
    p = m.vertices[m.triangles]
    total = 0.0
    for k, t in enumerate(m.triangles):
        A = np.c_[np.ones(3), p[k]]
        cu, cv = np.linalg.solve(A, u[t]), np.linalg.solve(A, v[t])
        total += 0.5 * abs(np.linalg.det(A)) * (cu[1:] @ cv[1:])
    assert u @ assemble_stiffness(m).csr @ v == pytest.approx(total, rel=1e-12)


def test_weighted_mass_near_centre_equals_mass():
    m = ref_triangle(1e-4)
    W = assemble_weighted_mass(m, WeightSpec((0.0, 0.0))).toarray()
    M = assemble_mass(m).toarray()
    assert np.allclose(W, M, rtol=1e-6)


def test_weighted_mass_total_against_fine_quadrature():
    w = WeightSpec((0.3, 0.6))
    m = mesh_full_domain(DomainSpec.strip(2, 1), 1 / 16)
    one = np.ones(m.n_vertices)
    val = one @ assemble_weighted_mass(m, w).csr @ one
    # tensor Gauss-Legendre reference
    x, wx = np.polynomial.legendre.leggauss(80)
    X, Y = np.meshgrid(1 + x, 0.5 + 0.5 * x, indexing="ij")
    ref = np.sum(np.outer(wx, wx) * w.omega(np.stack([X, Y], -1))) * 0.5
    assert val == pytest.approx(ref, rel=1e-4)


def test_weighted_mass_dominates_mass():
    m = mesh_full_domain(SQUARE, 0.25)
    W = assemble_weighted_mass(m, WeightSpec((10.0, 10.0))).toarray()
    M = assemble_mass(m).toarray()
    assert np.all(W >= M - 1e-15)


def test_weight_gradient_bound():
    w = WeightSpec((0.0, 0.0))
    x = np.random.default_rng(0).uniform(-3, 3, (100, 2))
    r = np.linalg.norm(x, axis=1)
    assert np.all(np.abs(np.sinh(r)) <= w.omega(x))
    assert np.all(w.omega(x) >= 1)


# operators -------------------------------------------------------------------


def test_neumann_constant_vector(robin_pair):
    _, perf, _ = robin_pair
    c, mu = 0.3 + 0.1j, 0.7
    op = build_operator(perf, BoundaryKind.neumann(), mu, c)
    one = np.ones(perf.n_vertices)
    lhs = op.system @ one
    rhs = (c + 1 + mu) * (op.Mass @ one)
    assert np.allclose(lhs, rhs, atol=1e-14)


def test_dirichlet_elimination(robin_pair):
    _, perf, _ = robin_pair
    op = build_operator(perf, BoundaryKind.dirichlet())
    assert np.array_equal(op.dirichlet_nodes, perf.boundary_nodes())
    assert op.n_free == perf.n_vertices - len(perf.boundary_nodes())


def test_robin_complex_flags(robin_pair):
    _, perf, _ = robin_pair
    op = build_operator(perf, BoundaryKind.robin(1 + 1j))
    assert op.symmetry == "complex-symmetric"
    S = op.system
    assert S.check_symmetry() and not np.allclose(S.toarray(), S.toarray().conj().T)
    assert build_operator(perf, BoundaryKind.robin(1)).symmetry == "hermitian"


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), re=st.floats(0.1, 5), im=st.floats(-5, 5),
       c=st.floats(-2, 2), mu=st.floats(0, 3))
def test_robin_structural_identity(robin_pair, seed, re, im, c, mu):
    _, perf, _ = robin_pair
    alpha = complex(re, im)
    op = build_operator(perf, BoundaryKind.robin(alpha), mu, c)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
    q = np.vdot(u, op.system @ u)
    K = np.vdot(u, op.K @ u).real
    R = np.vdot(u, op.boundary_form() @ u).real
    M = np.vdot(u, op.Mass @ u).real
    scale = K + abs(alpha) * R + abs(c + 1 + mu) * M
    assert abs(q.imag - alpha.imag * R) <= 1e-13 * scale
    assert abs(q.real - (K + alpha.real * R + (c + 1 + mu) * M)) <= 1e-13 * scale


def test_bc_must_be_boundary_kind(robin_pair):
    _, perf, _ = robin_pair
    with pytest.raises(ArgumentError):
        build_operator(perf, "robin")


def test_spd_on_constrained_space(robin_pair):
    import scipy.sparse.linalg as spla

    _, perf, _ = robin_pair
    for bc in (BoundaryKind.dirichlet(), BoundaryKind.neumann(), BoundaryKind.robin(1)):
        op = build_operator(perf, bc)
        A = op.system.csr.real.tocsc()
        w = spla.eigsh(A, k=1, M=op.mass_free.csr.tocsc(), sigma=0, which="LM", return_eigenvectors=False)
        assert w[0] >= 1 - 1e-10  # -Laplace + 1 is bounded below by 1


def test_export_coo(tmp_path):
    S = SparseMatrix(np.array([[1.0, 2j], [2j, 0]]), "complex-symmetric")
    p = tmp_path / "a.coo"
    S.export_coo(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "# 2 2 complex-symmetric"
    assert lines[1:] == ["0 0 1.0 0.0", "0 1 0.0 2.0", "1 0 0.0 2.0"]


def test_unknown_symmetry_flag():
    with pytest.raises(ArgumentError):
        SparseMatrix(np.eye(2), "skew")


# identification operators ----------------------------------------------------


def test_extension_and_restriction(robin_pair):
    _, perf, full = robin_pair
    u = np.arange(perf.n_vertices, dtype=float)
    Ju = extend_by_zero(u, perf, full)
    assert np.all(Ju[perf.n_vertices:] == 0)
    assert np.array_equal(restrict_to_perforated(Ju, perf, full), u)


def test_harmonic_extension_constant(robin_pair_9):
    _, perf, full = robin_pair_9
    assert np.allclose(harmonic_extension(np.ones(perf.n_vertices), full), 1, atol=1e-12)


def test_harmonic_extension_affine(robin_pair_9):
    _, perf, full = robin_pair_9
    f = lambda x: 2 - x[:, 0] + 0.5 * x[:, 1]  # noqa: E731
    Tu = harmonic_extension(f(perf.vertices), full)
    assert np.max(np.abs(Tu - f(full.vertices))) <= 1e-10


def test_harmonic_extension_minimises_energy(robin_pair):
    _, perf, full = robin_pair
    rng = np.random.default_rng(4)
    u = rng.standard_normal(perf.n_vertices)
    Tu = harmonic_extension(u, full)
    Kh = assemble_stiffness(full, full.in_hole).csr
    base = Tu @ Kh @ Tu
    for _ in range(5):
        p = np.zeros(full.n_vertices)
        p[perf.n_vertices:] = rng.standard_normal(full.n_vertices - perf.n_vertices)
        assert (Tu + 1e-2 * p) @ Kh @ (Tu + 1e-2 * p) > base


def test_extension_energy_ratio_is_moderate(robin_pair_9):
    _, perf, full = robin_pair_9
    u = np.sin(3 * perf.vertices[:, 0]) + perf.vertices[:, 1] ** 2
    assert 0 < extension_energy_ratio(u, perf, full) < 5


# L2 defects ------------------------------------------------------------------


def test_l2_defect_zero(robin_pair):
    _, perf, full = robin_pair
    u_full = np.zeros(full.n_vertices)
    u_full[: perf.n_vertices] = np.random.default_rng(0).standard_normal(perf.n_vertices)
    u_full[full.boundary_nodes()] = 0
    # zero on every vertex touching a hole triangle
    u_full[np.unique(full.triangles[full.in_hole])] = 0
    assert l2_defect(u_full[: perf.n_vertices], u_full, perf, full) <= 1e-12


def test_l2_defect_unit(robin_pair):
    _, perf, full = robin_pair
    d = l2_defect(np.zeros(perf.n_vertices), np.ones(full.n_vertices), perf, full)
    assert d == pytest.approx(1.0, rel=1e-12)


def test_l2_defect_clipping_path_agrees(robin_pair):
    # an unpaired full mesh forces interpolation and polygon clipping
    _, perf, full = robin_pair
    other = mesh_full_domain(SQUARE, 1 / 64)
    f = lambda x: np.cos(x[:, 0]) * x[:, 1]  # noqa: E731
    fast = l2_defect(np.zeros(perf.n_vertices), f(full.vertices), perf, full)
    slow = l2_defect(np.zeros(perf.n_vertices), f(other.vertices), perf, other)
    assert slow == pytest.approx(fast, rel=2e-3)


@settings(max_examples=20, deadline=None)
@given(t=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False), seed=st.integers(0, 1000))
def test_l2_defect_homogeneous(robin_pair, t, seed):
    _, perf, full = robin_pair
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal(perf.n_vertices), rng.standard_normal(full.n_vertices)
    assert l2_defect(t * u, t * v, perf, full) == pytest.approx(abs(t) * l2_defect(u, v, perf, full),
                                                               rel=1e-10, abs=1e-300)


def test_ji_defect_no_holes():
    from perfhom.geometry import PerforationSpec

    spec = PerforationSpec(SQUARE, 0.5, BoundaryKind.robin(1))
    assert ji_defect_estimate(mesh_full_domain(SQUARE, 0.25), spec) == 0.0


def test_hole_mass_constant_gives_hole_area(robin_pair_9):
    spec, perf, full = robin_pair_9
    one = np.ones(full.n_vertices)
    area = one @ hole_mass(full).csr @ one
    assert area == pytest.approx(holes_volume(spec), rel=1e-2)
    assert area == pytest.approx(full.areas()[full.in_hole].sum(), rel=1e-14)


def test_ji_defect_decreases():
    vals = []
    for eps, h in ((0.25, 0.0625), (0.125, 0.0625), (0.0625, 0.0625)):
        spec, _, full = cached_pair(eps, h)
        vals.append(ji_defect_estimate(full, spec, 8, 0))
    assert vals[0] > vals[1] > vals[2] > 0
    assert math.isfinite(vals[0])
