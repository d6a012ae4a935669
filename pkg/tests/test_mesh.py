from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom.errors import ArgumentError, GeometryError, ResourceError
from perfhom.geometry import BoundaryKind, DomainSpec, PerforationSpec, lattice_centers
from perfhom.mesh import (
    OUTER,
    audit_mesh,
    hole_segments,
    interpolate,
    locate,
    mesh_full_domain,
    mesh_perforated,
    polygon_area_defect,
    radial_grid,
    read_mesh,
    write_mesh,
    write_quality_csv,
)

from conftest import cached_pair

SQUARE = DomainSpec.unit_square()


def ring_area(mesh):
    return sum(0.5 * abs(np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1]))
               for p in (mesh.vertices[np.asarray(r)] for r in mesh.hole_rings))


# full-domain meshes ----------------------------------------------------------


def test_full_mesh_half():
    m = mesh_full_domain(SQUARE, 0.5)
    assert (m.n_triangles, m.n_vertices) == (8, 9)


def test_full_mesh_quarter():
    assert mesh_full_domain(SQUARE, 0.25).n_triangles == 32


@pytest.mark.parametrize("h", [1.0, 2.0, 0.0, -0.1])
def test_full_mesh_degenerate_h(h):
    with pytest.raises(ArgumentError):
        mesh_full_domain(SQUARE, h)


def test_full_mesh_resource_cap():
    with pytest.raises(ResourceError):
        mesh_full_domain(SQUARE, 0.01, max_triangles=1000)


def test_full_mesh_audit_and_boundary():
    m = mesh_full_domain(DomainSpec.strip(3, 1), 0.25)
    rep = audit_mesh(m)
    assert rep.conforming and rep.oriented
    assert rep.min_angle == pytest.approx(45)
    assert m.areas().sum() == pytest.approx(3.0, rel=1e-14)
    e = m.boundary_edges
    assert np.sum(np.linalg.norm(m.vertices[e[:, 1]] - m.vertices[e[:, 0]], axis=1)) == pytest.approx(8.0)
    assert np.all(m.edge_markers == OUTER)


# hole polygons ---------------------------------------------------------------


def test_hole_segments_meets_area_defect():
    for tol in (1e-1, 1e-2, 1e-3, 1e-4):
        n = hole_segments(tol, 3)
        assert polygon_area_defect(n) <= tol
        assert n == 3 or polygon_area_defect(n - 1) > tol or n == math.ceil(2 * math.pi / math.sqrt(8 * tol))


# perforated meshes -----------------------------------------------------------


def test_one_hole_robin_quarter(robin_pair):
    spec, perf, _ = robin_pair
    assert perf.n_holes == 1 and len(perf.hole_rings) == 1
    assert perf.hole_radius == 0.0625
    rep = audit_mesh(perf)
    assert rep.conforming and rep.oriented
    assert rep.min_angle >= 20.0


def test_audit_flags_off_circle_hole_node(robin_pair):
    import copy

    _, perf, _ = robin_pair
    assert audit_mesh(perf).ok()
    moved = copy.deepcopy(perf)
    node = int(moved.boundary_nodes(0)[0])
    moved.vertices[node] *= 1 + 1e-9
    rep = audit_mesh(moved)
    assert rep.boundary_fit > rep.fit_limit and not rep.ok()


def test_ring_vertices_on_circle(robin_pair_9):
    _, perf, _ = robin_pair_9
    for c, ring in zip(perf.hole_centers, perf.hole_rings):
        r = np.linalg.norm(perf.vertices[np.asarray(ring)] - c, axis=1)
        assert np.max(np.abs(r - perf.hole_radius)) <= 1e-12 * perf.hole_radius + 1e-16


def test_area_balance(robin_pair_9):
    _, perf, _ = robin_pair_9
    total = perf.areas().sum()
    assert abs(total - (1.0 - ring_area(perf))) <= 1e-12


def test_grading_bound(robin_pair_9):
    _, perf, _ = robin_pair_9
    assert audit_mesh(perf).max_size_ratio <= 1.5 * (1 + 1e-9)


def test_hole_polygon_area_defect_within_tolerance(robin_pair_9):
    _, perf, _ = robin_pair_9
    exact = perf.n_holes * math.pi * perf.hole_radius**2
    assert 0 < 1 - ring_area(perf) / exact <= 1e-2


def test_boundary_markers(robin_pair_9):
    _, perf, _ = robin_pair_9
    m = perf.edge_markers
    assert set(np.unique(m)) == {OUTER} | set(range(9))
    e = perf.boundary_edges
    L = np.linalg.norm(perf.vertices[e[:, 1]] - perf.vertices[e[:, 0]], axis=1)
    assert L[m == OUTER].sum() == pytest.approx(4.0, rel=1e-14)


def test_unresolvable_dirichlet_hole():
    spec = PerforationSpec(SQUARE, 0.25, BoundaryKind.dirichlet())  # a = e^-16 < 1e-6 diam
    with pytest.raises(GeometryError, match="unresolvable hole"):
        mesh_perforated(spec, 0.125)


def test_dirichlet_eighth_is_unresolvable():
    # a = e^-64 underflows neither the float range nor the radius rule
    spec = PerforationSpec(SQUARE, 0.125, BoundaryKind.dirichlet())
    with pytest.raises(GeometryError, match="unresolvable hole"):
        mesh_perforated(spec, 0.125)


def test_no_centres_gives_full_mesh():
    spec = PerforationSpec(SQUARE, 0.5, BoundaryKind.robin(1))
    assert lattice_centers(SQUARE, 0.5) == []
    a = mesh_perforated(spec, 0.25)
    b = mesh_full_domain(SQUARE, 0.25)
    assert sorted(map(tuple, a.vertices)) == sorted(map(tuple, b.vertices))
    assert a.n_triangles == b.n_triangles


def test_meshing_is_deterministic():
    spec = PerforationSpec(SQUARE, 0.125, BoundaryKind.robin(1))
    a = mesh_perforated(spec, 0.0625)
    b = mesh_perforated(spec, 0.0625)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)


def test_off_scaling_dirichlet_mesh():
    spec = PerforationSpec(SQUARE, 0.25, BoundaryKind.dirichlet(), radius_override=0.02)
    perf = mesh_perforated(spec, 0.125)
    assert audit_mesh(perf).ok()
    assert perf.hole_radius == 0.02


def test_strip_mesh():
    _, perf, full = cached_pair(0.25, 0.0625, 1.0, (8.0, 1.0))
    assert perf.n_holes == 15
    assert audit_mesh(perf).ok(grading=1.5) and audit_mesh(full).conforming


# paired full mesh ------------------------------------------------------------


def test_fill_holes_pairs_vertices(robin_pair_9):
    _, perf, full = robin_pair_9
    assert full.n_shared == perf.n_vertices
    assert np.array_equal(full.vertices[: perf.n_vertices], perf.vertices)
    assert full.areas().sum() == pytest.approx(1.0, abs=1e-13)
    rep = audit_mesh(full)
    assert rep.conforming and rep.oriented and rep.min_angle > 15
    assert full.areas()[full.in_hole].sum() == pytest.approx(ring_area(perf), rel=1e-12)
    assert np.all(full.edge_markers == OUTER)


# radial grids ----------------------------------------------------------------


def test_radial_grid_uniform():
    assert np.array_equal(radial_grid(1, 2, 2).nodes, [1, 1.5, 2])


def test_radial_grid_geometric_ratio():
    g = radial_grid(1, 100, 40, geometric=True)
    r = g.nodes[1:] / g.nodes[:-1]
    assert np.allclose(r, 100 ** (1 / 40), rtol=1e-12)
    assert g.nodes[-1] == 100


def test_radial_grid_reversed():
    with pytest.raises(ArgumentError):
        radial_grid(2, 1, 4)


# interpolation ---------------------------------------------------------------


def test_interpolate_identity(robin_pair):
    _, perf, _ = robin_pair
    u = np.random.default_rng(0).standard_normal(perf.n_vertices)
    assert np.array_equal(interpolate(u, perf, perf), u)


def test_interpolate_affine_exact_between_nested_meshes():
    coarse = mesh_full_domain(SQUARE, 0.25)
    fine = mesh_full_domain(SQUARE, 0.125)
    f = lambda x: 0.3 + 2 * x[:, 0] - 1.5 * x[:, 1]  # noqa: E731
    out = interpolate(f(coarse.vertices), coarse, fine)
    assert np.max(np.abs(out - f(fine.vertices))) <= 1e-13


def test_interpolate_affine_onto_perforated(robin_pair_9):
    _, perf, full = robin_pair_9
    f = lambda x: 1 - x[:, 0] + 3 * x[:, 1]  # noqa: E731
    out = interpolate(f(full.vertices), full, perf)
    assert np.max(np.abs(out - f(perf.vertices))) <= 1e-12


def test_interpolate_zero_at_hole_centre(robin_pair):
    _, perf, full = robin_pair
    u = np.ones(perf.n_vertices)
    out = interpolate(u, perf, full)
    centre = np.flatnonzero(np.all(np.isclose(full.vertices, [0.5, 0.5]), axis=1))
    assert len(centre) == 1 and out[centre[0]] == 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_interpolate_linear_and_bounded(seed):
    coarse = mesh_full_domain(SQUARE, 0.25)
    fine = mesh_full_domain(DomainSpec.unit_square(), 0.1)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, coarse.n_vertices))
    a, b = rng.standard_normal(2)
    Iu, Iv = interpolate(u, coarse, fine), interpolate(v, coarse, fine)
    assert np.allclose(interpolate(a * u + b * v, coarse, fine), a * Iu + b * Iv, atol=1e-12)
    assert np.abs(Iu).max() <= np.abs(u).max() * (1 + 1e-12)


def test_locate_outside():
    m = mesh_full_domain(SQUARE, 0.5)
    idx, _ = locate(m, [[2.0, 2.0], [0.25, 0.25]])
    assert idx[0] == -1 and idx[1] >= 0


# text format -----------------------------------------------------------------


def test_mesh_round_trip(tmp_path, robin_pair):
    _, perf, _ = robin_pair
    path = tmp_path / "m.pdmesh"
    write_mesh(perf, path)
    m = read_mesh(path)
    assert np.array_equal(m.vertices, perf.vertices)
    assert np.array_equal(m.triangles, perf.triangles)
    assert np.array_equal(m.boundary_edges, perf.boundary_edges)
    assert np.array_equal(m.edge_markers, perf.edge_markers)


def test_read_mesh_rejects_garbage(tmp_path):
    p = tmp_path / "bad.pdmesh"
    p.write_text("hello\n")
    with pytest.raises(ArgumentError):
        read_mesh(p)


def test_quality_csv(tmp_path, robin_pair):
    _, perf, full = robin_pair
    p = tmp_path / "q.csv"
    write_quality_csv([audit_mesh(perf), audit_mesh(full)], p)
    lines = p.read_text().splitlines()
    assert len(lines) == 3 and "min_angle" in lines[0]
