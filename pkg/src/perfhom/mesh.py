"""Triangulations of the box and of the perforated box.

The perforated mesher is a structured background grid whose lines run along
the lattice cell boundaries.  Every cell square is cut out and replaced by an
O-grid: rings of nodes that morph from the hole polygon (an inscribed regular
polygon) to the cell square, halving the node count outward so that the
element size grows geometrically from about ``a/4`` at the hole to the
background spacing.  The outermost ring *is* the set of background nodes on
the cell perimeter, so conformity holds by construction.

For every perforated mesh a paired full mesh is available from
:func:`fill_holes`: same vertices (same indices) outside the holes, plus a
triangulated disc inside each hole polygon.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .defaults import DEFAULTS
from .errors import ArgumentError, GeometryError, MeshError, ResourceError
from .geometry import DomainSpec, PerforationSpec, hole_radius, lattice_centers

log = logging.getLogger(__name__)

OUTER = -1  # boundary edge marker of the box boundary; holes use their index


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation.

    ``edge_markers[k]`` is :data:`OUTER` or the hole index of
    ``boundary_edges[k]``.  Perforated meshes also carry ``hole_rings``
    (vertex indices of each hole polygon, counterclockwise).  Full meshes
    paired with a perforated mesh carry ``n_shared`` (vertices ``0 ..
    n_shared-1`` are the perforated mesh's vertices) and ``in_hole`` (mask of
    triangles covering holes).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_markers: np.ndarray
    hole_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    hole_radius: float = 0.0
    hole_rings: tuple = ()
    n_shared: int | None = None
    in_hole: np.ndarray | None = None

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges", "edge_markers", "hole_centers", "in_hole"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_holes(self) -> int:
        return len(self.hole_centers)

    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    @property
    def sizes(self) -> np.ndarray:
        # sqrt(2*area) equals the leg of the right-isosceles triangle of that area
        return np.sqrt(2 * np.abs(self.areas()))

    @property
    def h_max(self) -> float:
        return float(self.sizes.max())

    @property
    def h_min(self) -> float:
        return float(self.sizes.min())

    def boundary_nodes(self, marker=None) -> np.ndarray:
        """Vertices on boundary edges; ``marker`` None (all), ``"outer"``,
        ``"hole"`` (all holes) or a hole index."""
        sel = _marker_mask(self, marker)
        return np.unique(self.boundary_edges[sel].ravel())


def _marker_mask(mesh: Mesh, marker) -> np.ndarray:
    m = mesh.edge_markers
    if marker is None or marker == "all":
        return np.ones(len(m), dtype=bool)
    if marker == "outer":
        return m == OUTER
    if marker == "hole":
        return m >= 0
    if isinstance(marker, (int, np.integer)) and not isinstance(marker, bool):
        if not 0 <= marker < max(mesh.n_holes, 1 + int(m.max(initial=-1))):
            raise ArgumentError(f"unknown boundary marker {marker!r}")
        return m == int(marker)
    raise ArgumentError(f"unknown boundary marker {marker!r}")


def triangle_areas(vertices, triangles) -> np.ndarray:
    """Signed areas (positive for counterclockwise triangles)."""
    p = np.asarray(vertices)[np.asarray(triangles)]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


@dataclass(frozen=True)
class RadialGrid:
    nodes: np.ndarray
    inner: str = "inner"
    outer: str = "outer"

    def __post_init__(self):
        arr = np.array(self.nodes, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "nodes", arr)

    @property
    def n(self) -> int:
        return len(self.nodes) - 1


def radial_grid(r_in: float, r_out: float, n: int, geometric: bool = False) -> RadialGrid:
    """``n+1`` radii from ``r_in`` to ``r_out``, uniform or with constant ratio."""
    if not (0 <= r_in < r_out) or not math.isfinite(r_out):
        raise ArgumentError(f"need 0 <= r_in < r_out, got {r_in}, {r_out}")
    if int(n) != n or n < 2:
        raise ArgumentError(f"need an integer n >= 2, got {n}")
    n = int(n)
    if geometric:
        if r_in <= 0:
            raise ArgumentError("geometric grid needs r_in > 0")
        nodes = r_in * (r_out / r_in) ** (np.arange(n + 1) / n)
    else:
        nodes = r_in + (r_out - r_in) * np.arange(n + 1) / n
    nodes[0], nodes[-1] = r_in, r_out
    return RadialGrid(nodes)


# ---------------------------------------------------------------------------
# quality audit


@dataclass(frozen=True)
class MeshQualityReport:
    min_angle: float
    max_angle: float
    max_aspect: float
    boundary_fit: float
    max_size_ratio: float
    min_area: float
    n_vertices: int
    n_triangles: int
    n_boundary_edges: int
    n_holes: int
    conforming: bool
    oriented: bool
    h_min: float
    h_max: float
    fit_limit: float = math.inf  # tol_geo_rel * a, floored at coordinate rounding

    def ok(self, min_angle: float = DEFAULTS["min_angle_deg"], grading: float | None = None) -> bool:
        good = self.conforming and self.oriented and self.min_angle >= min_angle - 1e-9
        good = good and self.boundary_fit <= self.fit_limit
        if grading is not None:
            good = good and self.max_size_ratio <= grading * (1 + 1e-9)
        return bool(good)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _edges(triangles):
    t = np.asarray(triangles)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    owner = np.tile(np.arange(len(t)), 3)
    key = np.sort(e, axis=1)
    return key, owner


def audit_mesh(mesh: Mesh) -> MeshQualityReport:
    """Recompute every quality figure of ``mesh`` from scratch."""
    v, t = mesh.vertices, mesh.triangles
    p = v[t]
    area = triangle_areas(v, t)
    lens = np.stack([np.linalg.norm(p[:, (i + 1) % 3] - p[:, i], axis=1) for i in range(3)], axis=1)
    # angle at vertex i is opposite edge (i+1)->(i+2)
    a = lens[:, 1]  # opposite vertex 0
    b = lens[:, 2]  # opposite vertex 1
    c = lens[:, 0]  # opposite vertex 2
    with np.errstate(invalid="ignore", divide="ignore"):
        cos0 = (b**2 + c**2 - a**2) / (2 * b * c)
        cos1 = (a**2 + c**2 - b**2) / (2 * a * c)
        cos2 = (a**2 + b**2 - c**2) / (2 * a * b)
    ang = np.degrees(np.arccos(np.clip(np.stack([cos0, cos1, cos2], axis=1), -1, 1)))
    perim = lens.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        inr = 2 * np.abs(area) / perim
        circ = lens.prod(axis=1) / (4 * np.abs(area))
        aspect = circ / (2 * inr)

    key, owner = _edges(t)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    conforming = bool(counts.max(initial=1) <= 2)
    bset = {tuple(e) for e in uniq[counts == 1]}
    marked = {tuple(sorted(e)) for e in mesh.boundary_edges.tolist()}
    conforming = conforming and bset == marked

    # size ratio across interior edges
    size = np.sqrt(2 * np.abs(area))
    ratio = 1.0
    shared = np.flatnonzero(counts == 2)
    if len(shared):
        order = np.argsort(inv, kind="stable")
        starts = np.searchsorted(inv[order], shared)
        t1 = owner[order[starts]]
        t2 = owner[order[starts + 1]]
        s1, s2 = size[t1], size[t2]
        ratio = float(np.max(np.maximum(s1, s2) / np.minimum(s1, s2)))

    fit = 0.0
    for k, c0 in enumerate(mesh.hole_centers):
        nodes = mesh.boundary_nodes(k)
        if len(nodes):
            r = np.linalg.norm(v[nodes] - c0, axis=1)
            fit = max(fit, float(np.max(np.abs(r - mesh.hole_radius))))
    fit_limit = math.inf
    if mesh.n_holes and len(v):
        fit_limit = DEFAULTS["tol_geo_rel"] * mesh.hole_radius + 4 * float(np.spacing(np.abs(v).max()))
    return MeshQualityReport(
        min_angle=float(np.nanmin(ang)) if len(t) else 0.0,
        max_angle=float(np.nanmax(ang)) if len(t) else 0.0,
        max_aspect=float(np.nanmax(aspect)) if len(t) else 0.0,
        boundary_fit=fit,
        max_size_ratio=ratio,
        min_area=float(area.min()) if len(t) else 0.0,
        n_vertices=len(v),
        n_triangles=len(t),
        n_boundary_edges=len(mesh.boundary_edges),
        n_holes=mesh.n_holes,
        conforming=conforming,
        oriented=bool(np.all(area > 0)),
        h_min=float(size.min()) if len(t) else 0.0,
        h_max=float(size.max()) if len(t) else 0.0,
        fit_limit=fit_limit,
    )


def write_quality_csv(reports, path) -> None:
    """Write one row per report (a single report is accepted too)."""
    if isinstance(reports, MeshQualityReport):
        reports = [reports]
    reports = list(reports)
    cols = list(MeshQualityReport.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in reports:
            w.writerow([repr(getattr(r, c)) if isinstance(getattr(r, c), float) else getattr(r, c) for c in cols])


# ---------------------------------------------------------------------------
# full domain


def _cap(n_tri: int, max_triangles) -> None:
    cap = DEFAULTS["max_triangles"] if max_triangles is None else max_triangles
    if n_tri > cap:
        raise ResourceError(f"mesh would have {n_tri} triangles, above the cap of {cap}")


def _grid_triangles(nx: int, ny: int, skip=None) -> np.ndarray:
    """Two triangles per grid square, diagonal from lower left to upper right.

    Vertex ``(i, j)`` has index ``i*(ny+1) + j``.  ``skip`` is an optional
    boolean (nx, ny) mask of squares to leave out.
    """
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    keep = np.ones((nx, ny), dtype=bool) if skip is None else ~skip
    i, j = i[keep], j[keep]
    v00 = i * (ny + 1) + j
    v10 = v00 + (ny + 1)
    v11 = v10 + 1
    v01 = v00 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    return np.stack([lower, upper], axis=1).reshape(-1, 3)


def _grid_outer_edges(nx: int, ny: int) -> np.ndarray:
    idx = lambda i, j: i * (ny + 1) + j  # noqa: E731
    edges = []
    for i in range(nx):
        edges.append((idx(i, 0), idx(i + 1, 0)))
        edges.append((idx(i + 1, ny), idx(i, ny)))
    for j in range(ny):
        edges.append((idx(nx, j), idx(nx, j + 1)))
        edges.append((idx(0, j + 1), idx(0, j)))
    return np.array(edges, dtype=np.int64)


def mesh_full_domain(domain: DomainSpec, h: float, max_triangles=None) -> Mesh:
    """Structured mesh of the box: ``ceil(L/h)`` squares per axis, two
    triangles per square, so every triangle leg is at most ``h``."""
    if domain.dim != 2:
        raise ArgumentError("only two-dimensional domains can be meshed")
    h = float(h)
    if not h > 0 or not math.isfinite(h):
        raise ArgumentError(f"mesh size must be positive, got {h}")
    if h >= min(domain.box):
        raise ArgumentError(f"mesh size {h} is not below the smallest box extent {min(domain.box)}")
    nx, ny = (int(math.ceil(L / h - 1e-12)) for L in domain.box)
    _cap(2 * nx * ny, max_triangles)
    x = np.linspace(0.0, domain.box[0], nx + 1)
    y = np.linspace(0.0, domain.box[1], ny + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    tris = _grid_triangles(nx, ny)
    edges = _grid_outer_edges(nx, ny)
    return Mesh(verts, tris, edges, np.full(len(edges), OUTER, dtype=np.int64))


# ---------------------------------------------------------------------------
# perforated domain


def hole_segments(tol_rel: float = DEFAULTS["hole_area_tol_rel"],
                  min_segments: int = DEFAULTS["min_hole_segments"]) -> int:
    """Smallest segment count whose inscribed polygon meets the area defect.

    Starts from ``max(min_segments, ceil(2*pi/sqrt(8*tol)))`` and increases
    until ``1 - n*sin(2*pi/n)/(2*pi) <= tol``.
    """
    if not tol_rel > 0:
        raise ArgumentError("area tolerance must be positive")
    n = max(int(min_segments), int(math.ceil(2 * math.pi / math.sqrt(8 * tol_rel))))
    while polygon_area_defect(n) > tol_rel:
        n += 1
    return n


def polygon_area_defect(n: int) -> float:
    """Relative area lost by an inscribed regular n-gon."""
    return 1.0 - n * math.sin(2 * math.pi / n) / (2 * math.pi)


def _square_point(s):
    """Perimeter-uniform point on the square [-1,1]^2, s in [0,1), starting at
    (1, 0) and running counterclockwise."""
    q = np.mod(8 * np.asarray(s, dtype=float) + 1, 8)  # perimeter coordinate from corner (1,-1)
    side = np.minimum(np.floor(q / 2).astype(int), 3)
    tpar = q - 2 * side  # in [0, 2]
    x = np.empty_like(q)
    y = np.empty_like(q)
    m = side == 0
    x[m], y[m] = 1.0, -1.0 + tpar[m]
    m = side == 1
    x[m], y[m] = 1.0 - tpar[m], 1.0
    m = side == 2
    x[m], y[m] = -1.0, 1.0 - tpar[m]
    m = side == 3
    x[m], y[m] = -1.0 + tpar[m], -1.0
    return np.stack([x, y], axis=-1)


@dataclass
class _RingPlan:
    radii: np.ndarray  # r_0 = a ... r_L = eps
    counts: np.ndarray  # node count per ring
    blend: np.ndarray  # circle -> square blend per ring


def _plan_rings(a, eps, n_outer, n_hole, grading):
    """Radii and node counts of one O-grid, or None if the halvings do not fit."""
    m = int(round(math.log2(n_hole // n_outer)))
    lam = math.log(eps / a)
    counts = [n_hole >> l for l in range(m + 1)]
    delta = np.array([math.log1p(2 * math.sin(math.pi / N)) for N in counts])
    cap = math.log(grading) * 0.95
    share = lam * delta / delta.sum()
    n_layers = []
    for l in range(m + 1):
        n = max(1, int(round(share[l] / delta[l])))
        if share[l] / n > cap:
            n = int(math.ceil(share[l] / cap))
        n_layers.append(n)
    steps = [share[l] / n_layers[l] for l in range(m + 1)]
    # a radial step much shorter than the tangential spacing gives slivers
    if min(steps[l] / delta[l] for l in range(m + 1)) < 0.55 and m > 0:
        return None
    if m == 0 and steps[0] / delta[0] < 0.55:
        return None
    logr = [math.log(a)]
    ring_counts = [counts[0]]
    for l in range(m + 1):
        for _ in range(n_layers[l]):
            logr.append(logr[-1] + steps[l])
            ring_counts.append(counts[l])
    logr[-1] = math.log(eps)
    radii = np.exp(np.array(logr))
    radii[0], radii[-1] = a, eps
    x = (np.array(logr) - math.log(a)) / lam
    blend = np.clip(x, 0, 1) ** 2
    blend[0], blend[-1] = 0.0, 1.0
    return _RingPlan(radii, np.array(ring_counts), blend)


def _layer_triangles(inner, outer):
    """Triangles between two closed rings of node indices (counterclockwise,
    index 0 at angle 0).  Counts must be equal or differ by a factor two."""
    ni, no = len(inner), len(outer)
    tris = []
    if ni == no:
        for i in range(ni):
            j = (i + 1) % ni
            tris.append(("q", inner[i], inner[j], outer[j], outer[i]))
    elif ni == 2 * no:
        for j in range(no):
            f0, f1, f2 = inner[2 * j], inner[2 * j + 1], inner[(2 * j + 2) % ni]
            c0, c1 = outer[j], outer[(j + 1) % no]
            tris += [(f0, f1, c0), (f1, c1, c0), (f1, f2, c1)]
    elif no == 2 * ni:
        for j in range(ni):
            f0, f1, f2 = outer[2 * j], outer[2 * j + 1], outer[(2 * j + 2) % no]
            c0, c1 = inner[j], inner[(j + 1) % ni]
            tris += [(f0, c0, f1), (f1, c0, c1), (f1, c1, f2)]
    else:
        raise MeshError(f"cannot join rings of {ni} and {no} nodes")
    return tris


def _resolve_quads(items, verts):
    out = []
    for it in items:
        if it[0] != "q":
            out.append(it)
            continue
        _, i0, i1, o1, o0 = it
        d1 = np.linalg.norm(verts[i0] - verts[o1])
        d2 = np.linalg.norm(verts[i1] - verts[o0])
        if d1 <= d2:
            out += [(i0, i1, o1), (i0, o1, o0)]
        else:
            out += [(i0, i1, o0), (i1, o1, o0)]
    return out


def _orient(verts, tris):
    tris = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    if len(tris) == 0:
        return tris
    neg = triangle_areas(verts, tris) < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def _axis_nodes(length, lo, hi, ncell, k):
    """Background node coordinates along one axis: frame, cells, frame."""
    s_cell = (hi - lo) / (ncell * k)
    parts = []
    if lo > 0:
        n = max(1, int(math.ceil(lo / s_cell - 1e-9)))
        parts.append(np.linspace(0.0, lo, n + 1)[:-1])
    parts.append(lo + (hi - lo) * np.arange(ncell * k) / (ncell * k))
    if hi < length:
        n = max(1, int(math.ceil((length - hi) / s_cell - 1e-9)))
        parts.append(np.linspace(hi, length, n + 1))
    else:
        parts.append(np.array([length]))
    nodes = np.concatenate(parts)
    first_cell = 0 if lo <= 0 else len(parts[0])
    return nodes, first_cell


def _perimeter_walk(k):
    """Grid offsets (0..k) of the 4k cell-perimeter nodes, counterclockwise
    starting at the midpoint of the right edge."""
    h = k // 2
    pts = []
    pts += [(k, h + t) for t in range(0, k - h)]
    pts += [(k - t, k) for t in range(0, k)]
    pts += [(0, k - t) for t in range(0, k)]
    pts += [(t, 0) for t in range(0, k)]
    pts += [(k, t) for t in range(0, h)]
    return pts


def _build_perforated(domain, centers, a, eps, k, n_hole, grading, max_triangles):
    n_outer = 4 * k
    plan = _plan_rings(a, eps, n_outer, n_hole, grading)
    if plan is None:
        return None
    c = np.asarray(centers)
    lo = c.min(axis=0) - eps
    hi = c.max(axis=0) + eps
    ncell = np.rint((hi - lo) / (2 * eps)).astype(int)
    xs, fx = _axis_nodes(domain.box[0], lo[0], hi[0], ncell[0], k)
    ys, fy = _axis_nodes(domain.box[1], lo[1], hi[1], ncell[1], k)
    nx, ny = len(xs) - 1, len(ys) - 1

    ring_tris = int(sum(plan.counts[1:] + np.minimum(plan.counts[:-1], plan.counts[1:])))
    est = 2 * nx * ny + len(c) * (ring_tris - 2 * k * k)
    _cap(est, max_triangles)

    X, Y = np.meshgrid(xs, ys, indexing="ij")
    bg = np.stack([X.ravel(), Y.ravel()], axis=1)
    skip = np.zeros((nx, ny), dtype=bool)
    cell_ij = []
    for ci in c:
        mi = int(round((ci[0] - eps - lo[0]) / (2 * eps)))
        mj = int(round((ci[1] - eps - lo[1]) / (2 * eps)))
        i0, j0 = fx + mi * k, fy + mj * k
        skip[i0:i0 + k, j0:j0 + k] = True
        cell_ij.append((i0, j0))
    # nodes strictly inside cell squares are unused
    used = np.ones((nx + 1, ny + 1), dtype=bool)
    for i0, j0 in cell_ij:
        used[i0 + 1:i0 + k, j0 + 1:j0 + k] = False
    tris = [_grid_triangles(nx, ny, skip)]
    verts = [bg]
    nv = len(bg)
    walk = _perimeter_walk(k)
    rings = []
    s_outer = np.arange(n_outer) / n_outer
    for ci, (i0, j0) in zip(c, cell_ij):
        outer = np.array([(i0 + di) * (ny + 1) + (j0 + dj) for di, dj in walk], dtype=np.int64)
        ring_idx = []
        new_pts = []
        for r, N, beta in zip(plan.radii[:-1], plan.counts[:-1], plan.blend[:-1]):
            s = np.arange(N) / N
            circ = np.stack([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)], axis=1)
            shape = (1 - beta) * circ + beta * _square_point(s)
            new_pts.append(ci + r * shape)
            ring_idx.append(np.arange(nv, nv + N))
            nv += N
        ring_idx.append(outer)
        pts = np.concatenate(new_pts)
        verts.append(pts)
        allv = np.concatenate(verts)
        assert np.allclose(allv[outer], ci + eps * _square_point(s_outer), atol=1e-9 * max(1.0, eps))
        items = []
        for inner_r, outer_r in zip(ring_idx[:-1], ring_idx[1:]):
            items += _layer_triangles(inner_r, outer_r)
        tris.append(_orient(allv, _resolve_quads(items, allv)))
        rings.append(ring_idx[0])

    verts = np.concatenate(verts)
    tris = np.concatenate(tris)
    tris = _orient(verts, tris)
    edges = [_outer_edges_general(xs, ys)]
    markers = [np.full(len(edges[0]), OUTER, dtype=np.int64)]
    for hid, ring in enumerate(rings):
        e = np.stack([np.roll(ring, -1), ring], axis=1)  # clockwise: domain on the left
        edges.append(e)
        markers.append(np.full(len(e), hid, dtype=np.int64))
    edges = np.concatenate(edges)
    markers = np.concatenate(markers)

    keep = np.ones(len(verts), dtype=bool)
    keep[: len(bg)] = used.ravel()
    return _canonical(verts, tris, edges, markers, keep, c, a, rings)


def _outer_edges_general(xs, ys):
    return _grid_outer_edges(len(xs) - 1, len(ys) - 1)


def _canonical(verts, tris, edges, markers, keep, centers, a, rings):
    """Drop unused vertices and sort everything lexicographically."""
    idx = np.flatnonzero(keep)
    sub = verts[idx]
    order = np.lexsort((sub[:, 1], sub[:, 0]))
    new = np.full(len(verts), -1, dtype=np.int64)
    new[idx[order]] = np.arange(len(idx))
    v = sub[order]
    t = new[tris]
    e = new[edges]
    if (t < 0).any() or (e < 0).any():
        raise MeshError("internal error: triangle references a dropped vertex")
    t = _canon_rows(t, rotate=True)
    # edges keep their direction; sort by (marker, min index)
    eorder = np.lexsort((e.max(axis=1), e.min(axis=1), markers))
    rings = tuple(new[r] for r in rings)
    for r in rings:
        r.setflags(write=False)
    return Mesh(v, t, e[eorder], markers[eorder], np.asarray(centers, dtype=float).reshape(-1, 2), float(a), rings)


def _canon_rows(t, rotate=True):
    t = np.asarray(t)
    if len(t) == 0:
        return t
    if rotate:
        shift = np.argmin(t, axis=1)
        rows = np.arange(len(t))[:, None]
        t = t[rows, (shift[:, None] + np.arange(3)) % 3]
    order = np.lexsort(t.T[::-1])
    return t[order]


def choose_background(eps, a, h_far, grading, tol_rel, min_segments, element_factor):
    """Initial cells-per-side ``k`` and hole node count for the O-grids."""
    n_min = hole_segments(tol_rel, min_segments)
    n_min = max(n_min, int(math.ceil(2 * math.pi / element_factor)))
    k = max(2, 2 * int(math.ceil(eps / h_far - 1e-9)))
    if grading < 1.42:
        # no room for halving layers: put enough nodes on the cell square
        k = max(k, 2 * int(math.ceil(n_min / 8)))
    return k, n_min


def mesh_perforated(spec: PerforationSpec, h_far: float, grading: float = DEFAULTS["grading"], *,
                    tol_rel: float = DEFAULTS["hole_area_tol_rel"],
                    min_segments: int = DEFAULTS["min_hole_segments"],
                    element_factor: float = DEFAULTS["hole_element_factor"],
                    floor_rel: float = DEFAULTS["resolvable_floor_rel"],
                    min_angle: float = DEFAULTS["min_angle_deg"],
                    max_triangles=None, max_attempts: int = 6) -> Mesh:
    """Graded triangulation of the perforated box ``Omega_eps``."""
    domain = spec.domain
    if domain.dim != 2:
        raise ArgumentError("only two-dimensional domains can be meshed")
    if not 1 < grading <= 2:
        raise ArgumentError(f"grading must lie in (1, 2], got {grading}")
    h_far = float(h_far)
    if not h_far > 0:
        raise ArgumentError("h_far must be positive")
    eps = spec.epsilon
    centers = lattice_centers(domain, eps)
    if not centers:
        return mesh_full_domain(domain, h_far, max_triangles)
    a = hole_radius(spec)
    floor = floor_rel * domain.diameter
    if a < floor:
        raise GeometryError(f"unresolvable hole: radius {a:.3e} below floor {floor:.1e} at eps={eps}")
    k, n_min = choose_background(eps, a, h_far, grading, tol_rel, min_segments, element_factor)
    report = None
    for attempt in range(max_attempts):
        n_outer = 4 * k
        n_hole = n_outer
        while n_hole < n_min:
            n_hole *= 2
        if grading < 1.42 and n_hole != n_outer:
            k *= 2
            continue
        mesh = _build_perforated(domain, centers, a, eps, k, n_hole, grading, max_triangles)
        if mesh is not None:
            report = audit_mesh(mesh)
            if report.ok(min_angle, grading):
                log.debug("perforated mesh eps=%g k=%d n_hole=%d: %d triangles", eps, k, n_hole, mesh.n_triangles)
                return mesh
            log.debug("mesh attempt k=%d failed audit: %s", k, report)
        k *= 2
    raise MeshError(f"could not mesh eps={eps} with grading {grading} and min angle {min_angle}", report)


# ---------------------------------------------------------------------------
# hole filling (paired full mesh)


def fill_holes(perforated: Mesh) -> Mesh:
    """Full-domain mesh sharing every vertex of ``perforated`` (same indices)
    and triangulating each hole polygon with concentric halving rings and a
    central fan."""
    if perforated.n_holes == 0 or not perforated.hole_rings:
        return Mesh(perforated.vertices, perforated.triangles, perforated.boundary_edges,
                    perforated.edge_markers, n_shared=perforated.n_vertices,
                    in_hole=np.zeros(perforated.n_triangles, dtype=bool))
    v0 = perforated.vertices
    nv = len(v0)
    new_pts, new_tris = [], []
    a = perforated.hole_radius
    for c, ring in zip(perforated.hole_centers, perforated.hole_rings):
        cur = np.asarray(ring)
        N = len(cur)
        r = a
        pts_local = []
        local_tris = []
        allv = [v0[cur]]  # only used for geometry when choosing diagonals
        while N > 16 and N % 2 == 0:
            rn = r / (1 + 4 * math.sin(math.pi / N))
            Nn = N // 2
            s = np.arange(Nn) / Nn
            p = c + rn * np.stack([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)], axis=1)
            idx = np.arange(nv, nv + Nn)
            nv += Nn
            pts_local.append(p)
            local_tris += _layer_triangles(idx, cur)
            cur, N, r = idx, Nn, rn
        cidx = nv
        nv += 1
        pts_local.append(np.asarray(c)[None, :])
        for i in range(N):
            local_tris.append((cidx, cur[i], cur[(i + 1) % N]))
        new_pts += pts_local
        new_tris += local_tris
        del allv
    verts = np.concatenate([v0] + new_pts)
    hole_t = _orient(verts, _resolve_quads(new_tris, verts))
    # canonical order for the appended vertices and triangles
    extra = verts[len(v0):]
    order = np.lexsort((extra[:, 1], extra[:, 0]))
    remap = np.arange(len(verts))
    remap[len(v0) + order] = len(v0) + np.arange(len(extra))
    verts = np.concatenate([v0, extra[order]])
    hole_t = _canon_rows(remap[hole_t])
    tris = np.concatenate([perforated.triangles, hole_t])
    outer = perforated.edge_markers == OUTER
    in_hole = np.concatenate([np.zeros(perforated.n_triangles, bool), np.ones(len(hole_t), bool)])
    return Mesh(verts, tris, perforated.boundary_edges[outer], perforated.edge_markers[outer],
                perforated.hole_centers, perforated.hole_radius, perforated.hole_rings,
                n_shared=len(v0), in_hole=in_hole)


def mesh_pair(spec: PerforationSpec, h_far: float, grading: float = DEFAULTS["grading"], **kw):
    """Perforated mesh and its paired full mesh."""
    perf = mesh_perforated(spec, h_far, grading, **kw)
    return perf, fill_holes(perf)


# ---------------------------------------------------------------------------
# interpolation


def locate(mesh: Mesh, points, tol: float = 1e-10):
    """Containing triangle and barycentric coordinates; -1 when outside."""
    import matplotlib.tri as mtri

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v, t = mesh.vertices, mesh.triangles
    tri_idx = np.full(len(pts), -1, dtype=np.int64)
    try:
        finder = mtri.Triangulation(v[:, 0], v[:, 1], t).get_trifinder()
        tri_idx = np.asarray(finder(pts[:, 0], pts[:, 1]), dtype=np.int64)
    except (ValueError, RuntimeError):
        pass
    bary = np.zeros((len(pts), 3))
    ok = tri_idx >= 0
    if ok.any():
        bary[ok] = _barycentric(v, t[tri_idx[ok]], pts[ok])
        bad = np.any(bary[ok] < -tol * 10, axis=1)
        sel = np.flatnonzero(ok)[bad]
        tri_idx[sel] = -1
    miss = np.flatnonzero(tri_idx < 0)
    if len(miss):
        tri_idx[miss], bary[miss] = _locate_brute(v, t, pts[miss], tol)
    return tri_idx, bary


def _barycentric(v, tris, pts):
    p0, p1, p2 = v[tris[:, 0]], v[tris[:, 1]], v[tris[:, 2]]
    d1, d2, dp = p1 - p0, p2 - p0, pts - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (dp[:, 0] * d2[:, 1] - dp[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * dp[:, 1] - d1[:, 1] * dp[:, 0]) / det
    return np.stack([1 - l1 - l2, l1, l2], axis=1)


def _locate_brute(v, t, pts, tol):
    """Fallback search among triangles near each point (handles points on
    edges that the trifinder may miss)."""
    from scipy.spatial import cKDTree

    cent = v[t].mean(axis=1)
    rad = np.max(np.linalg.norm(v[t] - cent[:, None, :], axis=2), axis=1)
    tree = cKDTree(cent)
    rmax = float(rad.max()) * (1 + 1e-9) + 1e-14
    idx = np.full(len(pts), -1, dtype=np.int64)
    bary = np.zeros((len(pts), 3))
    for n, p in enumerate(pts):
        cand = np.asarray(tree.query_ball_point(p, rmax), dtype=np.int64)
        if len(cand) == 0:
            continue
        b = _barycentric(v, t[cand], np.repeat(p[None, :], len(cand), axis=0))
        worst = b.min(axis=1)
        best = int(np.argmax(worst))
        if worst[best] >= -tol:
            idx[n] = cand[best]
            bary[n] = np.clip(b[best], 0, None)
            bary[n] /= bary[n].sum()
    return idx, bary


def interpolate(u, source: Mesh, target: Mesh) -> np.ndarray:
    """P1 interpolation of ``u`` (nodal on ``source``) at ``target``'s
    vertices; vertices outside the source mesh get 0."""
    u = np.asarray(u)
    if u.shape[0] != source.n_vertices:
        raise ArgumentError("field length does not match the source mesh")
    if source is target:
        return u.copy()
    tri_idx, bary = locate(source, target.vertices)
    out = np.zeros((target.n_vertices,) + u.shape[1:], dtype=u.dtype if np.iscomplexobj(u) else float)
    ok = tri_idx >= 0
    nodes = source.triangles[tri_idx[ok]]
    out[ok] = np.einsum("ij,ij...->i...", bary[ok], u[nodes])
    return out


# ---------------------------------------------------------------------------
# text format


def _marker_text(m: int) -> str:
    return "outer" if m == OUTER else f"hole:{m}"


def write_mesh(mesh: Mesh, path) -> None:
    lines = ["pdmesh 1", f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"boundary_edges {len(mesh.boundary_edges)}")
    lines += [f"{i} {j} {_marker_text(m)}" for (i, j), m in zip(mesh.boundary_edges.tolist(), mesh.edge_markers.tolist())]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    if not rows or rows[0] != ["pdmesh", "1"]:
        raise ArgumentError(f"{path}: not a pdmesh 1 file")
    pos = 1

    def section(name):
        nonlocal pos
        head = rows[pos]
        if len(head) != 2 or head[0] != name:
            raise ArgumentError(f"{path}: expected section {name!r}, found {' '.join(head)!r}")
        n = int(head[1])
        body = rows[pos + 1:pos + 1 + n]
        if len(body) != n:
            raise ArgumentError(f"{path}: section {name!r} is truncated")
        pos += 1 + n
        return body

    verts = np.array([[float(x) for x in r] for r in section("vertices")]).reshape(-1, 2)
    tris = np.array([[int(x) for x in r] for r in section("triangles")], dtype=np.int64).reshape(-1, 3)
    body = section("boundary_edges")
    edges = np.array([[int(r[0]), int(r[1])] for r in body], dtype=np.int64).reshape(-1, 2)
    markers = []
    for r in body:
        if r[2] == "outer":
            markers.append(OUTER)
        elif r[2].startswith("hole:"):
            markers.append(int(r[2][5:]))
        else:
            raise ArgumentError(f"{path}: bad boundary marker {r[2]!r}")
    return Mesh(verts, tris, edges, np.array(markers, dtype=np.int64))
