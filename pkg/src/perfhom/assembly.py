"""P1 finite-element matrices and the discrete operators built from them.

For a perforated mesh the operator ``A_eps`` is ``-Laplace + 1`` with the
boundary condition on the hole (and outer) boundary; on a full mesh the limit
``A = -Laplace + 1 + mu`` is obtained by passing the strange term ``mu``.  A
``shift`` ``c`` turns the zero-order coefficient into ``c + 1 + mu``; ``c = -1``
gives the ``B = A - I`` form used for semigroups.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, AssemblyError
from .geometry import BCType, BoundaryKind
from .mesh import Mesh, _marker_mask, hole_segments, triangle_areas

log = logging.getLogger(__name__)


class SparseMatrix:
    """Compressed-row matrix with a symmetry flag.

    Thin wrapper around :class:`scipy.sparse.csr_matrix` that keeps column
    indices sorted and drops explicit zeros.  ``symmetry`` is one of
    ``"hermitian"``, ``"complex-symmetric"`` or ``"none"``.
    """

    def __init__(self, matrix, symmetry: str = "none"):
        m = sp.csr_matrix(matrix)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        if symmetry not in ("hermitian", "complex-symmetric", "none"):
            raise ArgumentError(f"unknown symmetry flag {symmetry!r}")
        self.csr = m
        self.symmetry = symmetry

    @property
    def shape(self):
        return self.csr.shape

    @property
    def indptr(self):
        return self.csr.indptr

    @property
    def indices(self):
        return self.csr.indices

    @property
    def data(self):
        return self.csr.data

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def __matmul__(self, x):
        return self.csr @ x

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def check_symmetry(self, tol: float = 1e-12) -> bool:
        """Verify the flag: ``A == A^H`` or ``A == A^T`` up to ``tol * max|A|``."""
        if self.symmetry == "none":
            return True
        other = self.csr.conj().T if self.symmetry == "hermitian" else self.csr.T
        diff = abs(self.csr - other)
        scale = max(abs(self.csr).max(), 1e-300) if self.nnz else 1.0
        return bool(diff.max() <= tol * scale) if diff.nnz else True

    def export_coo(self, path) -> None:
        """Write ``row col re im`` per stored entry."""
        coo = self.csr.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write(f"# {self.shape[0]} {self.shape[1]} {self.symmetry}\n")
            for k in order:
                z = complex(coo.data[k])
                fh.write(f"{coo.row[k]} {coo.col[k]} {z.real!r} {z.imag!r}\n")


def _gradients(mesh: Mesh):
    """Barycentric gradients (n_tri, 3, 2) and areas."""
    v, t = mesh.vertices, mesh.triangles
    area = triangle_areas(v, t)
    if len(t) and not np.all(area > 0):
        bad = int(np.argmin(area))
        raise AssemblyError(f"degenerate or inverted triangle {bad} (area {area[bad]:.3e})")
    p = v[t]
    # grad lambda_i = rot90(p_{i+2} - p_{i+1}) / (2*area)
    grads = np.empty((len(t), 3, 2))
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    grads /= (2 * area)[:, None, None]
    return grads, area


def _scatter(mesh: Mesh, local: np.ndarray, n=None) -> sp.csr_matrix:
    t = mesh.triangles
    n = mesh.n_vertices if n is None else n
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_stiffness(mesh: Mesh, mask=None) -> SparseMatrix:
    """``int grad u . grad v`` (optionally only over triangles in ``mask``)."""
    grads, area = _gradients(mesh)
    local = np.einsum("tik,tjk->tij", grads, grads) * area[:, None, None]
    if mask is not None:
        local = local * np.asarray(mask, dtype=float)[:, None, None]
    return SparseMatrix(_scatter(mesh, local), "hermitian")


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh: Mesh, mask=None) -> SparseMatrix:
    """``int u v`` with the exact P1 element mass ``area/12 * [[2,1,1],...]``."""
    _, area = _gradients(mesh)
    if mask is not None:
        area = area * np.asarray(mask, dtype=float)
    local = area[:, None, None] * _MASS_REF[None]
    return SparseMatrix(_scatter(mesh, local), "hermitian")


def assemble_boundary_mass(mesh: Mesh, marker=None) -> SparseMatrix:
    """Exact ``int_edge u v dS`` summed over edges carrying ``marker``
    (``"outer"``, ``"hole"``, a hole index, or None for all)."""
    n = mesh.n_vertices
    if len(mesh.boundary_edges) == 0:
        if marker not in (None, "all", "outer", "hole"):
            raise ArgumentError(f"unknown boundary marker {marker!r}")
        return SparseMatrix(sp.csr_matrix((n, n)), "hermitian")
    sel = _marker_mask(mesh, marker)
    e = mesh.boundary_edges[sel]
    L = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    local = L[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)[None]
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    return SparseMatrix(sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n)), "hermitian")


@dataclass(frozen=True)
class WeightSpec:
    """The weight ``omega(x) = cosh(|x - x0|)``; ``omega >= 1`` and
    ``|grad omega| <= omega``."""

    center: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def omega(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.cosh(np.linalg.norm(x - np.asarray(self.center), axis=-1))


def _midpoint_weights(mesh: Mesh, w: WeightSpec) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    mids = np.stack([(p[:, 0] + p[:, 1]) / 2, (p[:, 1] + p[:, 2]) / 2, (p[:, 2] + p[:, 0]) / 2], axis=1)
    return w.omega(mids)  # (n_tri, 3) values at edge midpoints m01, m12, m20


# basis values at the edge midpoints m01, m12, m20
_PHI_MID = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def assemble_weighted_mass(mesh: Mesh, w: WeightSpec) -> SparseMatrix:
    """``int u v omega`` with the edge-midpoint rule (exact for quadratics,
    ``omega`` sampled at the three midpoints)."""
    _, area = _gradients(mesh)
    om = _midpoint_weights(mesh, w)
    # local_ij = area/3 * sum_q om_q phi_i(q) phi_j(q)
    local = np.einsum("tq,qi,qj->tij", om, _PHI_MID, _PHI_MID) * (area / 3)[:, None, None]
    return SparseMatrix(_scatter(mesh, local), "hermitian")


def assemble_weighted_stiffness(mesh: Mesh, w: WeightSpec) -> SparseMatrix:
    """``int grad u . grad v omega`` with the same midpoint rule."""
    grads, area = _gradients(mesh)
    om = _midpoint_weights(mesh, w).mean(axis=1)
    local = np.einsum("tik,tjk->tij", grads, grads) * (area * om)[:, None, None]
    return SparseMatrix(_scatter(mesh, local), "hermitian")


@dataclass(eq=False)
class DiscreteOperator:
    """Discrete ``-Laplace + (c + 1 + mu)`` with boundary conditions.

    ``bc`` acts on hole edges, ``outer_bc`` on the box boundary (defaults to
    ``bc``).  Dirichlet nodes are eliminated: :attr:`system` and
    :attr:`mass_free` act on the ``free`` nodes only.
    """

    mesh: Mesh
    K: SparseMatrix
    Mass: SparseMatrix
    R_hole: SparseMatrix
    R_outer: SparseMatrix
    bc: BoundaryKind
    outer_bc: BoundaryKind
    shift: complex
    mu: complex
    dirichlet_nodes: np.ndarray
    free: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def zero_order(self) -> complex:
        return complex(self.shift) + 1 + complex(self.mu)

    def full_matrix(self) -> sp.csr_matrix:
        """System matrix on all nodes, before elimination."""
        if "full" not in self._cache:
            A = self.K.csr + self.zero_order * self.Mass.csr
            a_h = self.bc.robin_coefficient
            a_o = self.outer_bc.robin_coefficient
            if a_h != 0:
                A = A + a_h * self.R_hole.csr
            if a_o != 0:
                A = A + a_o * self.R_outer.csr
            self._cache["full"] = sp.csr_matrix(A, dtype=complex)
        return self._cache["full"]

    @property
    def symmetry(self) -> str:
        coeffs = [self.zero_order, self.bc.robin_coefficient, self.outer_bc.robin_coefficient]
        return "hermitian" if all(complex(z).imag == 0 for z in coeffs) else "complex-symmetric"

    @property
    def system(self) -> SparseMatrix:
        if "system" not in self._cache:
            A = self.full_matrix()[self.free][:, self.free]
            self._cache["system"] = SparseMatrix(A, self.symmetry)
        return self._cache["system"]

    @property
    def mass_free(self) -> SparseMatrix:
        if "mass" not in self._cache:
            self._cache["mass"] = SparseMatrix(self.Mass.csr[self.free][:, self.free], "hermitian")
        return self._cache["mass"]

    def restrict(self, x) -> np.ndarray:
        return np.asarray(x)[self.free]

    def expand(self, x) -> np.ndarray:
        x = np.asarray(x)
        out = np.zeros((self.n,) + x.shape[1:], dtype=x.dtype)
        out[self.free] = x
        return out

    def boundary_form(self) -> sp.csr_matrix:
        """``R`` weighted so that the Robin part of the system is ``alpha*R``
        when hole and outer boundaries share one coefficient."""
        return self.R_hole.csr + self.R_outer.csr


def build_operator(mesh: Mesh, bc: BoundaryKind, mu: complex = 0.0, shift: complex = 0.0,
                   outer_bc: BoundaryKind | None = None) -> DiscreteOperator:
    """Assemble ``K + (c + 1 + mu) M + alpha (R_hole + R_outer)`` with
    Dirichlet nodes eliminated."""
    if not isinstance(bc, BoundaryKind):
        raise ArgumentError("bc must be a BoundaryKind")
    if bc.kind is BCType.ROBIN and bc.alpha == 0:
        raise ArgumentError("Robin coefficient alpha must be non-zero")
    outer_bc = bc if outer_bc is None else outer_bc
    K = assemble_stiffness(mesh)
    M = assemble_mass(mesh)
    Rh = assemble_boundary_mass(mesh, "hole")
    Ro = assemble_boundary_mass(mesh, "outer")
    fixed = []
    if bc.kind is BCType.DIRICHLET:
        fixed.append(mesh.boundary_nodes("hole"))
    if outer_bc.kind is BCType.DIRICHLET:
        fixed.append(mesh.boundary_nodes("outer"))
    dirichlet = np.unique(np.concatenate(fixed)) if fixed else np.zeros(0, dtype=np.int64)
    free = np.setdiff1d(np.arange(mesh.n_vertices), dirichlet)
    return DiscreteOperator(mesh, K, M, Rh, Ro, bc, outer_bc, complex(shift), complex(mu),
                            dirichlet.astype(np.int64), free.astype(np.int64))


# ---------------------------------------------------------------------------
# identification operators


def _check_pair(perf: Mesh, full: Mesh) -> None:
    if full.n_shared is None or full.n_shared != perf.n_vertices:
        raise ArgumentError("full mesh is not paired with this perforated mesh")
    if not np.array_equal(full.vertices[: full.n_shared], perf.vertices):
        raise ArgumentError("paired meshes disagree on shared vertices")


def extend_by_zero(u_perf, perf: Mesh, full: Mesh) -> np.ndarray:
    """Discrete ``J``: copy shared vertices, zero at vertices inside holes."""
    _check_pair(perf, full)
    u = np.asarray(u_perf)
    out = np.zeros((full.n_vertices,) + u.shape[1:], dtype=u.dtype)
    out[: perf.n_vertices] = u
    return out


def restrict_to_perforated(u_full, perf: Mesh, full: Mesh) -> np.ndarray:
    """Discrete ``I``: values at the perforated mesh's vertices."""
    _check_pair(perf, full)
    return np.asarray(u_full)[: perf.n_vertices].copy()


def harmonic_extension(u, full: Mesh) -> np.ndarray:
    """Discrete ``T``: keep ``u`` on shared vertices and solve the discrete
    Laplace equation on the hole triangles with the hole ring as data."""
    import scipy.sparse.linalg as spla

    if full.n_shared is None or full.in_hole is None:
        raise ArgumentError("harmonic extension needs a full mesh paired by fill_holes")
    u = np.asarray(u)
    ns = full.n_shared
    if u.shape[0] != ns:
        raise ArgumentError("field length does not match the paired perforated mesh")
    out = np.zeros((full.n_vertices,) + u.shape[1:], dtype=np.result_type(u.dtype, float))
    out[:ns] = u
    if full.n_vertices == ns:
        return out
    Kh = assemble_stiffness(full, full.in_hole).csr
    inner = np.arange(ns, full.n_vertices)
    K_ii = Kh[inner][:, inner].tocsc()
    K_ib = Kh[inner][:, :ns]
    out[inner] = spla.spsolve(K_ii, -(K_ib @ u)).reshape((len(inner),) + u.shape[1:])
    return out


def extension_energy_ratio(u, perf: Mesh, full: Mesh) -> float:
    """``|T u|_K^2 / |u|_{K+M}^2`` over the whole domain; logged per run as
    the measured extension constant."""
    Tu = harmonic_extension(u, full)
    num = float(np.real(np.vdot(Tu, assemble_stiffness(full).csr @ Tu)))
    A = assemble_stiffness(perf).csr + assemble_mass(perf).csr
    den = float(np.real(np.vdot(u, A @ u)))
    return num / den if den > 0 else 0.0


# ---------------------------------------------------------------------------
# L2 quantities over holes


def p1_l2_sq(tri_pts: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Exact ``int |u|^2`` of linear ``u`` over triangles: ``area/12 *
    (sum |u_i|^2 + |sum u_i|^2)``."""
    e1 = tri_pts[:, 1] - tri_pts[:, 0]
    e2 = tri_pts[:, 2] - tri_pts[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return area / 12 * (np.sum(np.abs(vals) ** 2, axis=1) + np.abs(np.sum(vals, axis=1)) ** 2)


def hole_polygons(mesh: Mesh) -> list[np.ndarray]:
    """Hole polygons (counterclockwise vertex coordinates) recorded in a mesh."""
    return [mesh.vertices[np.asarray(r)] for r in mesh.hole_rings]


def spec_hole_polygons(spec, n_seg: int | None = None) -> list[np.ndarray]:
    """Inscribed regular polygons for the holes of ``spec`` (used when no
    perforated mesh is at hand)."""
    from .geometry import lattice_centers

    n_seg = hole_segments() if n_seg is None else n_seg
    a = spec.hole_radius
    s = 2 * np.pi * np.arange(n_seg) / n_seg
    ring = a * np.stack([np.cos(s), np.sin(s)], axis=1)
    return [np.asarray(c) + ring for c in lattice_centers(spec.domain, spec.epsilon)]


def clipped_l2_sq(u, mesh: Mesh, polygons) -> float:
    """``int |u|^2`` over the union of (disjoint) convex ``polygons`` for a
    P1 field ``u`` on ``mesh``; triangles are clipped against each polygon."""
    from shapely import Polygon, intersection

    u = np.asarray(u)
    v, t = mesh.vertices, mesh.triangles
    p = v[t]
    lo, hi = p.min(axis=1), p.max(axis=1)
    total = 0.0
    for poly in polygons:
        poly = np.asarray(poly)
        plo, phi = poly.min(axis=0), poly.max(axis=0)
        cand = np.flatnonzero(np.all(lo <= phi, axis=1) & np.all(hi >= plo, axis=1))
        if len(cand) == 0:
            continue
        P = Polygon(poly)
        tris = [Polygon(p[k]) for k in cand]
        pieces = intersection(np.array(tris, dtype=object), P)
        for k, piece in zip(cand, pieces):
            if piece.is_empty or piece.area == 0:
                continue
            geoms = getattr(piece, "geoms", [piece])
            for g in geoms:
                if g.geom_type != "Polygon" or g.area == 0:
                    continue
                ring = np.asarray(g.exterior.coords)[:-1]
                if len(ring) < 3:
                    continue
                sub = np.stack([np.repeat(ring[:1], len(ring) - 2, axis=0), ring[1:-1], ring[2:]], axis=1)
                bary = _bary_in(p[k], sub.reshape(-1, 2))
                vals = (bary @ u[t[k]]).reshape(-1, 3)
                total += float(np.sum(p1_l2_sq(sub, vals)))
    return total


def _bary_in(tri, pts):
    d1, d2 = tri[1] - tri[0], tri[2] - tri[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    dp = pts - tri[0]
    l1 = (dp[:, 0] * d2[1] - dp[:, 1] * d2[0]) / det
    l2 = (d1[0] * dp[:, 1] - d1[1] * dp[:, 0]) / det
    return np.stack([1 - l1 - l2, l1, l2], axis=1)


def hole_mass(full: Mesh) -> SparseMatrix:
    """Mass matrix of the hole-filling triangles of a paired full mesh."""
    if full.in_hole is None:
        raise ArgumentError("full mesh carries no hole triangles")
    return assemble_mass(full, full.in_hole)


def l2_defect(u_perf, u_full, perf: Mesh, full: Mesh) -> float:
    """``(|u_perf - Pi u_full|^2_{Omega_eps} + |u_full|^2_{holes})^(1/2)``.

    ``Pi`` is P1 interpolation; the hole term integrates ``u_full`` over its
    triangles clipped against the hole polygons of ``perf``.
    """
    from .mesh import interpolate

    u_perf = np.asarray(u_perf)
    u_full = np.asarray(u_full)
    # scale first so squared norms neither underflow nor overflow
    scale = max(float(np.max(np.abs(u_perf), initial=0.0)), float(np.max(np.abs(u_full), initial=0.0)))
    if scale == 0 or not math.isfinite(scale):
        return scale  # 0, inf or nan
    u_perf, u_full = u_perf / scale, u_full / scale
    paired = full.n_shared == perf.n_vertices and full.in_hole is not None
    if paired:
        pi_u = u_full[: perf.n_vertices]
        hole_sq = float(np.real(np.vdot(u_full, hole_mass(full).csr @ u_full)))
    else:
        pi_u = interpolate(u_full, full, perf)
        hole_sq = clipped_l2_sq(u_full, full, hole_polygons(perf))
    diff = u_perf - pi_u
    first = float(np.real(np.vdot(diff, assemble_mass(perf).csr @ diff)))
    return scale * math.sqrt(max(first, 0.0) + max(hole_sq, 0.0))


def ji_defect_estimate(full: Mesh, spec, n_samples: int = 8, seed: int = 0) -> float:
    """Largest ``|f|_{L2(holes)}`` over seeded random nodal fields with unit
    discrete H1 norm."""
    if n_samples < 1:
        raise ArgumentError("n_samples must be at least 1")
    if full.in_hole is not None and full.in_hole.any():
        Mh = hole_mass(full).csr

        def hole_sq(f):
            return float(np.real(np.vdot(f, Mh @ f)))
    else:
        polys = spec_hole_polygons(spec) if spec is not None else []
        if not polys:
            return 0.0

        def hole_sq(f):
            return clipped_l2_sq(f, full, polys)
    H = assemble_stiffness(full).csr + assemble_mass(full).csr
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_samples):
        f = rng.standard_normal(full.n_vertices)
        f /= math.sqrt(float(f @ (H @ f)))
        best = max(best, math.sqrt(max(hole_sq(f), 0.0)))
    return best
