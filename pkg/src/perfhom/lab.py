"""Experiments on the perforated problems and their homogenised limit.

* radial correctors, annulus capacities and the per-cell strange term;
* resolvent-defect sweeps over eps with operator-norm estimates of the
  difference map ``f -> J A_eps^{-1} I f - A^{-1} f``;
* weighted exponential-decay checks and cube-interaction checks on strips.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    DiscreteOperator,
    WeightSpec,
    assemble_weighted_mass,
    assemble_weighted_stiffness,
    build_operator,
    hole_mass,
    l2_defect,
)
from .defaults import DEFAULTS
from .errors import ArgumentError, PerfhomError, SolverError
from .geometry import BCType, BoundaryKind, DomainSpec, PerforationSpec, strange_term, surface_area_unit_ball
from .mesh import Mesh, RadialGrid, fill_holes, mesh_full_domain, mesh_perforated, radial_grid
from .solvers import Factorization, OpNormEstimate, opnorm_diff, solve

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# radial correctors and capacities


@dataclass
class CorrectorSolution:
    """Radial corrector ``w`` on ``a <= r <= eps`` (equal to 1 at ``eps``).

    ``values`` is the closed form at the grid nodes, ``numeric`` the radial
    finite-element solution; ``flux`` is ``S_d eps^(d-1) w'(eps)``.
    """

    grid: RadialGrid
    values: np.ndarray
    numeric: np.ndarray
    flux: complex
    coefficients: tuple
    bc: BoundaryKind
    dim: int

    @property
    def trace(self) -> complex:
        """``w(a)``."""
        return complex(self.values[0])

    @property
    def max_numeric_error(self) -> float:
        return float(np.max(np.abs(self.values - self.numeric)))


def _g(r, d):
    return np.log(r) if d == 2 else -1.0 / np.asarray(r, dtype=float)


def _dg(r, d):
    return 1.0 / np.asarray(r, dtype=float) if d == 2 else 1.0 / np.asarray(r, dtype=float) ** 2


def _conductances(r, d):
    """``S_d / int_{r_k}^{r_{k+1}} s^(1-d) ds``: exact for radial harmonics."""
    S = surface_area_unit_ball(d)
    if d == 2:
        integral = np.log(r[1:] / r[:-1])
    else:
        integral = (r[:-1] ** (2 - d) - r[1:] ** (2 - d)) / (d - 2)
    return S / integral


def _radial_fe(r, d, alpha=None):
    """Nodal radial solution with ``w(eps) = 1`` and either ``w(a) = 0``
    (``alpha`` None) or the Robin condition ``-w'(a) + alpha w(a) = 0``."""
    n = len(r)
    c = _conductances(r, d).astype(complex)
    main = np.zeros(n, complex)
    main[:-1] += c
    main[1:] += c
    off = -c
    if alpha is not None:
        main[0] += alpha * surface_area_unit_ball(d) * r[0] ** (d - 1)
    A = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    b = np.zeros(n, complex)
    # w(eps) = 1
    A[n - 1, :] = 0
    A[n - 1, n - 1] = 1
    b[n - 1] = 1
    if alpha is None:
        A[0, :] = 0
        A[0, 0] = 1
    return spla.spsolve(A.tocsc(), b)


def corrector_radial(bc: BoundaryKind, a: float, eps: float, d: int = 2, n: int = 400,
                     grid: RadialGrid | None = None) -> CorrectorSolution:
    """Closed-form and numerical radial corrector on the annulus ``a < r < eps``."""
    if not 0 < a < eps:
        raise ArgumentError(f"need 0 < a < eps, got a={a}, eps={eps}")
    if d not in (2, 3):
        raise ArgumentError("radial correctors are implemented for d = 2, 3")
    grid = radial_grid(a, eps, n, geometric=True) if grid is None else grid
    r = grid.nodes
    if abs(r[0] - a) > 1e-14 * a or abs(r[-1] - eps) > 1e-14 * eps:
        raise ArgumentError("grid must span [a, eps]")
    S = surface_area_unit_ball(d)
    if bc.kind is BCType.NEUMANN:
        ones = np.ones(len(r), complex)
        return CorrectorSolution(grid, ones, ones.copy(), 0j, (0j, 1 + 0j), bc, d)
    if bc.kind is BCType.DIRICHLET:
        c1 = 1.0 / (_g(eps, d) - _g(a, d))
        c2 = -c1 * _g(a, d)
        numeric = _radial_fe(r, d)
    else:
        alpha = bc.alpha
        denom = _dg(a, d) + alpha * (_g(eps, d) - _g(a, d))
        if abs(denom) == 0:
            raise SolverError("singular corrector boundary system")
        c1 = alpha / denom
        c2 = 1 - c1 * _g(eps, d)
        numeric = _radial_fe(r, d, alpha)
    c1, c2 = complex(c1), complex(c2)
    values = c1 * _g(r, d) + c2
    values[-1] = 1.0
    if bc.kind is BCType.DIRICHLET:
        values[0] = 0.0
    flux = S * eps ** (d - 1) * c1 * complex(_dg(eps, d))
    return CorrectorSolution(grid, values.astype(complex), numeric, flux, (c1, c2), bc, d)


def _radial_stiffness(r, d, degree):
    """Global matrix of ``S_d int r^(d-1) u' v' dr`` for continuous
    piecewise polynomials of ``degree`` (1 or 2) on the nodes ``r``.

    Unknowns are the grid nodes followed (for degree 2) by the element
    midpoints.
    """
    S = surface_area_unit_ball(d)
    h = np.diff(r)
    m = len(r)
    if degree == 1:
        # element energy weight: S_d int r^(d-1) dr / h^2
        w = S * (r[1:] ** d - r[:-1] ** d) / d / h**2
        main = np.zeros(m)
        main[:-1] += w
        main[1:] += w
        return sp.diags([-w, main, -w], [-1, 0, 1], format="csr")
    # quadratic Lagrange basis on [0, 1] with nodes 0, 1, 1/2
    xi, wq = np.polynomial.legendre.leggauss(d // 2 + 3)
    xi, wq = (xi + 1) / 2, wq / 2
    dphi = np.stack([4 * xi - 3, 4 * xi - 1, 4 - 8 * xi])  # (3, q)
    rq = r[:-1, None] + h[:, None] * xi[None, :]  # (elements, q)
    local = S * np.einsum("eq,iq,jq->eij", rq ** (d - 1) * wq, dphi, dphi) / h[:, None, None]
    ne = len(h)
    dofs = np.stack([np.arange(ne), np.arange(1, ne + 1), m + np.arange(ne)], axis=1)
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    n = m + ne
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def capacity_variational(d: int, R_trunc: float, grid: RadialGrid | None = None, n: int = 2000,
                         degree: int = 2) -> float:
    """Minimal radial Dirichlet energy ``S_d int r^(d-1) |u'|^2`` over
    continuous piecewise polynomials of ``degree`` on ``grid`` with
    ``u(1) = 1``, ``u(R) = 0``.

    Being a Ritz minimum, the value is an upper bound for the truncated
    capacity.  Degree 1 has relative error about ``q^2/3`` on a geometric
    grid of ratio ``e^q``; degree 2 is the default.
    """
    if d < 3:
        raise ArgumentError("the capacity of a point is degenerate for d = 2")
    if not R_trunc > 1:
        raise ArgumentError("R_trunc must exceed 1")
    if degree not in (1, 2):
        raise ArgumentError(f"degree must be 1 or 2, got {degree}")
    grid = radial_grid(1.0, R_trunc, n - 1, geometric=True) if grid is None else grid
    r = grid.nodes
    if abs(r[0] - 1) > 1e-14 or abs(r[-1] - R_trunc) > 1e-12 * R_trunc:
        raise ArgumentError("grid must span [1, R_trunc]")
    A = _radial_stiffness(r, d, degree)
    m = len(r)
    fixed = np.array([0, m - 1])
    inner = np.setdiff1d(np.arange(A.shape[0]), fixed)
    u = np.zeros(A.shape[0])
    u[0] = 1.0
    b = -A[inner][:, [0]].toarray().ravel()
    u[inner] = spla.spsolve(A[inner][:, inner].tocsc(), b)
    return float(u @ (A @ u))


def capacity_extrapolated(d: int, radii=(50.0, 100.0, 200.0), n: int = 2000, degree: int = 2) -> float:
    """Infinite-domain capacity from truncated ones via the law
    ``E(R) = C / (1 - R^(2-d))`` (averaged over ``radii``)."""
    vals = [capacity_variational(d, R, n=n, degree=degree) * (1 - R ** (2 - d)) for R in radii]
    return float(np.mean(vals))


def mu_percell(bc: BoundaryKind, eps: float, d: int = 2, a: float | None = None,
               unit_trace: bool = False) -> complex:
    """Strange-term density of one cell of side ``2 eps``.

    Dirichlet: annulus capacity (corrector flux) / (2 eps)^d.  Robin:
    ``alpha S_d a^(d-1) w(a) / (2 eps)^d`` (``w(a) := 1`` with
    ``unit_trace``).  Neumann: 0.  ``a`` defaults to the critical radius.
    """
    if bc.kind is BCType.NEUMANN:
        return 0j
    if a is None:
        a = PerforationSpec(DomainSpec(d, (1.0,) * d), eps, bc).hole_radius
    vol = (2 * eps) ** d
    S = surface_area_unit_ball(d)
    if bc.kind is BCType.DIRICHLET:
        cor = corrector_radial(bc, a, eps, d, n=8)
        return complex(cor.flux) / vol
    trace = 1.0 if unit_trace else corrector_radial(bc, a, eps, d, n=8).trace
    return bc.alpha * S * a ** (d - 1) * trace / vol


# ---------------------------------------------------------------------------
# difference map and resolvent sweeps


class DifferenceMap:
    """``D f = J A_eps^{-1} I f - A^{-1} f`` on a paired mesh.

    Inputs are nodal fields on the full mesh (``L2(Omega)``, mass norm).
    Outputs are broken fields stored as ``[y_eps, y_T]``: ``y_eps`` on the
    perforated mesh (the ``Omega_eps`` part) and ``y_T`` on the full mesh,
    of which only the hole triangles count.
    """

    def __init__(self, perf: Mesh, full: Mesh, op_eps: DiscreteOperator, op_lim: DiscreteOperator):
        if full.n_shared != perf.n_vertices:
            raise ArgumentError("difference map needs a paired full mesh")
        self.perf, self.full = perf, full
        self.op_eps, self.op_lim = op_eps, op_lim
        self.ns = perf.n_vertices
        self.M_eps = op_eps.Mass.csr
        self.M_full = op_lim.Mass.csr
        self.M_hole = hole_mass(full).csr
        self.n_in = full.n_vertices
        self._minv = None

    def solve_eps(self, load, adjoint=False):
        return solve(self.op_eps, load, adjoint=adjoint)[0]

    def solve_lim(self, load, adjoint=False):
        return solve(self.op_lim, load, adjoint=adjoint)[0]

    def parts(self, f):
        """``(u_eps, u_lim)`` for the input ``f``."""
        f = np.asarray(f)
        u_eps = self.solve_eps(self.M_eps @ f[: self.ns])
        u_lim = self.solve_lim(self.M_full @ f)
        return u_eps, u_lim

    def apply(self, f) -> np.ndarray:
        u_eps, u_lim = self.parts(f)
        return np.concatenate([u_eps - u_lim[: self.ns], -u_lim])

    def split(self, y):
        return y[: self.ns], y[self.ns:]

    def out_inner(self, y1, y2) -> complex:
        a1, b1 = self.split(y1)
        a2, b2 = self.split(y2)
        return complex(np.vdot(a1, self.M_eps @ a2) + np.vdot(b1, self.M_hole @ b2))

    def out_norm(self, y) -> float:
        return math.sqrt(max(self.out_inner(y, y).real, 0.0))

    def in_norm(self, f) -> float:
        return math.sqrt(max(float(np.real(np.vdot(f, self.M_full @ f))), 0.0))

    def adjoint(self, y) -> np.ndarray:
        """Adjoint with respect to the input mass and the output inner product."""
        y_eps, y_T = self.split(y)
        z = self.solve_eps(self.M_eps @ y_eps, adjoint=True)
        pad = np.zeros(self.n_in, dtype=complex)
        pad[: self.ns] = self.M_eps @ z
        load = np.zeros(self.n_in, dtype=complex)
        load[: self.ns] = self.M_eps @ y_eps
        load += self.M_hole @ y_T
        w = self.solve_lim(load, adjoint=True)
        if self._minv is None:
            self._minv = Factorization(self.M_full)
        return self._minv.solve(pad) - w

    def norm_estimate(self, tol=DEFAULTS["opnorm_tol"], seed=0, start=None) -> OpNormEstimate:
        from scipy.sparse import csr_matrix

        return opnorm_diff(self.apply, self.adjoint, self.n_in, tol=tol, seed=seed,
                           in_mass=csr_matrix(self.M_full), out_norm=self.out_norm, start=start)


@dataclass
class ConvergenceRecord:
    epsilon: float
    h_far: float
    dofs: int = 0
    defect: float = math.nan
    delta_eps: float = math.nan
    lambda1: complex = complex(math.nan, math.nan)
    seconds: float = 0.0
    status: str = "ok"
    mu: complex = 0j
    off_scaling: bool = False
    defect_rel: float = math.nan
    delta_iterations: int = 0
    message: str = ""


SWEEP_HEADER = ["epsilon", "h_far", "dofs", "defect", "delta_eps", "lambda1_re", "lambda1_im", "status", "seconds"]


def record_row(rec: ConvergenceRecord) -> list:
    """CSV row under :data:`SWEEP_HEADER`; failed rows carry no numbers."""
    if rec.status != "ok":
        return [repr(rec.epsilon), repr(rec.h_far), "", "", "", "", "", rec.status, f"{rec.seconds:.3f}"]
    lam = complex(rec.lambda1)
    fmt = lambda x: "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))  # noqa: E731
    return [repr(rec.epsilon), repr(rec.h_far), str(rec.dofs), fmt(rec.defect), fmt(rec.delta_eps),
            fmt(lam.real), fmt(lam.imag), rec.status, f"{rec.seconds:.3f}"]


def default_source(x) -> np.ndarray:
    """``sin(pi x) sin(pi y)``."""
    x = np.asarray(x, dtype=float)
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


def lowest_eigenvalue(op: DiscreteOperator) -> complex:
    """Eigenvalue of smallest modulus (the bottom of the spectrum here)."""
    A = op.system.csr.tocsc()
    M = sp.csc_matrix(op.mass_free.csr, dtype=float)
    if op.n_free < 8:
        import scipy.linalg as sla

        w = sla.eigvals(A.toarray(), M.toarray())
        return complex(w[np.argmin(np.abs(w))])
    v0 = np.random.default_rng(0).standard_normal(op.n_free)  # reproducible start
    if op.symmetry == "hermitian":
        Ar = sp.csc_matrix((np.ascontiguousarray(A.data.real), A.indices, A.indptr), shape=A.shape)
        w = spla.eigsh(Ar, k=1, M=M, sigma=0.0, which="LM", return_eigenvectors=False, v0=v0)
    else:
        w = spla.eigs(A, k=1, M=M, sigma=0.0, which="LM", return_eigenvectors=False, v0=v0.astype(complex))
    return complex(w[0])


def build_pair(spec: PerforationSpec, h_far: float, grading: float = DEFAULTS["grading"]):
    perf = mesh_perforated(spec, h_far, grading)
    return perf, fill_holes(perf)


def sweep_point(spec: PerforationSpec, h_far: float, f: Callable = default_source, mu=None,
                delta: bool = True, eigen: bool = True, tol=DEFAULTS["opnorm_tol"], seed: int = 0,
                outer_bc: BoundaryKind | None = None, grading: float = DEFAULTS["grading"]):
    """One eps of a resolvent sweep; returns the record and the difference map."""
    t0 = time.perf_counter()
    perf, full = build_pair(spec, h_far, grading)
    mu = strange_term(spec.bc, spec.dim).mu if mu is None else complex(mu)
    op_eps = build_operator(perf, spec.bc, 0.0, 0.0, outer_bc)
    op_lim = build_operator(full, spec.bc, mu, 0.0, outer_bc)
    D = DifferenceMap(perf, full, op_eps, op_lim)
    fv = np.asarray(f(full.vertices), dtype=complex)
    u_eps, u_lim = D.parts(fv)
    defect = l2_defect(u_eps, u_lim, perf, full)
    nf = D.in_norm(fv)
    rec = ConvergenceRecord(spec.epsilon, h_far, op_eps.n_free + op_lim.n_free, defect, mu=mu,
                            off_scaling=spec.off_scaling)
    rec.defect_rel = defect / nf if nf > 0 else 0.0
    if delta:
        if nf == 0:
            rec.delta_eps = 0.0
        else:
            # start from the source itself plus a little seeded noise
            rng = np.random.default_rng(seed)
            start = fv / nf + 1e-3 * (rng.standard_normal(len(fv)) + 1j * rng.standard_normal(len(fv)))
            est = D.norm_estimate(tol, seed, start)
            rec.delta_eps = max(est.value, rec.defect_rel)
            rec.delta_iterations = est.iterations
    if eigen:
        rec.lambda1 = lowest_eigenvalue(op_eps)
    rec.seconds = time.perf_counter() - t0
    return rec, D


def resolvent_sweep(specs, f: Callable = default_source, h_policy=1 / 32, mu=None, delta: bool = True,
                    eigen: bool = True, seed: int = 0, tol=DEFAULTS["opnorm_tol"],
                    outer_bc: BoundaryKind | None = None) -> list[ConvergenceRecord]:
    """Run :func:`sweep_point` for each spec (sorted by decreasing eps).

    ``h_policy`` is a mesh size or a callable ``eps -> h_far``.  Failures are
    recorded as ``status="failed"`` rows and the sweep continues.
    """
    out = []
    for spec in sorted(specs, key=lambda s: -s.epsilon):
        h = h_policy(spec.epsilon) if callable(h_policy) else float(h_policy)
        t0 = time.perf_counter()
        try:
            rec, _ = sweep_point(spec, h, f, mu, delta, eigen, tol, seed, outer_bc)
        except PerfhomError as exc:
            log.warning("sweep point eps=%g failed: %s", spec.epsilon, exc)
            rec = ConvergenceRecord(spec.epsilon, h, status="failed", seconds=time.perf_counter() - t0,
                                    message=str(exc))
        log.info("eps=%g defect=%.4e delta=%.4e (%.1fs)", rec.epsilon, rec.defect, rec.delta_eps, rec.seconds)
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# weighted decay on strips


@dataclass(frozen=True)
class DecayCheckConfig:
    strip: DomainSpec
    lam: float
    weight: WeightSpec
    bc: BoundaryKind
    h: float = 1 / 16
    tol_disc: float = DEFAULTS["decay_tol_disc"]

    def __post_init__(self):
        if not self.lam > 0.5:
            raise ArgumentError(f"lambda must exceed 1/2, got {self.lam}")

    @property
    def M(self) -> float:
        return decay_constant(self.lam)


def decay_constant(lam: float) -> float:
    """``max{2, 1/(lambda - 1/2)}``."""
    if not lam > 0.5:
        raise ArgumentError(f"lambda must exceed 1/2, got {lam}")
    return max(2.0, 1.0 / (lam - 0.5))


@dataclass
class DecayReport:
    r1: float
    r2: float
    M: float
    pass1: bool
    pass2: bool
    tail_fraction: float
    cube: int = -1

    @property
    def passed(self) -> bool:
        return self.pass1 and self.pass2


def strip_operator(strip: DomainSpec, h: float, bc: BoundaryKind, lam: float):
    mesh = mesh_full_domain(strip, h)
    return mesh, build_operator(mesh, bc, 0.0, lam - 1.0)


def cube_index(x, n_cubes: int) -> np.ndarray:
    """Unit cube ``[k, k+1)`` along the long axis containing each point
    (the last cube is closed)."""
    k = np.floor(np.asarray(x)[:, 0]).astype(int)
    return np.clip(k, 0, n_cubes - 1)


def random_cube_source(mesh: Mesh, cube: int, rng: np.random.Generator) -> np.ndarray:
    """Random complex nodal values on nodes strictly inside unit cube ``cube``."""
    x = mesh.vertices
    inside = (x[:, 0] > cube + 1e-12) & (x[:, 0] < cube + 1 - 1e-12) & (x[:, 1] > 1e-12) & (x[:, 1] < 1 - 1e-12)
    f = np.zeros(mesh.n_vertices, complex)
    k = int(inside.sum())
    f[inside] = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    return f


def weighted_decay_check(cfg: DecayCheckConfig, f=None, seed: int = 0, mesh_op=None) -> DecayReport:
    """Solve ``(-Laplace + lambda) u = f`` on the strip and compare the
    cosh-weighted norms of ``u`` and ``grad u`` with that of ``f``.

    ``f`` is a nodal array or None (a seeded random source inside a random
    unit cube, with the weight centred on that cube).
    """
    mesh, op = mesh_op if mesh_op is not None else strip_operator(cfg.strip, cfg.h, cfg.bc, cfg.lam)
    weight = cfg.weight
    cube = -1
    if f is None:
        rng = np.random.default_rng(seed)
        n_cubes = int(round(cfg.strip.box[0]))
        cube = int(rng.integers(0, n_cubes))
        f = random_cube_source(mesh, cube, rng)
        weight = WeightSpec((cube + 0.5, cfg.strip.box[1] / 2))
    f = np.asarray(f, dtype=complex)
    W = assemble_weighted_mass(mesh, weight).csr
    Wg = assemble_weighted_stiffness(mesh, weight).csr
    nf = float(np.real(np.vdot(f, W @ f)))
    M = cfg.M
    if nf == 0:
        return DecayReport(0.0, 0.0, M, True, True, 0.0, cube)
    u, _ = solve(op, op.Mass.csr @ f)
    r1 = float(np.real(np.vdot(u, W @ u))) / nf
    r2 = float(np.real(np.vdot(u, Wg @ u))) / nf
    dens = np.abs(u) ** 2 * weight.omega(mesh.vertices)
    ends = (mesh.vertices[:, 0] <= 1e-12) | (mesh.vertices[:, 0] >= cfg.strip.box[0] - 1e-12)
    tail = float(dens[ends].max() / dens.max()) if dens.max() > 0 else 0.0
    lim = M * (1 + cfg.tol_disc)
    return DecayReport(r1, r2, M, r1 <= lim, r2 <= lim, tail, cube)


# ---------------------------------------------------------------------------
# interaction of cube-localised sources


class CubeProblem:
    """Difference map (or plain resolvent) on a perforated strip with the
    strip cut into unit cubes along its long axis."""

    def __init__(self, spec: PerforationSpec, h_far: float = 1 / 16, mode: str = "difference", mu=None,
                 grading: float = DEFAULTS["grading"]):
        if mode not in ("difference", "resolvent"):
            raise ArgumentError(f"unknown interaction mode {mode!r}")
        self.spec, self.mode = spec, mode
        self.perf, self.full = build_pair(spec, h_far, grading)
        mu = strange_term(spec.bc, spec.dim).mu if mu is None else complex(mu)
        op_eps = build_operator(self.perf, spec.bc, 0.0, 0.0)
        op_lim = build_operator(self.full, spec.bc, mu, 0.0)
        self.D = DifferenceMap(self.perf, self.full, op_eps, op_lim)
        self.n_cubes = int(round(spec.domain.box[0]))
        self.cube_of = cube_index(self.full.vertices, self.n_cubes)

    def bump(self, i: int) -> np.ndarray:
        """``sin(pi (x - i)) sin(pi y / width)`` on the nodes of cube ``i``."""
        x = self.full.vertices
        w = self.spec.domain.box[1]
        f = np.sin(np.pi * (x[:, 0] - i)) * np.sin(np.pi * x[:, 1] / w)
        return np.where(self.cube_of == i, f, 0.0).astype(complex)

    def response(self, f) -> np.ndarray:
        if self.mode == "difference":
            return self.D.apply(f)
        u_eps, _ = self.D.parts(f)
        y = np.zeros(self.D.ns + self.D.n_in, complex)
        y[: self.D.ns] = u_eps
        return y

    def inner(self, y1, y2) -> complex:
        return self.D.out_inner(y1, y2)

    def norm_in(self, f) -> float:
        return self.D.in_norm(f)


def interaction_decay(problem: CubeProblem, i: int, j: int, f_i=None, f_j=None):
    """``<u_i, u_j>`` and ``|<u_i, u_j>| / (|f_i| |f_j| exp(-|i-j|/2))``."""
    if i == j:
        raise ArgumentError("cubes must differ")
    f_i = problem.bump(i) if f_i is None else np.asarray(f_i, complex)
    f_j = problem.bump(j) if f_j is None else np.asarray(f_j, complex)
    if np.any((f_i != 0) & (f_j != 0)):
        raise ArgumentError("sources overlap")
    ni, nj = problem.norm_in(f_i), problem.norm_in(f_j)
    if ni == 0 or nj == 0:
        return 0j, 0.0
    ip = problem.inner(problem.response(f_i), problem.response(f_j))
    return ip, abs(ip) / (ni * nj * math.exp(-abs(i - j) / 2))


@dataclass
class DecompositionReport:
    n: int
    lhs: float
    sum_sq: float
    f_norm: float
    C: float
    cubes: list = field(default_factory=list)


def decomposition_inequality_check(problem: CubeProblem, f, n: int) -> DecompositionReport:
    """Smallest ``C`` with ``|sum u_i|^2 <= C (n^3 sum |u_i|^2 + |f| e^{-n/3})``
    where ``u_i`` is the response to ``f`` restricted to cube ``i``."""
    if not n > 1:
        raise ArgumentError("n must exceed 1")
    f = np.asarray(f, complex)
    cubes = [int(k) for k in np.unique(problem.cube_of[f != 0])]
    total = np.zeros(problem.D.ns + problem.D.n_in, complex)
    sum_sq = 0.0
    for k in cubes:
        y = problem.response(np.where(problem.cube_of == k, f, 0))
        total += y
        sum_sq += problem.inner(y, y).real
    lhs = problem.inner(total, total).real
    fn = problem.norm_in(f)
    rhs = n**3 * sum_sq + fn * math.exp(-n / 3)
    C = lhs / rhs if rhs > 0 else 0.0
    return DecompositionReport(n, lhs, sum_sq, fn, C, cubes)
