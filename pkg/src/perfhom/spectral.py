"""Windowed spectra, sectors of the numerical range and semigroup decay.

Operators in the ``B`` form are built with ``shift=-1`` so that the system
matrix discretises ``A - I``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import DiscreteOperator
from .defaults import DEFAULTS
from .errors import ArgumentError
from .geometry import BoundaryKind, surface_area_unit_ball
from .solvers import eigs_window, expm_apply, opnorm_diff

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SectorSpec:
    """``{z : |Im(z - vertex)| <= tan(half_angle) Re(z - vertex)}``."""

    vertex: complex
    half_angle: float

    def __post_init__(self):
        if not 0 <= self.half_angle <= math.pi / 2:
            raise ArgumentError(f"half angle must lie in [0, pi/2], got {self.half_angle}")
        object.__setattr__(self, "vertex", complex(self.vertex))

    def contains(self, z, tol: float = 0.0) -> np.ndarray:
        """Membership with absolute slack ``tol * max(1, |z|)``."""
        w = np.asarray(z, dtype=complex) - self.vertex
        slack = tol * np.maximum(1.0, np.abs(np.asarray(z)))
        if self.half_angle >= math.pi / 2:
            return w.real >= -slack
        return np.abs(w.imag) <= math.tan(self.half_angle) * w.real + slack


@dataclass(frozen=True)
class SpectrumWindow:
    x_lo: float
    x_hi: float
    y_lo: float = -math.inf
    y_hi: float = math.inf

    def __post_init__(self):
        if not (self.x_lo <= self.x_hi and self.y_lo <= self.y_hi):
            raise ArgumentError("empty spectrum window")

    @classmethod
    def k_delta(cls, mu: complex) -> "SpectrumWindow":
        """``[0, Re mu] x [-|Im mu|, |Im mu|]``."""
        mu = complex(mu)
        return cls(0.0, mu.real, -abs(mu.imag), abs(mu.imag))

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return (z.real >= self.x_lo) & (z.real <= self.x_hi) & (z.imag >= self.y_lo) & (z.imag <= self.y_hi)


def hausdorff(X, Y, window: SpectrumWindow | None = None, X_all=None, Y_all=None) -> float:
    """Hausdorff distance of finite sets restricted to ``window``.

    Points of ``X`` inside the window are measured against all of
    ``Y_all`` (defaults to ``Y``) and vice versa, so eigenvalues that sit
    just across the window edge still count as neighbours.  Returns 0 when
    neither set has points in the window and ``inf`` when a point in the
    window has no partner at all.
    """
    X = np.asarray(X, dtype=complex).ravel()
    Y = np.asarray(Y, dtype=complex).ravel()
    X_all = X if X_all is None else np.asarray(X_all, dtype=complex).ravel()
    Y_all = Y if Y_all is None else np.asarray(Y_all, dtype=complex).ravel()
    if window is not None:
        X = X[window.contains(X)]
        Y = Y[window.contains(Y)]

    def one_sided(P, Q):
        if len(P) == 0:
            return 0.0
        if len(Q) == 0:
            return math.inf
        return float(np.abs(P[:, None] - Q[None, :]).min(axis=1).max())

    return max(one_sided(X, Y_all), one_sided(Y, X_all))


def spectra_hausdorff(op_eps: DiscreteOperator, op_lim: DiscreteOperator, window: SpectrumWindow,
                      tol: float = DEFAULTS["eig_tol"], margin: float = 0.1, k_max: int = 200):
    """Hausdorff distance of the two discrete spectra inside ``window``.

    Eigenvalues are computed on the window widened by ``margin`` times its
    width so that neighbours just outside the window are available.
    Returns ``(distance, eigenvalues_eps, eigenvalues_lim)``.
    """
    width = max(window.x_hi - window.x_lo, 1.0)
    wide = (window.x_lo - margin * width, window.x_hi + margin * width)
    ev_eps = eigs_window(op_eps, wide, k_max=k_max, tol=tol).values
    ev_lim = ev_eps if op_lim is op_eps else eigs_window(op_lim, wide, k_max=k_max, tol=tol).values
    return hausdorff(ev_eps, ev_lim, window), ev_eps, ev_lim


@dataclass
class GapReport:
    holds: bool
    interval: tuple
    violators: list = field(default_factory=list)
    eigenvalues: np.ndarray | None = None


def spectral_gap_check(op_b: DiscreteOperator, delta: float, mu: complex,
                       window=None, tol: float = DEFAULTS["eig_tol"]) -> GapReport:
    """No eigenvalue of the ``B`` form has real part in ``(delta, Re mu - delta)``."""
    re_mu = complex(mu).real
    lo, hi = delta, re_mu - delta
    if not lo < hi:
        return GapReport(True, (lo, hi), [], np.zeros(0, complex))
    if not 0 < delta < re_mu:
        raise ArgumentError("delta must lie in (0, Re mu)")
    window = (-0.1, re_mu + 1.0) if window is None else window
    ev = eigs_window(op_b, window, tol=tol).values
    bad = [complex(z) for z in ev if lo < z.real < hi]
    return GapReport(not bad, (lo, hi), bad, ev)


def numerical_range_sample(op: DiscreteOperator, n: int, seed: int = 0) -> np.ndarray:
    """Mass-weighted Rayleigh quotients of seeded random complex vectors."""
    if n < 1:
        raise ArgumentError("need at least one sample")
    rng = np.random.default_rng(seed)
    S = op.system.csr
    M = op.mass_free.csr
    U = rng.standard_normal((op.n_free, n)) + 1j * rng.standard_normal((op.n_free, n))
    num = np.einsum("ij,ij->j", U.conj(), S @ U)
    den = np.einsum("ij,ij->j", U.conj(), M @ U).real
    if op.symmetry == "hermitian":
        num = num.real.astype(complex)  # drop rounding noise of a real form
    return num / den


def rayleigh_quotient(op: DiscreteOperator, u) -> complex:
    u = np.asarray(u, dtype=complex)
    if len(u) == op.n:
        u = u[op.free]
    return complex(np.vdot(u, op.system.csr @ u) / np.vdot(u, op.mass_free.csr @ u))


class SectorVariant(enum.Enum):
    THETA_0 = "theta_0"
    THETA_LAMBDA = "theta_lambda"
    THETA_LAMBDA_DELTA = "theta_lambda_delta"


def sector_angle(alpha: complex, lam: float = 0.0, d: int = 2, delta: float = 0.0,
                 variant=SectorVariant.THETA_0) -> SectorSpec:
    """Sector half-angles of the Robin semigroup.

    * ``theta_0 = arctan(|Im a| / Re a)``, vertex 0;
    * ``theta_lambda = arctan(|Im a| / (Re a - lam / (2^-d S_d)))``, vertex lam;
    * ``theta_lambda_delta = arctan(|Im mu| / (Re mu - lam - delta))``, vertex lam,
      with ``mu = a S_d / 2^d``.
    """
    variant = SectorVariant(variant)
    alpha = complex(alpha)
    if alpha.real <= 0:
        raise ArgumentError("sector angles need Re(alpha) > 0")
    scale = surface_area_unit_ball(d) / 2**d
    mu = alpha * scale
    if variant is SectorVariant.THETA_0:
        return SectorSpec(0j, math.atan(abs(alpha.imag) / alpha.real))
    if variant is SectorVariant.THETA_LAMBDA:
        if not 0 < lam < mu.real:
            raise ArgumentError(f"lambda must lie in (0, Re mu) = (0, {mu.real})")
        return SectorSpec(complex(lam), math.atan(abs(alpha.imag) / (alpha.real - lam / scale)))
    if not delta > 0:
        raise ArgumentError("delta must be positive")
    if not 0 < lam < mu.real - delta:
        raise ArgumentError(f"lambda must lie in (0, Re mu - delta) = (0, {mu.real - delta})")
    return SectorSpec(complex(lam), math.atan(abs(mu.imag) / (mu.real - lam - delta)))


@dataclass
class DecayCurve:
    t: np.ndarray
    norms: np.ndarray
    iterations: list
    fits: dict  # lambda -> smallest M with norms <= M exp(-lambda t)
    M: float = math.nan
    lam: float = math.nan

    def bound(self, M: float, lam: float) -> np.ndarray:
        return M * np.exp(-lam * self.t)


def fit_constant(t, norms, lam: float) -> float:
    """Smallest ``M`` with ``norms <= M exp(-lam t)`` on the grid."""
    return float(np.max(np.asarray(norms) * np.exp(lam * np.asarray(t))))


def semigroup_norm(op_b: DiscreteOperator, t: float, tol: float = 1e-4, seed: int = 0,
                   maxiter: int = DEFAULTS["semigroup_power_iters"]):
    """Mass-norm of ``exp(-t B)`` by power iteration (propagator and its
    mass-adjoint).  Returns ``(estimate, iterations)``."""
    if t == 0:
        return 1.0, 0
    M = op_b.mass_free.csr
    from .errors import SolverError

    try:
        est = opnorm_diff(lambda x: expm_apply(op_b, t, x, tol),
                          lambda y: expm_apply(op_b, t, y, tol, adjoint=True),
                          op_b.n_free, tol=DEFAULTS["opnorm_tol"], seed=seed, in_mass=M,
                          out_norm=lambda y: math.sqrt(max(float(np.real(np.vdot(y, M @ y))), 0.0)),
                          maxiter=maxiter)
        return est.value, est.iterations
    except SolverError as exc:
        # iteration cap reached: keep the best lower bound
        if exc.report is not None and hasattr(exc.report, "value"):
            return exc.report.value, maxiter
        raise


def semigroup_decay_curve(op_b: DiscreteOperator, t_grid, tol: float = 1e-4, seed: int = 0,
                          lambdas=(), m_cap: float = 1.05) -> DecayCurve:
    """``||exp(-t B)||`` on ``t_grid`` and fitted ``(M, lambda)`` pairs.

    For each candidate ``lambda`` the smallest admissible ``M`` is stored;
    the reported pair is the largest candidate ``lambda`` whose ``M`` does
    not exceed ``m_cap``.
    """
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ArgumentError("t grid must be non-negative and increasing")
    norms, iters = [], []
    for k, tk in enumerate(t):
        val, it = semigroup_norm(op_b, float(tk), tol, seed + k)
        norms.append(val)
        iters.append(it)
    norms = np.array(norms)
    fits = {float(lam): fit_constant(t, norms, lam) for lam in lambdas}
    curve = DecayCurve(t, norms, iters, fits)
    ok = [lam for lam, M in fits.items() if M <= m_cap]
    if ok:
        curve.lam = max(ok)
        curve.M = fits[curve.lam]
    return curve


def robin_b_operator(mesh, alpha, mu=0.0, outer_bc: BoundaryKind | None = None):
    """``B = A - I`` for a Robin coefficient ``alpha`` on ``mesh``."""
    from .assembly import build_operator

    return build_operator(mesh, BoundaryKind.robin(alpha), mu, -1.0, outer_bc)
