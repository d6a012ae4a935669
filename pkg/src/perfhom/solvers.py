"""Linear solves, windowed eigenvalues, operator norms and ``exp(-tB) v``.

All routines accept either nodal vectors on the whole mesh (Dirichlet
entries are then ignored on input and zero on output) or vectors on the free
nodes of the operator.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DiscreteOperator
from .defaults import DEFAULTS
from .errors import ArgumentError, SolverError

log = logging.getLogger(__name__)


@dataclass
class SolveReport:
    iterations: int
    residual: float
    reused: bool
    seconds: float
    method: str = "direct"
    history: list = field(default_factory=list, repr=False)


class Factorization:
    """Sparse LU of a square matrix, reusable for ``A x = b`` and
    ``A^H x = b``."""

    def __init__(self, A):
        self.A = sp.csc_matrix(A, dtype=complex)
        try:
            self.lu = spla.splu(self.A)
        except RuntimeError as exc:  # singular matrix
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, b, adjoint: bool = False) -> np.ndarray:
        return self.lu.solve(np.asarray(b, dtype=complex), trans="H" if adjoint else "N")


def _free_view(op: DiscreteOperator, x):
    x = np.asarray(x)
    if x.shape[0] == op.n_free:
        return x, False
    if x.shape[0] == op.n:
        return x[op.free], True
    raise ArgumentError(f"vector of length {x.shape[0]} fits neither {op.n} nodes nor {op.n_free} free nodes")


def factorization(op: DiscreteOperator) -> tuple[Factorization, bool]:
    """Cached factorization of ``op.system``; second value tells reuse."""
    f = op._cache.get("lu")
    if f is not None:
        return f, True
    f = Factorization(op.system.csr)
    op._cache["lu"] = f
    return f, False


def solve(op: DiscreteOperator, rhs, tol: float = DEFAULTS["solve_tol"], method: str = "auto",
          adjoint: bool = False, record: bool = False):
    """Solve ``A x = rhs`` (or ``A^H x = rhs``) to relative residual ``tol``.

    ``method`` is ``"direct"``, ``"cg"``, ``"bicgstab"`` or ``"auto"`` (direct
    up to the configured size, Krylov beyond).  With ``record`` the Krylov
    iterates are kept in ``report.history``.
    """
    t0 = time.perf_counter()
    b, expanded = _free_view(op, rhs)
    b = np.asarray(b, dtype=complex)
    A = op.system.csr
    AH = A.conj().T if adjoint else A
    nb = np.linalg.norm(b)
    if nb == 0:
        x = np.zeros_like(b)
        rep = SolveReport(0, 0.0, False, time.perf_counter() - t0, "trivial")
        return (op.expand(x) if expanded else x), rep
    if method == "auto":
        method = "direct" if op.n_free <= DEFAULTS["direct_max_unknowns"] else (
            "cg" if op.symmetry == "hermitian" else "bicgstab")
    history = []
    if method == "direct":
        fac, reused = factorization(op)
        x = fac.solve(b, adjoint)
        it = 1
        res = np.linalg.norm(b - AH @ x) / nb
        while res > tol and it < 4:  # iterative refinement
            x = x + fac.solve(b - AH @ x, adjoint)
            res = np.linalg.norm(b - AH @ x) / nb
            it += 1
    elif method in ("cg", "bicgstab"):
        reused = False
        if method == "cg" and op.symmetry != "hermitian":
            raise ArgumentError("conjugate gradients need a hermitian system")
        count = [0]

        def cb(xk):
            count[0] += 1
            if record:
                history.append(np.array(xk))

        d = A.diagonal()
        P = spla.LinearOperator(A.shape, matvec=lambda v: v / (d.conj() if adjoint else d), dtype=complex)
        solver = spla.cg if method == "cg" else spla.bicgstab
        x, info = solver(AH, b, rtol=tol * 0.5, atol=0.0, maxiter=20 * op.n_free + 100, M=P, callback=cb)
        it = count[0]
        res = np.linalg.norm(b - AH @ x) / nb
        if info != 0:
            raise SolverError(f"{method} stopped with info={info}",
                              SolveReport(it, res, False, time.perf_counter() - t0, method, history))
    else:
        raise ArgumentError(f"unknown solve method {method!r}")
    rep = SolveReport(it, float(res), reused, time.perf_counter() - t0, method, history)
    if res > tol:
        raise SolverError(f"relative residual {res:.2e} above {tol:.0e}", rep)
    return (op.expand(x) if expanded else x), rep


# ---------------------------------------------------------------------------
# eigenvalues


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray  # columns on the free nodes
    residuals: np.ndarray
    complete: bool = True
    shifts: list = field(default_factory=list)

    def __len__(self):
        return len(self.values)


def eig_residuals(A, M, values, vectors) -> np.ndarray:
    """``|A v - lambda M v| / |v|`` for each column."""
    R = A @ vectors - (M @ vectors) * values[None, :]
    return np.linalg.norm(R, axis=0) / np.linalg.norm(vectors, axis=0)


def _cluster(values, vectors, M, tol):
    """Merge near-equal eigenvalues; multiplicity = numerical rank of the
    cluster's eigenvectors in the M inner product."""
    order = np.lexsort((values.imag, values.real))
    values, vectors = values[order], vectors[:, order]
    out_v, out_x = [], []
    i = 0
    n = len(values)
    while i < n:
        j = i + 1
        while j < n and abs(values[j] - values[i]) <= tol * max(1.0, abs(values[i])):
            j += 1
        V = vectors[:, i:j]
        G = V.conj().T @ (M @ V)
        w, U = np.linalg.eigh((G + G.conj().T) / 2)
        keep = w > 1e-6 * w.max()
        # orthonormal basis of the cluster span
        B = V @ (U[:, keep] / np.sqrt(w[keep]))
        lam = np.full(B.shape[1], np.mean(values[i:j]))
        out_v.append(lam)
        out_x.append(B)
        i = j
    if not out_v:
        return np.zeros(0, complex), np.zeros((vectors.shape[0], 0), complex)
    return np.concatenate(out_v), np.concatenate(out_x, axis=1)


def _refine_values(A, M, vectors):
    """Rayleigh quotients (exact eigenvalue for exact eigenvectors)."""
    num = np.einsum("ij,ij->j", vectors.conj(), A @ vectors)
    den = np.einsum("ij,ij->j", vectors.conj(), M @ vectors)
    return num / den


def dense_eigs(op: DiscreteOperator, window=None):
    """All generalised eigenpairs from a dense solver (oracle path)."""
    A = op.system.toarray()
    M = op.mass_free.toarray().real
    if op.symmetry == "hermitian":
        w, V = sla.eigh(A.real if np.allclose(A.imag, 0) else A, M)
        w = w.astype(complex)
    else:
        w, V = sla.eig(A, M)
    V = V.astype(complex)
    sel = np.ones(len(w), dtype=bool)
    if window is not None:
        sel = (w.real >= window[0]) & (w.real <= window[1])
    w, V = w[sel], V[:, sel]
    order = np.lexsort((w.imag, w.real))
    w, V = w[order], V[:, order]
    return EigenResult(w, V, eig_residuals(op.system.csr, op.mass_free.csr, w, V))


def eigs_window(op: DiscreteOperator, window, k_max: int = 50, tol: float = DEFAULTS["eig_tol"],
                cluster_tol: float = DEFAULTS["eig_cluster_tol"], k_batch: int = 6) -> EigenResult:
    """Eigenvalues of ``A v = lambda M v`` with real part in ``window``.

    Shift-invert Arnoldi/Lanczos at shifts swept from the left end of the
    window: each batch of eigenvalues nearest a shift covers a disc, and the
    next shift is placed at the right edge of the covered part of the strip.
    Eigenvalues found more than once are merged.
    """
    lo, hi = (float(w) for w in window)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ArgumentError(f"bad eigenvalue window {window}")
    A = op.system.csr
    M = sp.csr_matrix(op.mass_free.csr, dtype=float)
    n = op.n_free
    if n == 0:
        return EigenResult(np.zeros(0, complex), np.zeros((0, 0), complex), np.zeros(0))
    if n < 4 * k_batch:
        # too small for Arnoldi with a useful batch size
        res = dense_eigs(op, (lo, hi))
        if len(res) > k_max:
            res = EigenResult(res.values[:k_max], res.vectors[:, :k_max], res.residuals[:k_max], False)
        return res
    herm = op.symmetry == "hermitian"
    found_v, found_x = [], []
    shifts = []
    s = lo
    k = k_batch
    y_seen = 0.0
    complete = True
    # fixed start vector: ARPACK's default is random, which breaks reproducibility
    v0 = np.random.default_rng(0).standard_normal(n)
    while True:
        k = min(k, n - 2)
        try:
            if herm:
                Ah = A.real.tocsc() if np.all(A.data.imag == 0) else A.tocsc()
                w, V = spla.eigsh(Ah, k=k, M=M, sigma=s, which="LM", tol=1e-13, v0=v0)
                w = w.astype(complex)
            else:
                w, V = spla.eigs(A.tocsc(), k=k, M=M, sigma=s, which="LM", tol=1e-13,
                                 v0=v0.astype(complex))
        except spla.ArpackNoConvergence as exc:
            raise SolverError(f"shift-invert iteration did not converge at shift {s}",
                              EigenResult(np.asarray(exc.eigenvalues), np.asarray(exc.eigenvectors),
                                          np.zeros(len(exc.eigenvalues)), False)) from exc
        shifts.append(s)
        V = V.astype(complex)
        w = _refine_values(A, M, V)
        found_v.append(w)
        found_x.append(V)
        rho = float(np.max(np.abs(w - s)))
        if not herm:
            y_seen = max(y_seen, float(np.max(np.abs(w.imag))))
        # covered strip of real parts: |Re - s| <= sqrt(rho^2 - y^2)
        reach = math.sqrt(max(rho**2 - (1.5 * y_seen) ** 2, 0.0)) if not herm else rho
        n_in = sum(int(np.sum((v.real >= lo) & (v.real <= hi))) for v in found_v)
        if s + reach >= hi:
            break
        if n_in > 2 * k_max:
            complete = False
            break
        if reach <= 1e-12 * max(1.0, abs(s)) or k < 2:
            k = 2 * k
            if k >= n - 2:
                complete = False
                break
            continue
        s = s + 0.9 * reach
    w = np.concatenate(found_v)
    V = np.concatenate(found_x, axis=1)
    sel = (w.real >= lo) & (w.real <= hi)
    w, V = _cluster(w[sel], V[:, sel], M, cluster_tol)
    if len(w):
        w = _refine_values(A, M, V) if herm else w
        if herm:
            w = w.real.astype(complex)
    order = np.lexsort((w.imag, w.real))
    w, V = w[order], V[:, order]
    if len(w) > k_max:
        w, V, complete = w[:k_max], V[:, :k_max], False
    res = eig_residuals(A, M, w, V) if len(w) else np.zeros(0)
    out = EigenResult(w, V, res, complete, shifts)
    if len(res) and res.max() > tol:
        raise SolverError(f"eigen residual {res.max():.2e} above {tol:.0e}", out)
    return out


# ---------------------------------------------------------------------------
# operator norms


@dataclass
class OpNormEstimate:
    value: float
    iterations: int
    converged: bool
    change: float

    def __float__(self):
        return float(self.value)


def _weighted_norm(x, M):
    if M is None:
        return float(np.linalg.norm(x))
    return math.sqrt(max(float(np.real(np.vdot(x, M @ x))), 0.0))


def opnorm_diff(apply, adjoint, n_dim: int, tol: float = DEFAULTS["opnorm_tol"], seed: int = 0,
                in_mass=None, out_norm=None, start=None,
                maxiter: int = DEFAULTS["opnorm_maxiter"]) -> OpNormEstimate:
    """Largest singular value of a linear map by power iteration on ``D^# D``.

    ``apply(x)`` maps input vectors of length ``n_dim`` to outputs;
    ``adjoint(y)`` must be the adjoint with respect to the two inner
    products: the input one is ``x^H in_mass x`` (Euclidean when None), the
    output norm is ``out_norm(y)`` (Euclidean when None).  Every iterate
    gives a lower bound; iteration stops once the estimate changes by less
    than ``tol/100`` relative.
    """
    rng = np.random.default_rng(seed)
    if start is None:
        x = rng.standard_normal(n_dim) + 1j * rng.standard_normal(n_dim)
    else:
        x = np.asarray(start, dtype=complex).copy()
    onorm = (lambda y: float(np.linalg.norm(y))) if out_norm is None else out_norm
    nx = _weighted_norm(x, in_mass)
    if nx == 0:
        raise ArgumentError("start vector is zero")
    x = x / nx
    prev = None
    best = 0.0
    change = math.inf
    for it in range(1, maxiter + 1):
        y = apply(x)
        sigma = onorm(y)
        best = max(best, sigma)
        if sigma == 0:
            return OpNormEstimate(0.0, it, True, 0.0)
        if prev is not None:
            change = abs(sigma - prev) / sigma
            if change <= 1e-2 * tol:
                return OpNormEstimate(best, it, True, change)
        prev = sigma
        z = adjoint(y)
        nz = _weighted_norm(z, in_mass)
        if nz == 0:
            return OpNormEstimate(best, it, True, 0.0)
        x = z / nz
    raise SolverError(f"power iteration did not settle in {maxiter} steps (change {change:.1e})",
                      OpNormEstimate(best, maxiter, False, change))


# ---------------------------------------------------------------------------
# exp(-t B) v


def _cn_factor(op: DiscreteOperator, dt: float) -> Factorization:
    cache = op._cache.setdefault("cn", {})
    f = cache.get(dt)
    if f is None:
        f = Factorization(op.mass_free.csr + (dt / 2) * op.system.csr)
        cache[dt] = f
    return f


def _cn_run(op, t, v, n, adjoint):
    dt = t / n
    fac = _cn_factor(op, dt)
    M = op.mass_free.csr
    S = op.system.csr.conj().T if adjoint else op.system.csr
    y = v.copy()
    # damp the stiff modes: two backward Euler half steps replace each of the
    # first two Crank-Nicolson steps (same matrix M + dt/2 S)
    n_be = min(n, 2)
    for _ in range(2 * n_be):
        y = fac.solve(M @ y, adjoint)
    for _ in range(n - n_be):
        y = fac.solve(M @ y - (dt / 2) * (S @ y), adjoint)
    return y


def _expm_chunk(op, tau, x, tol, adjoint, base_step, max_steps):
    """One chunk of length ``tau`` with step doubling; the cache remembers
    the accepted step count for ``tau`` so later calls start near it."""
    M = op.mass_free.csr
    nv = _weighted_norm(x, M)
    if nv == 0:
        return np.zeros_like(x)
    known = op._cache.setdefault("expm_steps", {})
    n = known.get((tau, tol), max(2, int(math.ceil(tau / base_step - 1e-9))) * 2) // 2
    y_prev = _cn_run(op, tau, x, n, adjoint)
    while True:
        n *= 2
        if n > max_steps:
            raise SolverError(f"step size underflow in exp(-tB)v (chunk {tau})")
        y = _cn_run(op, tau, x, n, adjoint)
        if _weighted_norm(y - y_prev, M) / 3 <= tol * nv:
            known[(tau, tol)] = max(known.get((tau, tol), 0), n)
            return y
        y_prev = y


def expm_apply(op: DiscreteOperator, t: float, v, tol: float = DEFAULTS["expm_tol"],
               adjoint: bool = False, base_step: float = DEFAULTS["expm_base_step"],
               chunk: float = DEFAULTS["expm_chunk"], max_steps: int = 2**16) -> np.ndarray:
    """``exp(-t B) v`` where ``B = M^{-1} S`` and ``S`` is ``op.system``.

    ``[0, t]`` is cut into equal chunks no longer than ``chunk``.  Each chunk
    runs Crank-Nicolson with a damped start, doubling the step count until
    two successive answers agree to ``tol`` relative to the chunk's input
    (mass norm), so accuracy is relative even when ``exp(-tB) v`` is tiny.
    With ``adjoint`` the mass-adjoint semigroup ``exp(-t B^#)`` is applied.
    """
    t = float(t)
    if t < 0:
        raise ArgumentError("t must be non-negative")
    x, expanded = _free_view(op, v)
    y = np.asarray(x, dtype=complex).copy()
    if t > 0:
        m = max(1, int(math.ceil(t / chunk - 1e-9)))
        tau = t / m
        for _ in range(m):
            y = _expm_chunk(op, tau, y, tol, adjoint, base_step, max_steps)
    return op.expand(y) if expanded else y
