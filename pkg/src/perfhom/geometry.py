"""Perforated-domain geometry.

A box ``Omega = [0, L_1] x ... x [0, L_d]`` is perforated by closed balls of
radius ``a`` centred on the points of the lattice ``2*eps*Z^d`` that keep a
distance larger than ``eps`` from the boundary.  The hole radius follows one
of the critical scalings below, each of which produces a non-trivial
zero-order term ``mu`` in the homogenised operator ``-Laplace + 1 + mu``.

===========  =====================  ===============================
condition    hole radius            mu
===========  =====================  ===============================
Dirichlet    exp(-1/eps^2)   (d=2)  pi/2
Dirichlet    eps^(d/(d-2))   (d>2)  (d-2) S_d / 2^d
Neumann      eps^p, p > 1           0
Robin(al)    eps^(d/(d-1))          al S_d / 2^d
===========  =====================  ===============================

``S_d`` is the surface area of the unit sphere in ``R^d``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .defaults import DEFAULTS
from .errors import ArgumentError, GeometryError


class BCType(enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    ROBIN = "robin"


@dataclass(frozen=True)
class BoundaryKind:
    """Boundary condition on the hole (and, by default, outer) boundary.

    ``alpha`` is the Robin coefficient in ``du/dnu + alpha*u = 0`` and must be
    given exactly when ``kind`` is Robin.
    """

    kind: BCType
    alpha: complex | None = None

    def __post_init__(self):
        kind = BCType(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is BCType.ROBIN:
            if self.alpha is None:
                raise ArgumentError("Robin condition needs alpha")
            alpha = complex(self.alpha)
            if alpha == 0:
                raise ArgumentError("Robin coefficient alpha must be non-zero")
            if alpha.real < 0:
                raise ArgumentError("Robin coefficient needs Re(alpha) >= 0")
            object.__setattr__(self, "alpha", alpha)
        elif self.alpha is not None:
            raise ArgumentError(f"{kind.value} condition carries no alpha")

    @classmethod
    def dirichlet(cls) -> "BoundaryKind":
        return cls(BCType.DIRICHLET)

    @classmethod
    def neumann(cls) -> "BoundaryKind":
        return cls(BCType.NEUMANN)

    @classmethod
    def robin(cls, alpha) -> "BoundaryKind":
        return cls(BCType.ROBIN, complex(alpha))

    @property
    def is_robin(self) -> bool:
        return self.kind is BCType.ROBIN

    @property
    def robin_coefficient(self) -> complex:
        """alpha for Robin, 0 otherwise (what multiplies the boundary mass)."""
        return self.alpha if self.kind is BCType.ROBIN else 0j

    def label(self) -> str:
        if self.kind is BCType.ROBIN:
            return f"robin({format_complex(self.alpha)})"
        return self.kind.value


class DomainShape(enum.Enum):
    RECTANGLE = "rectangle"
    STRIP = "strip"


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned box ``[0, box[0]] x ... x [0, box[d-1]]``."""

    dim: int
    box: tuple[float, ...]
    shape: DomainShape = DomainShape.RECTANGLE

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ArgumentError(f"dimension must be 2 or 3, got {self.dim}")
        box = tuple(float(v) for v in self.box)
        if len(box) != self.dim:
            raise ArgumentError("box needs one extent per coordinate")
        if any(not (v > 0 and math.isfinite(v)) for v in box):
            raise ArgumentError("box extents must be positive and finite")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "shape", DomainShape(self.shape))

    @classmethod
    def unit_square(cls) -> "DomainSpec":
        return cls(2, (1.0, 1.0))

    @classmethod
    def strip(cls, length: float, width: float = 1.0) -> "DomainSpec":
        return cls(2, (float(length), float(width)), DomainShape.STRIP)

    @property
    def volume(self) -> float:
        return float(np.prod(self.box))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.box))))

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all((x >= 0) & (x <= np.asarray(self.box)), axis=1)

    def boundary_distance(self, x) -> np.ndarray:
        """Distance to the box boundary for points inside the closed box."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.min(np.minimum(x, np.asarray(self.box) - x), axis=1)


@dataclass(frozen=True)
class PerforationSpec:
    """Complete statement of one perforated-domain problem.

    ``radius_override`` replaces the critical scaling; such runs are flagged
    :attr:`off_scaling` and reported as such.
    """

    domain: DomainSpec
    epsilon: float
    bc: BoundaryKind
    neumann_exponent: float = DEFAULTS["neumann_exponent"]
    radius_override: float | None = None

    def __post_init__(self):
        eps = float(self.epsilon)
        if not 0 < eps < 1:
            raise ArgumentError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        object.__setattr__(self, "epsilon", eps)
        if not self.neumann_exponent > 1:
            raise ArgumentError("Neumann radius exponent must exceed 1")
        if self.radius_override is not None and not self.radius_override > 0:
            raise ArgumentError("radius_override must be positive")
        # raises if the radius rule is incompatible with eps
        hole_radius(self)

    @property
    def off_scaling(self) -> bool:
        return self.radius_override is not None

    @property
    def hole_radius(self) -> float:
        return hole_radius(self)

    @property
    def dim(self) -> int:
        return self.domain.dim


@dataclass(frozen=True)
class CellGeometry:
    """Periodicity cell around one lattice point.

    hole ``B_a(center)`` inside ball ``B_eps(center)`` inside cube
    ``center + eps*[-1, 1]^d``.
    """

    center: tuple[float, ...]
    hole_radius: float
    epsilon: float

    @property
    def cube_side(self) -> float:
        return 2.0 * self.epsilon

    def cube_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        return c - self.epsilon, c + self.epsilon


@dataclass(frozen=True)
class StrangeTerm:
    mu: complex
    iota: BoundaryKind
    dim: int
    S_d: float = field(default=0.0)


def hole_radius(spec: PerforationSpec) -> float:
    """Hole radius for ``spec``; ``0 < a < eps`` is enforced."""
    eps, d, bc = spec.epsilon, spec.domain.dim, spec.bc
    if spec.radius_override is not None:
        a = float(spec.radius_override)
    elif bc.kind is BCType.DIRICHLET:
        a = math.exp(-1.0 / eps**2) if d == 2 else eps ** (d / (d - 2))
    elif bc.kind is BCType.ROBIN:
        a = eps ** (d / (d - 1))
    else:
        a = eps ** spec.neumann_exponent
    if not a > 0:
        raise GeometryError(f"hole radius underflows to zero at eps={eps}")
    if a >= eps:
        raise GeometryError(f"hole radius {a:.6g} does not fit inside the cell (eps={eps})")
    return a


def lattice_centers(domain: DomainSpec, epsilon: float) -> list[tuple[float, ...]]:
    """Points of ``2*eps*Z^d`` at distance ``> eps`` from the box boundary.

    Returned in lexicographic order.  Exact ties (distance equal to ``eps`` up
    to rounding) are excluded.
    """
    eps = float(epsilon)
    if not 0 < eps < 1:
        raise ArgumentError(f"epsilon must lie in (0, 1), got {epsilon}")
    margin = eps * (1 + 1e-12)
    axes = []
    for length in domain.box:
        m_max = int(math.floor(length / (2 * eps))) + 1
        m = np.arange(0, m_max + 1)
        x = 2 * eps * m
        keep = (x > margin) & (length - x > margin)
        axes.append(x[keep])
    if any(len(ax) == 0 for ax in axes):
        return []
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    order = np.lexsort(pts.T[::-1])
    return [tuple(float(v) for v in p) for p in pts[order]]


def cells(spec: PerforationSpec) -> list[CellGeometry]:
    a = hole_radius(spec)
    return [CellGeometry(c, a, spec.epsilon) for c in lattice_centers(spec.domain, spec.epsilon)]


def surface_area_unit_ball(d: int) -> float:
    """Surface area of the unit sphere in ``R^d``: ``d*pi^(d/2)/Gamma(d/2+1)``."""
    if int(d) != d or d < 2:
        raise ArgumentError(f"dimension must be an integer >= 2, got {d}")
    d = int(d)
    if d == 2:
        return 2 * math.pi
    if d == 3:
        return 4 * math.pi
    return d * math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def strange_term(bc: BoundaryKind, d: int) -> StrangeTerm:
    S_d = surface_area_unit_ball(d)
    if bc.kind is BCType.NEUMANN:
        mu = 0j
    elif bc.kind is BCType.DIRICHLET:
        mu = complex(math.pi / 2) if d == 2 else complex((d - 2) * S_d / 2**d)
    else:
        mu = bc.alpha * S_d / 2**d
    return StrangeTerm(mu=mu, iota=bc, dim=d, S_d=S_d)


class Region(enum.IntEnum):
    # ordering is the tie-break priority (smaller value wins)
    HOLE = 0
    ANNULUS = 1
    BULK = 2
    OUTSIDE = 3


def classify_points(x, spec: PerforationSpec, centers=None) -> np.ndarray:
    """Vectorised :func:`classify_point`; returns an int array of Region codes."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if centers is None:
        centers = lattice_centers(spec.domain, spec.epsilon)
    a, eps = hole_radius(spec), spec.epsilon
    out = np.where(spec.domain.contains(x), int(Region.BULK), int(Region.OUTSIDE))
    if len(centers) == 0:
        return out
    c = np.asarray(centers, dtype=float)
    # centres live on 2*eps*Z^d: round to the nearest lattice point and look it up
    idx = np.rint(x / (2 * eps)).astype(np.int64)
    keys = {tuple(np.rint(ci / (2 * eps)).astype(np.int64)): k for k, ci in enumerate(c)}
    for n in range(len(x)):
        k = keys.get(tuple(idx[n]))
        if k is None:
            continue
        r = float(np.linalg.norm(x[n] - c[k]))
        if r <= a:
            out[n] = int(Region.HOLE)
        elif r <= eps:
            out[n] = int(Region.ANNULUS)
    return out


def classify_point(x, spec: PerforationSpec, centers=None) -> Region:
    """Region of a single point: hole, annulus ``B_eps \\ B_a``, bulk, or outside.

    Points on a shared boundary go to the smaller region (hole before annulus
    before bulk).
    """
    return Region(int(classify_points([x], spec, centers)[0]))


def holes_volume(spec: PerforationSpec) -> float:
    """Exact measure of the union of holes (balls do not overlap)."""
    n = len(lattice_centers(spec.domain, spec.epsilon))
    d = spec.domain.dim
    a = hole_radius(spec)
    return n * surface_area_unit_ball(d) / d * a**d


def format_complex(z: complex) -> str:
    """Render ``z`` as ``re+imi`` (the CSV/config convention)."""
    z = complex(z)
    sign = "+" if z.imag >= 0 or math.isnan(z.imag) else "-"
    return f"{z.real:.17g}{sign}{abs(z.imag):.17g}i"


def parse_complex(text) -> complex:
    """Parse ``re+imi`` / ``re-imi`` / a plain real number.

    Whitespace around the sign is allowed; anything else (``j`` suffix,
    repeated signs, stray characters) is rejected.
    """
    if isinstance(text, (int, float, complex)) and not isinstance(text, bool):
        return complex(text)
    s = str(text).strip()
    num = r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
    m = re.fullmatch(rf"([+-]?{num})(?:\s*([+-])\s*({num})?i)?", s)
    if m is None:
        m2 = re.fullmatch(rf"([+-]?)\s*({num})?i", s)
        if m2 is None:
            raise ArgumentError(f"cannot parse complex number {text!r}")
        mag = float(m2.group(2)) if m2.group(2) else 1.0
        return complex(0.0, -mag if m2.group(1) == "-" else mag)
    re_part = float(m.group(1))
    if m.group(2) is None:
        return complex(re_part, 0.0)
    im = float(m.group(3)) if m.group(3) else 1.0
    return complex(re_part, -im if m.group(2) == "-" else im)
