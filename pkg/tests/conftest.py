from __future__ import annotations

import functools

import pytest

from perfhom.geometry import BoundaryKind, DomainSpec, PerforationSpec
from perfhom.mesh import fill_holes, mesh_perforated


@functools.lru_cache(maxsize=None)
def cached_pair(eps: float, h_far: float, alpha: complex = 1.0, box=(1.0, 1.0)):
    domain = DomainSpec(2, box) if box[0] == box[1] else DomainSpec.strip(*box)
    spec = PerforationSpec(domain, eps, BoundaryKind.robin(alpha))
    perf = mesh_perforated(spec, h_far)
    return spec, perf, fill_holes(perf)


@pytest.fixture(scope="session")
def robin_pair():
    """Unit square, eps = 1/4 (one hole of radius 1/16), Robin alpha = 1."""
    return cached_pair(0.25, 0.125)


@pytest.fixture(scope="session")
def robin_pair_9():
    """Unit square, eps = 1/8 (nine holes), Robin alpha = 1."""
    return cached_pair(0.125, 0.0625)
