"""Exception hierarchy shared by all perfhom modules."""

from __future__ import annotations


class PerfhomError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class ArgumentError(PerfhomError, ValueError):
    """An argument violates a documented precondition."""


class GeometryError(PerfhomError):
    """Geometric configuration cannot be realised (hole too large, unresolvable, ...)."""


class ResourceError(PerfhomError):
    """A requested discretisation exceeds the configured size cap."""


class MeshError(PerfhomError):
    """Generated mesh fails its quality audit.

    The offending :class:`~perfhom.mesh.MeshQualityReport` is attached as
    ``report``.
    """

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class AssemblyError(PerfhomError):
    pass


class SolverError(PerfhomError):
    """A linear/eigen/exponential solve failed.

    ``report`` carries whatever diagnostics were available (a SolveReport, a
    partial EigenResult, or a best lower bound).
    """

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class ValidationError(PerfhomError):
    """Configuration or input file rejected before any computation."""
