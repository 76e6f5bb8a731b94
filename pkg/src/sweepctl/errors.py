"""Exception types raised across the package."""


class SweepError(Exception):
    """Base class for all package errors."""


class InfeasiblePoint(SweepError):
    """A point violates a facet inequality by more than ``feas_tol``."""


class EmptyPolyhedron(SweepError):
    """A polyhedron has no strictly interior point."""


class DegenerateActiveSystem(SweepError):
    """No active subset produced a consistent KKT system."""


class NotInCone(SweepError):
    """A vector is not in the normal cone within ``cone_tol``."""


class SimulationFailed(SweepError):
    """Catch-up simulation could not be completed."""


class ConeResidual(SimulationFailed):
    """Multiplier recovery along a trajectory exceeded ``cone_tol``."""


class InvalidControl(SweepError, ValueError):
    """A control path violates its set, rate or norm-band constraints."""


class BadMesh(SweepError, ValueError):
    """A mesh is too coarse or malformed."""


class UnsupportedSet(SweepError):
    """The requested operation is not defined for this constraint set."""


class NoCertificate(SweepError):
    """Neither the normal nor the abnormal fit met the tolerances.

    The best attempt is attached so that callers can still report it.
    """

    def __init__(self, message, certificate=None, report=None):
        super().__init__(message)
        self.certificate = certificate
        self.report = report
