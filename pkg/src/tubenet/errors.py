"""Exception and warning types shared across the package."""


class TubenetError(Exception):
    """Base class for all package errors."""


# --- graph / geometry -------------------------------------------------------

class GraphSpecError(TubenetError):
    """Invalid tube-graph description."""


class DisconnectedGraph(GraphSpecError):
    pass


class NonSolitaryPort(GraphSpecError):
    pass


class StenosisTooCloseToNode(GraphSpecError):
    pass


class ThicknessOutOfRange(GraphSpecError):
    pass


class InvalidDeadNode(GraphSpecError):
    """Dead (chain) nodes must join two collinear edges of equal thickness."""


class OverlapError(TubenetError):
    """Two channel rectangles overlap away from a shared node."""


class ZoomOverlap(TubenetError):
    """Zoom zones collide for the requested cut distance."""


# --- meshing / linear algebra -----------------------------------------------

class MeshQualityFailure(TubenetError):
    def __init__(self, worst_angle_deg, where=""):
        self.worst_angle_deg = worst_angle_deg
        super().__init__(
            f"mesh quality failure: worst angle {worst_angle_deg:.2f} deg {where}".rstrip()
        )


class TooCoarse(TubenetError):
    pass


class SingularSystem(TubenetError):
    pass


class ResidualTooLarge(TubenetError):
    pass


class UnknownTag(TubenetError):
    pass


class ConstraintConflict(TubenetError):
    pass


# --- solvers ------------------------------------------------------------------

class IncompatibleFlux(TubenetError):
    """Prescribed port fluxes do not balance."""


class FloatingNetwork(TubenetError):
    pass


class NonClosedBoundaryIntegral(TubenetError):
    pass


class OutsideChannel(TubenetError):
    pass


class UncoveredPoint(TubenetError):
    pass


class OrderUnsupported(TubenetError):
    pass


class SolvabilityViolation(TubenetError):
    pass


class TruncationTooShort(TubenetError):
    pass


class WindowOutsideBranch(TubenetError):
    pass


class SetupMismatch(TubenetError):
    pass


class SlopeUndefined(TubenetError):
    pass


class ConfigError(TubenetError):
    """Malformed experiment configuration."""


class PecletWarning(UserWarning):
    """Cell Peclet number exceeds the plain-Galerkin safety threshold."""
