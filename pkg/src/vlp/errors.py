"""Exception hierarchy shared by all vlp modules."""


class VLPError(Exception):
    """Base class for every error raised by this package."""


class DomainError(VLPError, ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateGeometryError(VLPError):
    """Image points coincide, so no baseline or bearing can be formed."""


class UnsupportedConfigurationError(VLPError):
    """The lamp layout violates an assumption (e.g. lamps not coplanar)."""


class InsufficientAnchorsError(VLPError):
    """Fewer than two identified lamps are available."""


class DegenerateLayoutError(VLPError):
    """No lamp pair differs in both world x and world y."""


class UnresolvableStripeError(VLPError):
    """The modulation period is shorter than one sensor row."""


class NoSignalError(VLPError):
    """The region of interest contains no bright pixels."""


class AmbiguousIdError(VLPError):
    """More than one luminaire record matches a feature vector."""


class DatabaseCollisionError(VLPError):
    """Two records of a luminaire database cannot be told apart."""


class NoMassError(VLPError):
    """The search window holds zero back-projection weight."""


class StateCorruptionError(VLPError):
    """A Kalman covariance lost symmetry or positive semi-definiteness."""


class WireFormatError(VLPError):
    """Bytes on the wire do not decode to a valid message."""


class UnknownServiceError(VLPError):
    """No node advertises the requested service."""


class ServiceTimeoutError(VLPError, TimeoutError):
    """A service call did not receive its response in time."""


class TransportError(VLPError):
    """The transport failed underneath a running pipeline."""


class NotVisibleError(VLPError):
    """A world point lies outside the camera's view."""
