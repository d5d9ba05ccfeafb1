"""Exception hierarchy shared by every stitchsim module."""


class StitchSimError(Exception):
    """Base class for all errors raised by stitchsim."""


class ValidationError(StitchSimError, ValueError):
    """Input violates a documented precondition or type invariant."""


class DxfParseError(StitchSimError):
    """Malformed or truncated DXF text.

    ``line`` is the 1-based line number of the offending group code, when known.
    """

    def __init__(self, message, line=None, kind=None):
        self.line = line
        self.kind = kind
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ThreadError(ValidationError):
    """The drawing does not describe a usable seam/contour pair."""


class GarmentNotFound(StitchSimError):
    """No sufficiently large foreground component in an overhead frame."""


class TrackingLost(StitchSimError):
    """The edge sensor dropped out for longer than the controller tolerates."""
