"""Error hierarchy shared by the library and the CLI."""


class MCPAError(Exception):
    """Base class for every error raised by mcpa."""


class BehindCamera(MCPAError):
    """Point has non-positive depth in the camera frame."""


class DegenerateParallax(MCPAError):
    """Base rays are parallel (theta below threshold)."""


class IllConditioned(MCPAError):
    """Linear system too badly conditioned to give a reliable point."""


class ZeroCovariance(MCPAError):
    """Covariance is numerically zero, so its shape is undefined."""


class NoValidPair(MCPAError):
    """No observation pair of a track yields a usable base."""


class LinearSolveFailure(MCPAError):
    """Damped normal equations stayed indefinite while raising lambda."""


class EmptyProblem(MCPAError):
    """No track survived visibility filtering."""


class ParseError(MCPAError):
    """Malformed input file. ``location`` names the offending line or record."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class VersionMismatch(MCPAError):
    """File carries an unknown version tag."""


class InconsistentRig(MCPAError):
    """Two images were mapped to the same (pose_id, camera_id) slot."""


class UnsupportedCameraModel(ParseError):
    """COLMAP camera model other than a pinhole variant."""
