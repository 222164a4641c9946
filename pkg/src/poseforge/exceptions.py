"""Exception types raised across the toolkit.

Everything inherits from :class:`PoseForgeError` so callers can catch the
whole family; the subclasses distinguish failure modes that tests and the
CLI treat differently.
"""


class PoseForgeError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateInputError(PoseForgeError, ValueError):
    """Input is structurally unusable (zero quaternion, coplanar/collinear
    point sets, too few points)."""


class InvalidRotationError(PoseForgeError, ValueError):
    """A 3x3 matrix is not a proper rotation within tolerance."""


class BehindCameraError(PoseForgeError):
    """A point has non-positive depth in the camera frame."""


class ModelParseError(PoseForgeError):
    """A model or cloud file failed to parse.

    ``line`` is the 1-based offending line number, or None when the failure
    is not tied to a line (e.g. missing file).
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class VfmtError(PoseForgeError):
    """A VFMT tensor file or its sidecar is malformed."""


class DimensionMismatchError(PoseForgeError, ValueError):
    """Descriptor / feature dimensions do not agree."""


class InsufficientCorrespondencesError(PoseForgeError):
    """Fewer 2D-3D pairs survived than the pose solver minimum."""


class ConsensusFailureError(PoseForgeError):
    """RANSAC found no hypothesis with enough inliers."""


class SingularSystemError(PoseForgeError):
    """Normal equations stayed singular after the damped retry."""


class GatingFailureError(PoseForgeError):
    """ICP found zero correspondences inside the gating distance.

    ``iteration`` is the 0-based ICP iteration at which gating failed.
    """

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class DegenerateOutputError(PoseForgeError):
    """The regressor produced an unusable raw output (near-zero quaternion)."""


class NumericError(PoseForgeError):
    """Non-finite values appeared during training; message names the site."""


class ConfigRejectedError(PoseForgeError, ValueError):
    """A scene or run configuration cannot produce a usable scene."""
