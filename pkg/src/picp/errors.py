"""Exception types raised across the library."""


class PicpError(Exception):
    """Base class for every library-specific failure."""


class NotSkewSymmetric(PicpError):
    """Matrix handed to vee() is not skew-symmetric at working precision."""


class AngleNearPi(PicpError):
    """Rotation logarithm requested within tolerance of the 180-degree cut.

    The prior and the estimate are close to antipodal; the small-disagreement
    model behind the rotational penalty no longer applies, so the caller must
    treat the registration step as failed rather than mask it.
    """


class JacobianSingular(PicpError):
    """Inverse left Jacobian evaluated at or beyond its 2*pi singularity."""


class EmptyCloud(PicpError):
    """Operation requires a non-empty point cloud."""


class TooFewPoints(PicpError):
    """Cloud too small for the requested neighborhood size."""


class SingularCovariance(PicpError):
    """Covariance matrix not invertible at working precision (rcond < 1e-12)."""


class NoCorrespondences(PicpError):
    """Every scan point fell outside the correspondence distance gate."""

    def __init__(self, message, last_pose=None):
        super().__init__(message)
        self.last_pose = last_pose


class DegenerateNormalEquations(PicpError):
    """Damped normal equations remained unsolvable after all retries."""

    def __init__(self, message, last_pose=None):
        super().__init__(message)
        self.last_pose = last_pose


class MalformedFile(PicpError):
    """File parse failure; carries the offending location."""

    def __init__(self, message, path=None, line=None, offset=None):
        loc = str(path) if path is not None else "<data>"
        if line is not None:
            loc += f":{line}"
        if offset is not None:
            loc += f" (byte {offset})"
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.line = line
        self.offset = offset


class InvalidCovariance(MalformedFile):
    """Covariance parsed from a prior record is not positive semi-definite."""


class TrajectoryTooShort(PicpError):
    """Trajectory cannot support any of the requested segment lengths."""
