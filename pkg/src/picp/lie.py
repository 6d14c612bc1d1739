"""SO(3) primitives and rigid-transform types.

Rotations are stored as 3x3 matrices; tangent vectors (axis-angle 3-vectors)
are plain numpy arrays. ``hat`` builds the cross-product matrix of a vector
and ``vee`` inverts it, so ``vee(hat(x)) == x``. The exponential/logarithm
maps, the left Jacobian and its inverse all switch to Taylor expansions below
``SMALL_ANGLE`` to avoid cancellation in the trigonometric coefficients.
"""

import numpy as np

from .errors import AngleNearPi, JacobianSingular, NotSkewSymmetric

# Below this angle the closed-form trig coefficients lose digits to
# cancellation; use their Taylor expansions (two terms past leading).
SMALL_ANGLE = 1e-6

# Orthonormality residual allowed on construction, and the tighter threshold
# beyond which a matrix is re-projected onto SO(3) by polar decomposition.
ORTHONORMAL_ATOL = 1e-9
REPROJECT_ATOL = 1e-12


def hat(phi):
    """Cross-product matrix of a 3-vector: hat(phi) @ v == cross(phi, v)."""
    x, y, z = np.asarray(phi, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(matrix):
    """Inverse of hat(); raises NotSkewSymmetric if matrix + matrix.T != 0."""
    m = np.asarray(matrix, dtype=float)
    if np.linalg.norm(m + m.T) > 1e-9:
        raise NotSkewSymmetric("matrix is not skew-symmetric within 1e-9")
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(phi):
    """Exponential map so(3) -> SO(3) (Rodrigues formula)."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    theta = np.sqrt(theta2)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    k = hat(phi)
    return Rotation(np.eye(3) + a * k + b * (k @ k))


def log_so3(rotation):
    """Logarithm map SO(3) -> so(3); returns a vector with norm in [0, pi).

    Raises AngleNearPi when trace(R) <= -1 + 1e-9, i.e. the angle is within
    numerical reach of pi where the axis becomes ambiguous.
    """
    m = rotation.matrix if isinstance(rotation, Rotation) else np.asarray(rotation, dtype=float)
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace <= -1.0 + 1e-9:
        raise AngleNearPi(f"rotation angle within tolerance of pi (trace={trace:.12g})")
    cos_theta = min((trace - 1.0) / 2.0, 1.0)
    theta = np.arccos(cos_theta)
    axis_times_sin = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) / 2.0
    if theta < SMALL_ANGLE:
        theta2 = theta * theta
        scale = 1.0 + theta2 / 6.0 + 7.0 * theta2 * theta2 / 360.0
    else:
        scale = theta / np.sin(theta)
    return scale * axis_times_sin


def left_jacobian(beta):
    """Left Jacobian J of SO(3); satisfies J(beta) @ beta == beta."""
    beta = np.asarray(beta, dtype=float)
    theta2 = float(beta @ beta)
    theta = np.sqrt(theta2)
    if theta < SMALL_ANGLE:
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
        c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    else:
        b = (1.0 - np.cos(theta)) / theta2
        c = (theta - np.sin(theta)) / (theta2 * theta)
    k = hat(beta)
    return np.eye(3) + b * k + c * (k @ k)


def left_jacobian_inv(beta):
    """Inverse left Jacobian; closed form is singular at ||beta|| = 2*pi."""
    beta = np.asarray(beta, dtype=float)
    theta2 = float(beta @ beta)
    theta = np.sqrt(theta2)
    if theta >= 2.0 * np.pi - 1e-6:
        raise JacobianSingular(f"inverse left Jacobian singular at ||beta||={theta:.9g}")
    if theta < SMALL_ANGLE:
        c = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    else:
        half = theta / 2.0
        # (1 - (theta/2)/tan(theta/2)) / theta^2, stable through theta = pi.
        c = (1.0 - half / np.tan(half)) / theta2
    k = hat(beta)
    return np.eye(3) - 0.5 * k + c * (k @ k)


def right_jacobian_inv(beta):
    """Inverse right Jacobian, J_r(beta)^-1 = J_l(-beta)^-1."""
    return left_jacobian_inv(-np.asarray(beta, dtype=float))


def rotation_error(c_s, c_i):
    """Tangent-space difference between two rotations: log(c_s @ c_i^T)."""
    return log_so3(c_s @ c_i.inverse())


def yaw_pitch_roll(rotation):
    """ZYX Euler angles (yaw, pitch, roll) of a rotation, radians.

    Decomposition R = Rz(yaw) @ Ry(pitch) @ Rx(roll); no special handling at
    the |pitch| = pi/2 gimbal singularity.
    """
    m = rotation.matrix if isinstance(rotation, Rotation) else np.asarray(rotation, dtype=float)
    yaw = np.arctan2(m[1, 0], m[0, 0])
    pitch = -np.arcsin(np.clip(m[2, 0], -1.0, 1.0))
    roll = np.arctan2(m[2, 1], m[2, 2])
    return yaw, pitch, roll


def _project_so3(matrix):
    """Closest rotation in Frobenius norm (SVD-based polar decomposition)."""
    u, _, vt = np.linalg.svd(matrix)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


class Rotation:
    """3x3 rotation matrix with enforced orthonormality and unit determinant.

    Construction validates ||R^T R - I||_F <= atol and |det - 1| <= atol.
    Residuals above 1e-12 (drift from composition chains) are repaired by
    polar projection. Instances are immutable and safe to share.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix, atol=ORTHONORMAL_ATOL):
        m = np.array(matrix, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("rotation requires a finite 3x3 matrix")
        residual = np.linalg.norm(m.T @ m - np.eye(3))
        if residual > atol or abs(np.linalg.det(m) - 1.0) > atol:
            raise ValueError(
                f"matrix is not a rotation (orthonormality residual {residual:.3g}, "
                f"det {np.linalg.det(m):.12g})"
            )
        if residual > REPROJECT_ATOL:
            m = _project_so3(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, name, value):
        raise AttributeError("Rotation is immutable")

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def from_matrix(cls, matrix, atol=ORTHONORMAL_ATOL):
        return cls(matrix, atol=atol)

    def __matmul__(self, other):
        return Rotation(self.matrix @ other.matrix)

    def inverse(self):
        return Rotation(self.matrix.T.copy())

    def apply(self, points):
        """Rotate a 3-vector or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.matrix @ pts
        return pts @ self.matrix.T

    def __repr__(self):
        return f"Rotation({self.matrix.tolist()})"


class RigidTransform:
    """SE(3) pose: rotation plus translation, applied as R @ p + t."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        if not isinstance(rotation, Rotation):
            rotation = Rotation(rotation)
        t = np.array(translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", t)

    def __setattr__(self, name, value):
        raise AttributeError("RigidTransform is immutable")

    @classmethod
    def identity(cls):
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix, atol=ORTHONORMAL_ATOL):
        """Build from a 4x4 or 3x4 homogeneous matrix."""
        m = np.asarray(matrix, dtype=float)
        return cls(Rotation(m[:3, :3], atol=atol), m[:3, 3])

    @classmethod
    def from_kitti_row(cls, values, atol=ORTHONORMAL_ATOL):
        """Build from 12 reals in row-major [R | t] order."""
        v = np.asarray(values, dtype=float).reshape(3, 4)
        return cls(Rotation(v[:, :3], atol=atol), v[:, 3])

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.translation
        return m

    def as_kitti_row(self):
        """12 reals in row-major [R | t] order."""
        return np.hstack([self.rotation.matrix, self.translation[:, None]]).ravel()

    def __matmul__(self, other):
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    def inverse(self):
        r_inv = self.rotation.inverse()
        return RigidTransform(r_inv, -r_inv.apply(self.translation))

    def apply(self, points):
        """Transform a 3-vector or an (N, 3) array of points."""
        return self.rotation.apply(points) + self.translation

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation!r}, translation={self.translation.tolist()})"
