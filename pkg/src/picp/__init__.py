"""Point-cloud registration with GNSS/IMU prior penalties.

The registration cost couples the geometric point-to-Gaussian alignment
term with a translation penalty anchored to a GNSS position prior and a
tangent-space rotational penalty anchored to an IMU orientation prior,
weighted by their sensor covariances. Includes synthetic scenes for
verification, sequential odometry, trajectory metrics, and a CLI.
"""

from .errors import (
    AngleNearPi,
    DegenerateNormalEquations,
    EmptyCloud,
    InvalidCovariance,
    JacobianSingular,
    MalformedFile,
    NoCorrespondences,
    NotSkewSymmetric,
    PicpError,
    SingularCovariance,
    TooFewPoints,
    TrajectoryTooShort,
)
from .evaluation import (
    SegmentError,
    Trajectory,
    TrajectoryMetrics,
    accumulate,
    kitti_metrics,
    relative_motions,
)
from .lie import (
    RigidTransform,
    Rotation,
    exp_so3,
    hat,
    left_jacobian,
    left_jacobian_inv,
    log_so3,
    rotation_error,
    vee,
    yaw_pitch_roll,
)
from .penalties import (
    PenaltyWeights,
    Priors,
    RotationPrior,
    TranslationPrior,
    rotation_penalty,
    rotation_penalty_residual,
    translation_penalty,
    translation_penalty_residual,
)
from .pointcloud import (
    PointCloud,
    SpatialIndex,
    build_index,
    estimate_covariances,
    merge_clouds,
    nearest,
)
from .registration import (
    Correspondence,
    OdometryStep,
    RegistrationConfig,
    RegistrationResult,
    evaluate_cost,
    match,
    register,
    register_sequence,
    stacked_residuals,
    step,
)
from .sim import (
    NoisySensorSpec,
    SceneKind,
    SceneSpec,
    corrupt_prior,
    generate_scene,
    sample_scan,
)

__version__ = "0.1.0"
