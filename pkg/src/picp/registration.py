"""Penalized ICP: correspondence matching, cost assembly and Gauss-Newton
minimization over SE(3) or a position-plus-yaw subspace.

The objective is the weighted point-to-Gaussian alignment cost, averaged
over correspondences, plus the GNSS translation penalty and the rotational
prior penalty. All three pieces are whitened into one stacked residual
vector, so a single damped Gauss-Newton machine minimizes the full cost.
The local update is left-multiplicative on the rotation (R <- exp(hat(d)) R)
and additive on the translation; in yaw-only mode the rotation increment is
restricted to the world z-axis, which leaves roll and pitch of the initial
pose bit-exact.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateNormalEquations, NoCorrespondences
from .lie import RigidTransform, Rotation, exp_so3, hat, log_so3
from .penalties import (
    PenaltyWeights,
    Priors,
    rotation_penalty,
    rotation_penalty_residual,
    translation_penalty,
    translation_penalty_residual,
)
from .pointcloud import PointCloud, SpatialIndex, build_index, estimate_covariances

# Levenberg damping schedule: start value, growth factor, retry budget.
DAMPING_INITIAL = 1e-6
DAMPING_GROWTH = 10.0
DAMPING_RETRIES = 10


@dataclass(frozen=True)
class Correspondence:
    """One matched scan/map pair with its outlier weight and covariance."""

    scan_id: int
    map_id: int
    weight: float
    w_matrix: np.ndarray


@dataclass(frozen=True)
class RegistrationConfig:
    """Solver knobs.

    max_correspondence_distance of None resolves, per registration run, to
    3x the median point spacing of the map. covariance_source selects which
    side of each pair supplies the pair covariance ("map" or "scan"; scan
    covariances are rotated into the map frame by the current pose).
    """

    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    max_iterations: int = 60
    translation_epsilon: float = 1e-4
    rotation_epsilon: float = 1e-5
    trim_ratio: float = 0.85
    max_correspondence_distance: float | None = None
    yaw_only: bool = False
    covariance_k: int = 20
    flatten_ratio: float = 1e-3
    covariance_source: str = "map"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.translation_epsilon <= 0.0 or self.rotation_epsilon <= 0.0:
            raise ValueError("convergence epsilons must be positive")
        if not 0.0 < self.trim_ratio <= 1.0:
            raise ValueError("trim_ratio must be in (0, 1]")
        if self.covariance_source not in ("map", "scan"):
            raise ValueError("covariance_source must be 'map' or 'scan'")


@dataclass(frozen=True)
class RegistrationResult:
    """Final estimate plus convergence bookkeeping.

    cost_breakdown holds the three cost terms (point, gnss, lie) at the
    final pose; trace holds one (cost, pose) entry per iteration.
    """

    estimate: RigidTransform
    converged: bool
    iterations: int
    cost_breakdown: tuple[float, float, float]
    trace: tuple[tuple[float, RigidTransform], ...]


def match(scan: PointCloud, map_index: SpatialIndex, pose: RigidTransform,
          config: RegistrationConfig) -> list[Correspondence]:
    """Nearest-map-point correspondences for the scan transformed by pose.

    Pairs farther apart than the distance gate are dropped; of the rest, the
    fraction of pairs beyond the trim_ratio distance quantile get weight 0,
    pairs tied with the cutoff distance are kept at weight 1. Pair
    covariances come from the map cloud unless covariance_source is "scan".
    Raises NoCorrespondences when the gate rejects every point.
    """
    if len(scan) == 0:
        raise NoCorrespondences("scan cloud is empty")
    gate = config.max_correspondence_distance
    if gate is None:
        gate = 3.0 * map_index.median_spacing()
    transformed = pose.apply(scan.points)
    ids, distances = map_index.query_nearest(transformed)
    keep = np.flatnonzero(distances <= gate)
    if keep.size == 0:
        raise NoCorrespondences(
            f"no scan point within {gate:.6g} m of the map at the current pose"
        )

    kept_dist = distances[keep]
    n_inliers = max(1, int(np.ceil(config.trim_ratio * keep.size)))
    cutoff = np.partition(kept_dist, n_inliers - 1)[n_inliers - 1]
    weights = np.where(kept_dist <= cutoff, 1.0, 0.0)

    map_cloud = map_index.cloud
    if config.covariance_source == "scan" and scan.covariances is not None:
        r = pose.rotation.matrix
        w = np.einsum("ij,njk,lk->nil", r, scan.covariances[keep], r)
    elif config.covariance_source == "map" and map_cloud.covariances is not None:
        w = map_cloud.covariances[ids[keep]]
    else:
        w = np.broadcast_to(np.eye(3), (keep.size, 3, 3))
    return [
        Correspondence(int(s), int(m), float(wt), w[i])
        for i, (s, m, wt) in enumerate(zip(keep, ids[keep], weights))
    ]


def _hat_stack(vectors):
    """Cross-product matrices of an (N, 3) array, shape (N, 3, 3)."""
    out = np.zeros((len(vectors), 3, 3))
    out[:, 0, 1] = -vectors[:, 2]
    out[:, 0, 2] = vectors[:, 1]
    out[:, 1, 0] = vectors[:, 2]
    out[:, 1, 2] = -vectors[:, 0]
    out[:, 2, 0] = -vectors[:, 1]
    out[:, 2, 1] = vectors[:, 0]
    return out


def _pair_arrays(correspondences, scan, map_cloud):
    scan_ids = np.fromiter((c.scan_id for c in correspondences), dtype=int)
    map_ids = np.fromiter((c.map_id for c in correspondences), dtype=int)
    weights = np.fromiter((c.weight for c in correspondences), dtype=float)
    w_matrices = np.stack([c.w_matrix for c in correspondences])
    return scan.points[scan_ids], map_cloud.points[map_ids], weights, w_matrices


def evaluate_cost(correspondences, scan, map_cloud, pose, priors, config):
    """Total penalized cost and its (point, gnss, lie) breakdown at pose.

    point term: alpha_p / M * sum of w_m * e_m^T W_m^-1 e_m with M counting
    all gated correspondences; gnss/lie terms are the weighted prior
    penalties, zero when the corresponding prior is absent.
    """
    if not correspondences:
        raise NoCorrespondences("cost requested for an empty correspondence set")
    p, q, weights, w_matrices = _pair_arrays(correspondences, scan, map_cloud)
    e = q - pose.apply(p)
    solved = np.linalg.solve(w_matrices, e[:, :, None])[:, :, 0]
    point_term = config.weights.alpha_p / len(correspondences) * float(
        np.einsum("ni,ni->", e, weights[:, None] * solved)
    )
    gnss_term = 0.0
    lie_term = 0.0
    if priors is not None and priors.translation is not None and config.weights.alpha_t > 0.0:
        gnss_term = config.weights.alpha_t * translation_penalty(priors.translation, pose.translation)
    if priors is not None and priors.rotation is not None and config.weights.alpha_theta > 0.0:
        lie_term = config.weights.alpha_theta * rotation_penalty(priors.rotation, pose.rotation)
    return point_term + gnss_term + lie_term, (point_term, gnss_term, lie_term)


def stacked_residuals(correspondences, scan, map_cloud, pose, priors, config):
    """Whitened residual vector and Jacobian of the full objective at pose.

    The squared norm of the residual vector equals the evaluate_cost total.
    Parameters are ordered (rotation increment, translation increment); the
    rotation block is one column (world z) in yaw-only mode, else three.
    """
    p, q, weights, w_matrices = _pair_arrays(correspondences, scan, map_cloud)
    active = np.flatnonzero(weights > 0.0)
    rotated = pose.rotation.apply(p[active])
    e = q[active] - rotated - pose.translation
    whitener = np.linalg.inv(np.linalg.cholesky(w_matrices[active]))
    scale = np.sqrt(weights[active] * config.weights.alpha_p / len(correspondences))

    n_rot = 1 if config.yaw_only else 3
    blocks_r = []
    blocks_j = []

    r_pts = scale[:, None] * np.einsum("nij,nj->ni", whitener, e)
    lever = _hat_stack(rotated)  # de/dd = +hat(R p) for the left update
    j_rot = np.einsum("nij,njk->nik", whitener, lever)
    if config.yaw_only:
        j_rot = j_rot[:, :, 2:3]
    j_pts = np.concatenate([j_rot, -whitener], axis=2)
    j_pts = scale[:, None, None] * j_pts
    blocks_r.append(r_pts.reshape(-1))
    blocks_j.append(j_pts.reshape(-1, n_rot + 3))

    if priors is not None and priors.translation is not None and config.weights.alpha_t > 0.0:
        res, jac = translation_penalty_residual(priors.translation, pose.translation)
        s = np.sqrt(config.weights.alpha_t)
        row = np.zeros((3, n_rot + 3))
        row[:, n_rot:] = jac
        blocks_r.append(s * res)
        blocks_j.append(s * row)
    if priors is not None and priors.rotation is not None and config.weights.alpha_theta > 0.0:
        res, jac = rotation_penalty_residual(priors.rotation, pose.rotation)
        s = np.sqrt(config.weights.alpha_theta)
        row = np.zeros((3, n_rot + 3))
        row[:, :n_rot] = jac[:, 2:3] if config.yaw_only else jac
        blocks_r.append(s * res)
        blocks_j.append(s * row)

    return np.concatenate(blocks_r), np.vstack(blocks_j)


def _apply_update(pose, delta, yaw_only):
    if yaw_only:
        d_rot = np.array([0.0, 0.0, delta[0]])
        d_trans = delta[1:]
    else:
        d_rot = delta[:3]
        d_trans = delta[3:]
    return RigidTransform(exp_so3(d_rot) @ pose.rotation, pose.translation + d_trans)


def step(correspondences, scan, map_cloud, pose, priors, config) -> RigidTransform:
    """One damped Gauss-Newton update on the stacked residuals.

    The returned pose never increases evaluate_cost on the given
    correspondences; if no damping retry achieves a non-increase, the input
    pose is returned. Raises DegenerateNormalEquations when the damped
    system stays unsolvable.
    """
    cost0, _ = evaluate_cost(correspondences, scan, map_cloud, pose, priors, config)
    residual, jacobian = stacked_residuals(correspondences, scan, map_cloud, pose, priors, config)
    h = jacobian.T @ jacobian
    g = jacobian.T @ residual
    lam = DAMPING_INITIAL
    solved_once = False
    for _ in range(DAMPING_RETRIES + 1):
        try:
            delta = np.linalg.solve(h + lam * np.eye(h.shape[0]), -g)
        except np.linalg.LinAlgError:
            lam *= DAMPING_GROWTH
            continue
        if not np.all(np.isfinite(delta)):
            lam *= DAMPING_GROWTH
            continue
        solved_once = True
        candidate = _apply_update(pose, delta, config.yaw_only)
        cost, _ = evaluate_cost(correspondences, scan, map_cloud, candidate, priors, config)
        if cost <= cost0:
            return candidate
        lam *= DAMPING_GROWTH
    if not solved_once:
        raise DegenerateNormalEquations(
            "normal equations unsolvable after damping retries", last_pose=pose
        )
    return pose


def _compose_prior_pose(priors):
    rotation = priors.rotation.c_s if priors.rotation is not None else Rotation.identity()
    translation = priors.translation.t_s if priors.translation is not None else np.zeros(3)
    return RigidTransform(rotation, translation)


def register(scan: PointCloud, map_cloud: PointCloud, initial: RigidTransform | None = None,
             priors: Priors | None = None,
             config: RegistrationConfig | None = None) -> RegistrationResult:
    """Align scan to map by iterating match and step until convergence.

    With initial None the start pose is composed from the priors when given,
    else identity. Map covariances are estimated on the fly (neighborhood
    size config.covariance_k) when the map does not carry any and is large
    enough. Deterministic for identical inputs and config.
    """
    if config is None:
        config = RegistrationConfig()
    if len(scan) == 0 or len(map_cloud) == 0:
        raise NoCorrespondences("registration requires non-empty clouds", last_pose=initial)
    if initial is None:
        initial = _compose_prior_pose(priors) if priors is not None else RigidTransform.identity()

    if (map_cloud.covariances is None and config.covariance_k >= 4
            and len(map_cloud) > config.covariance_k):
        map_cloud = estimate_covariances(map_cloud, config.covariance_k, config.flatten_ratio)
    index = build_index(map_cloud)
    if config.max_correspondence_distance is None:
        config = replace(config, max_correspondence_distance=3.0 * index.median_spacing())

    pose = initial
    trace = []
    converged = False
    breakdown = (0.0, 0.0, 0.0)
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        try:
            correspondences = match(scan, index, pose, config)
            new_pose = step(correspondences, scan, map_cloud, pose, priors, config)
        except (NoCorrespondences, DegenerateNormalEquations) as exc:
            exc.last_pose = pose
            raise
        d_trans = float(np.linalg.norm(new_pose.translation - pose.translation))
        d_rot = float(np.linalg.norm(log_so3(new_pose.rotation @ pose.rotation.inverse())))
        cost, breakdown = evaluate_cost(correspondences, scan, map_cloud, new_pose, priors, config)
        trace.append((cost, new_pose))
        pose = new_pose
        if d_trans < config.translation_epsilon and d_rot < config.rotation_epsilon:
            converged = True
            break
    return RegistrationResult(pose, converged, iterations, breakdown, tuple(trace))


@dataclass(frozen=True)
class OdometryStep:
    """Per-scan record produced by register_sequence."""

    pose: RigidTransform
    converged: bool
    iterations: int
    cost_breakdown: tuple[float, float, float]


def register_sequence(scans, config: RegistrationConfig | None = None, priors=None,
                      map_window: int = 1, seed_with_prior: bool = True,
                      anchor: RigidTransform | None = None):
    """Sequential odometry: register each scan against the previous scans.

    Scan k is registered against the last map_window scans placed in the
    world frame at their estimated poses, so the estimate is scan k's world
    pose and the (absolute) GNSS/IMU priors apply to it directly. priors is
    an optional sequence of Priors, one per scan; when present and
    seed_with_prior is true the prior composes the initial pose of each
    step, otherwise the previous world pose seeds it. The first scan is
    placed at anchor (default: composed first prior, else identity).

    Returns a list of OdometryStep (the first entry is the anchor pose with
    zero iterations).
    """
    if config is None:
        config = RegistrationConfig()
    scans = list(scans)
    if not scans:
        raise NoCorrespondences("register_sequence requires at least one scan")
    if priors is not None and len(priors) != len(scans):
        raise ValueError("priors must align one-to-one with scans")

    if anchor is None:
        first_prior = priors[0] if priors is not None else None
        anchor = _compose_prior_pose(first_prior) if (first_prior is not None and seed_with_prior) \
            else RigidTransform.identity()
    steps = [OdometryStep(anchor, True, 0, (0.0, 0.0, 0.0))]
    placed = [scans[0].transformed(anchor)]
    for k in range(1, len(scans)):
        map_cloud = placed[0] if len(placed) == 1 else _merge_window(placed)
        prior_k = priors[k] if priors is not None else None
        if prior_k is not None and seed_with_prior:
            initial = _compose_prior_pose(prior_k)
        else:
            initial = steps[-1].pose
        result = register(scans[k], map_cloud, initial, prior_k, config)
        steps.append(OdometryStep(result.estimate, result.converged,
                                  result.iterations, result.cost_breakdown))
        placed.append(scans[k].transformed(result.estimate))
        if len(placed) > map_window:
            placed.pop(0)
    return steps


def _merge_window(placed):
    from .pointcloud import merge_clouds

    # Covariances are re-estimated inside register(); drop any partial ones.
    merged = merge_clouds([PointCloud(c.points) for c in placed])
    return merged
