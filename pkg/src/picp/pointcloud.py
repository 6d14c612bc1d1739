"""Point-cloud container, exact nearest-neighbor index, and per-point
covariance estimation from local neighborhoods.

Covariances describe the local surface shape around each point (a flattened
Gaussian for planar neighborhoods) and are regularized so their condition
number never exceeds 1/flatten_ratio, keeping them safely invertible.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, TooFewPoints
from .lie import RigidTransform

# Absolute floor applied to the largest eigenvalue before flattening, so a
# fully degenerate (all-coincident) neighborhood still yields an invertible
# covariance instead of NaNs.
DEGENERATE_EIGENVALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class PointCloud:
    """Immutable set of 3D points with optional covariances and normals.

    points: (N, 3) float64, meters.
    covariances: optional (N, 3, 3) symmetric PSD matrices, meters^2.
    normals: optional (N, 3) unit vectors.
    sensor_origin: optional (3,) position used to orient normals.
    """

    points: np.ndarray
    covariances: np.ndarray | None = None
    normals: np.ndarray | None = None
    sensor_origin: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.covariances is not None:
            cov = np.ascontiguousarray(self.covariances, dtype=float)
            if cov.shape != (len(pts), 3, 3):
                raise ValueError("covariances must be one 3x3 matrix per point")
            if np.linalg.norm(cov - np.transpose(cov, (0, 2, 1)), axis=(1, 2)).max(initial=0.0) > 1e-9:
                raise ValueError("covariances must be symmetric within 1e-9")
            if len(cov) and np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ValueError("covariances must be positive semi-definite")
            cov.setflags(write=False)
            object.__setattr__(self, "covariances", cov)
        if self.normals is not None:
            nrm = np.ascontiguousarray(self.normals, dtype=float)
            if nrm.shape != (len(pts), 3):
                raise ValueError("normals must be one 3-vector per point")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)
        if self.sensor_origin is not None:
            origin = np.array(self.sensor_origin, dtype=float).reshape(3)
            origin.setflags(write=False)
            object.__setattr__(self, "sensor_origin", origin)

    def __len__(self):
        return len(self.points)

    def transformed(self, pose: RigidTransform):
        """Cloud with points (and covariances/normals/origin) moved by pose."""
        r = pose.rotation.matrix
        cov = None
        if self.covariances is not None:
            cov = np.einsum("ij,njk,lk->nil", r, self.covariances, r)
        nrm = self.normals @ r.T if self.normals is not None else None
        origin = pose.apply(self.sensor_origin) if self.sensor_origin is not None else None
        return PointCloud(pose.apply(self.points), cov, nrm, origin)


def merge_clouds(clouds):
    """Concatenate clouds; optional fields survive only if present on all."""
    clouds = list(clouds)
    if not clouds:
        raise EmptyCloud("cannot merge zero clouds")
    points = np.vstack([c.points for c in clouds])
    cov = None
    if all(c.covariances is not None for c in clouds):
        cov = np.concatenate([c.covariances for c in clouds])
    nrm = None
    if all(c.normals is not None for c in clouds):
        nrm = np.vstack([c.normals for c in clouds])
    return PointCloud(points, cov, nrm)


class SpatialIndex:
    """Exact nearest-neighbor index over an immutable PointCloud.

    Queries return precisely what an exhaustive linear scan would (ties
    broken by lower point id), so registration results are attributable.
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)

    def query_nearest(self, queries):
        """Batched 1-NN: returns (ids, distances) arrays for (N, 3) queries."""
        distances, ids = self._tree.query(np.asarray(queries, dtype=float), k=1, workers=-1)
        return ids, distances

    def median_spacing(self):
        """Median distance from each point to its nearest other point."""
        if len(self.cloud) < 2:
            return 0.0
        d, _ = self._tree.query(self.cloud.points, k=2, workers=-1)
        return float(np.median(d[:, 1]))


def build_index(cloud: PointCloud) -> SpatialIndex:
    """Build the exact nearest-neighbor index; raises EmptyCloud."""
    return SpatialIndex(cloud)


def nearest(index: SpatialIndex, query, k: int):
    """The k nearest points to query, as (point id, distance) pairs.

    Sorted by ascending distance with ties broken by lower point id; k is
    clamped to the cloud size. Exactly matches an exhaustive linear scan.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    points = index.cloud.points
    n = len(points)
    k = min(k, n)
    q = np.asarray(query, dtype=float).reshape(3)
    kth_distance, _ = index._tree.query(q, k=k)
    kth_distance = float(np.max(kth_distance))
    # All points at distance <= kth_distance: superset of every valid k-NN
    # answer that also contains every boundary tie.
    candidates = index._tree.query_ball_point(q, r=kth_distance)
    candidates = np.sort(np.asarray(candidates, dtype=int))
    dists = np.linalg.norm(points[candidates] - q, axis=1)
    order = np.argsort(dists, kind="stable")[:k]
    return [(int(candidates[i]), float(dists[i])) for i in order]


def estimate_covariances(cloud: PointCloud, k: int = 20, flatten_ratio: float = 1e-3) -> PointCloud:
    """Attach neighborhood-PCA covariances and normals to every point.

    Each point's covariance is the sample covariance (k-1 normalization) of
    its k nearest neighbors, the point itself included, with all eigenvalues
    floored at flatten_ratio times the largest. Normals are the smallest-
    eigenvalue eigenvectors, oriented toward the cloud's sensor origin when
    known, else flipped so the largest-magnitude component is positive.
    """
    if k < 4:
        raise TooFewPoints(f"neighborhood size k={k} must be at least 4")
    if len(cloud) <= k:
        raise TooFewPoints(f"cloud of {len(cloud)} points cannot support k={k} neighborhoods")
    if flatten_ratio <= 0.0:
        raise ValueError("flatten_ratio must be positive")
    tree = cKDTree(cloud.points)
    _, idx = tree.query(cloud.points, k=k, workers=-1)
    neighbors = cloud.points[idx]  # (N, k, 3)
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k - 1)

    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    scale = np.maximum(eigvals[:, 2], DEGENERATE_EIGENVALUE_FLOOR)
    floored = np.maximum(eigvals, flatten_ratio * scale[:, None])
    cov = np.einsum("nij,nj,nkj->nik", eigvecs, floored, eigvecs)
    cov = (cov + np.transpose(cov, (0, 2, 1))) / 2.0

    normals = eigvecs[:, :, 0]
    if cloud.sensor_origin is not None:
        toward = cloud.sensor_origin[None, :] - cloud.points
        flip = np.einsum("ni,ni->n", normals, toward) < 0.0
    else:
        dominant = np.take_along_axis(
            normals, np.argmax(np.abs(normals), axis=1)[:, None], axis=1
        )[:, 0]
        flip = dominant < 0.0
    normals = np.where(flip[:, None], -normals, normals)

    return PointCloud(cloud.points, cov, normals, cloud.sensor_origin)
