"""File formats for point clouds, trajectories, and sensor priors.

Point clouds: ASCII "x y z" per line (9 significant digits), or a minimal
binary format with a 16-byte header (magic "XYZB", little-endian u32 point
count, u64 reserved) followed by little-endian float32 XYZ triples.
Trajectories: 12 space-separated reals per line, row-major [R | t].
Priors: CSV with header; covariances either as 3 diagonal entries or as 6
upper-triangular entries per matrix. All text uses '.' decimals and Unix
newlines; floats in pose/prior files are written with repr so round trips
are exact.
"""

import csv
import struct

import numpy as np

from .errors import EmptyCloud, InvalidCovariance, MalformedFile
from .evaluation import Trajectory
from .lie import RigidTransform, Rotation
from .penalties import RotationPrior, TranslationPrior
from .pointcloud import PointCloud

BINARY_MAGIC = b"XYZB"
BINARY_HEADER = struct.Struct("<4sIQ")

_PRIOR_BASE_COLUMNS = [
    "index", "tx", "ty", "tz",
    "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
]
_DIAG_SUFFIXES = ["xx", "yy", "zz"]
_TRI_SUFFIXES = ["xx", "xy", "xz", "yy", "yz", "zz"]


def _float9(value):
    return format(float(value), ".9g")


def read_point_cloud(path) -> PointCloud:
    """Read a point cloud, auto-detecting ASCII XYZ vs binary by magic."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        fh.seek(0)
        if head == BINARY_MAGIC:
            return _read_binary_cloud(fh, path)
        return _read_ascii_cloud(fh, path)


def _read_ascii_cloud(fh, path):
    points = []
    for lineno, raw in enumerate(fh, start=1):
        try:
            text = raw.decode("ascii")
        except UnicodeDecodeError as exc:
            raise MalformedFile("line is not ASCII text", path=path, line=lineno) from exc
        if not text.strip():
            continue
        fields = text.split()
        if len(fields) != 3:
            raise MalformedFile(
                f"expected 3 fields, found {len(fields)}", path=path, line=lineno
            )
        try:
            points.append([float(f) for f in fields])
        except ValueError as exc:
            raise MalformedFile(f"unparseable number: {exc}", path=path, line=lineno) from exc
    if not points:
        raise EmptyCloud(f"{path}: no points")
    return PointCloud(np.array(points))


def _read_binary_cloud(fh, path):
    header = fh.read(BINARY_HEADER.size)
    if len(header) != BINARY_HEADER.size:
        raise MalformedFile("truncated header", path=path, offset=len(header))
    magic, count, _reserved = BINARY_HEADER.unpack(header)
    if magic != BINARY_MAGIC:
        raise MalformedFile("bad magic", path=path, offset=0)
    if count == 0:
        raise EmptyCloud(f"{path}: no points")
    payload = fh.read()
    expected = count * 12
    if len(payload) != expected:
        raise MalformedFile(
            f"payload of {len(payload)} bytes, expected {expected}",
            path=path, offset=BINARY_HEADER.size + min(len(payload), expected),
        )
    pts = np.frombuffer(payload, dtype="<f4").reshape(count, 3)
    return PointCloud(pts.astype(float))


def write_point_cloud(cloud: PointCloud, path, format: str = "ascii"):
    """Write a cloud as 'ascii' or 'binary'; raises EmptyCloud on no points."""
    if len(cloud) == 0:
        raise EmptyCloud("refusing to write an empty cloud")
    if format == "ascii":
        with open(path, "w", newline="\n") as fh:
            for x, y, z in cloud.points:
                fh.write(f"{_float9(x)} {_float9(y)} {_float9(z)}\n")
    elif format == "binary":
        with open(path, "wb") as fh:
            fh.write(BINARY_HEADER.pack(BINARY_MAGIC, len(cloud), 0))
            fh.write(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())
    else:
        raise ValueError(f"unknown point cloud format {format!r}")


def read_poses_kitti(path) -> Trajectory:
    """Read a trajectory of 12-real [R | t] lines.

    Rotation blocks must be orthonormal within 1e-6 and are re-projected
    onto SO(3) after parsing.
    """
    poses = []
    with open(path, "r") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            fields = text.split()
            if len(fields) != 12:
                raise MalformedFile(
                    f"expected 12 fields, found {len(fields)}", path=path, line=lineno
                )
            try:
                values = np.array([float(f) for f in fields])
            except ValueError as exc:
                raise MalformedFile(f"unparseable number: {exc}", path=path, line=lineno) from exc
            try:
                poses.append(RigidTransform.from_kitti_row(values, atol=1e-6))
            except ValueError as exc:
                raise MalformedFile(str(exc), path=path, line=lineno) from exc
    if not poses:
        raise MalformedFile("no poses", path=path, line=1)
    return Trajectory(tuple(poses))


def write_poses_kitti(trajectory: Trajectory, path):
    """Write a trajectory as 12-real [R | t] lines (exact repr floats)."""
    with open(path, "w", newline="\n") as fh:
        for pose in trajectory.poses:
            fh.write(" ".join(repr(v) for v in pose.as_kitti_row()) + "\n")


def _matrix_from_row(row, prefix, tri, path, lineno):
    suffixes = _TRI_SUFFIXES if tri else _DIAG_SUFFIXES
    try:
        values = [float(row[f"{prefix}_{s}"]) for s in suffixes]
    except (KeyError, TypeError) as exc:
        raise MalformedFile(f"missing {prefix} covariance column", path=path, line=lineno) from exc
    except ValueError as exc:
        raise MalformedFile(f"unparseable number: {exc}", path=path, line=lineno) from exc
    m = np.zeros((3, 3))
    if tri:
        m[np.triu_indices(3)] = values
        m = m + np.triu(m, 1).T
    else:
        np.fill_diagonal(m, values)
    return m


def _validated_covariance(matrix, prefix, path, lineno):
    """Floor a PSD matrix to be invertible; reject genuinely non-PSD input."""
    if not np.all(np.isfinite(matrix)):
        raise InvalidCovariance(f"{prefix} covariance not finite", path=path, line=lineno)
    smallest = float(np.linalg.eigvalsh(matrix)[0])
    if smallest < -1e-12:
        raise InvalidCovariance(
            f"{prefix} covariance not positive semi-definite "
            f"(eigenvalue {smallest:.3g})", path=path, line=lineno
        )
    if smallest < 1e-12:
        matrix = matrix + (1e-12 - smallest) * np.eye(3)
    return matrix


def read_priors(path):
    """Read per-scan sensor priors from CSV.

    Rows must be indexed contiguously from 0. Returns a list of
    (TranslationPrior, RotationPrior) in index order. Degenerate (zero)
    covariances are floored to 1e-12 on the diagonal; matrices with genuine
    negative eigenvalues raise InvalidCovariance with the line number.
    """
    records = {}
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MalformedFile("missing header", path=path, line=1)
        missing = [c for c in _PRIOR_BASE_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise MalformedFile(f"missing columns {missing}", path=path, line=1)
        tri = "sigma_t_xy" in reader.fieldnames
        for lineno, row in enumerate(reader, start=2):
            try:
                index = int(row["index"])
                t_s = np.array([float(row[c]) for c in ("tx", "ty", "tz")])
                c_s = np.array([float(row[f"r{i}{j}"]) for i in range(3) for j in range(3)])
            except (TypeError, ValueError) as exc:
                raise MalformedFile(f"unparseable field: {exc}", path=path, line=lineno) from exc
            sigma_t = _validated_covariance(
                _matrix_from_row(row, "sigma_t", tri, path, lineno), "sigma_t", path, lineno)
            sigma_eps = _validated_covariance(
                _matrix_from_row(row, "sigma_eps", tri, path, lineno), "sigma_eps", path, lineno)
            try:
                rotation = Rotation(c_s.reshape(3, 3), atol=1e-6)
            except ValueError as exc:
                raise MalformedFile(str(exc), path=path, line=lineno) from exc
            if index in records:
                raise MalformedFile(f"duplicate index {index}", path=path, line=lineno)
            records[index] = (TranslationPrior(t_s, sigma_t), RotationPrior(rotation, sigma_eps))
    if not records:
        raise MalformedFile("no prior records", path=path, line=2)
    if sorted(records) != list(range(len(records))):
        raise MalformedFile(
            f"indices must be contiguous from 0, got {sorted(records)}", path=path, line=1
        )
    return [records[i] for i in range(len(records))]


def write_priors(priors, path):
    """Write (TranslationPrior, RotationPrior) pairs as CSV.

    Uses the compact diagonal covariance layout when every covariance is
    diagonal, else the 6-entry upper-triangular layout.
    """
    priors = list(priors)
    tri = any(
        np.any(tp.sigma_t != np.diag(np.diag(tp.sigma_t)))
        or np.any(rp.sigma_eps != np.diag(np.diag(rp.sigma_eps)))
        for tp, rp in priors
    )
    suffixes = _TRI_SUFFIXES if tri else _DIAG_SUFFIXES
    columns = _PRIOR_BASE_COLUMNS + [f"sigma_t_{s}" for s in suffixes] \
        + [f"sigma_eps_{s}" for s in suffixes]
    iu = np.triu_indices(3)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for index, (tp, rp) in enumerate(priors):
            row = [index] + [repr(v) for v in tp.t_s] \
                + [repr(v) for v in rp.c_s.matrix.ravel()]
            if tri:
                row += [repr(v) for v in tp.sigma_t[iu]]
                row += [repr(v) for v in rp.sigma_eps[iu]]
            else:
                row += [repr(v) for v in np.diag(tp.sigma_t)]
                row += [repr(v) for v in np.diag(rp.sigma_eps)]
            writer.writerow(row)
