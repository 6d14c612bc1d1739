"""Command-line interface: register, odometry, simulate, and evaluate.

Exit codes: 0 success, 1 error (I/O, parse, solver failure), 2 solver ran
but did not converge. Configuration files are flat ``key = value`` text
mirroring RegistrationConfig field names (penalty weights as alpha_p,
alpha_t, alpha_theta); command-line flags override file values. All outputs
are deterministic for identical inputs and flags.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as picp_io
from .errors import PicpError
from .evaluation import Trajectory, kitti_metrics
from .lie import RigidTransform, Rotation, exp_so3
from .penalties import PenaltyWeights, Priors
from .registration import RegistrationConfig, register, register_sequence
from .sim import NoisySensorSpec, SceneKind, SceneSpec, corrupt_prior, generate_scene, sample_scan

_CONFIG_KEYS = {
    "alpha_p": float,
    "alpha_t": float,
    "alpha_theta": float,
    "max_iterations": int,
    "translation_epsilon": float,
    "rotation_epsilon": float,
    "trim_ratio": float,
    "max_correspondence_distance": lambda v: None if v == "auto" else float(v),
    "yaw_only": lambda v: v.lower() in ("true", "1", "yes"),
    "covariance_k": int,
    "flatten_ratio": float,
    "covariance_source": str,
}


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on bad usage, per the exit-code contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def load_config(path=None, overrides=None) -> RegistrationConfig:
    """Config from a key=value file plus explicit overrides."""
    values = {}
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PicpError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise PicpError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](value.strip())
            except ValueError as exc:
                raise PicpError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    weights = PenaltyWeights(
        alpha_p=values.pop("alpha_p", 1.0),
        alpha_t=values.pop("alpha_t", 1.0),
        alpha_theta=values.pop("alpha_theta", 1.0),
    )
    return RegistrationConfig(weights=weights, **values)


def _config_flags(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--alpha-p", dest="alpha_p", type=float)
    parser.add_argument("--alpha-t", dest="alpha_t", type=float)
    parser.add_argument("--alpha-theta", dest="alpha_theta", type=float)
    parser.add_argument("--max-iterations", dest="max_iterations", type=int)
    parser.add_argument("--translation-epsilon", dest="translation_epsilon", type=float)
    parser.add_argument("--rotation-epsilon", dest="rotation_epsilon", type=float)
    parser.add_argument("--trim-ratio", dest="trim_ratio", type=float)
    parser.add_argument("--max-correspondence-distance", dest="max_correspondence_distance",
                        type=float)
    parser.add_argument("--yaw-only", dest="yaw_only", action="store_const", const=True)
    parser.add_argument("--covariance-k", dest="covariance_k", type=int)
    parser.add_argument("--flatten-ratio", dest="flatten_ratio", type=float)
    parser.add_argument("--covariance-source", dest="covariance_source",
                        choices=("map", "scan"))


def _config_from_args(args) -> RegistrationConfig:
    overrides = {key: getattr(args, key, None) for key in _CONFIG_KEYS}
    return load_config(args.config, overrides)


def _write_result(path, pose, converged, iterations, breakdown):
    point, gnss, lie_term = breakdown
    lines = [
        "pose = " + " ".join(repr(v) for v in pose.as_kitti_row()),
        f"converged = {'true' if converged else 'false'}",
        f"iterations = {iterations}",
        f"point_term = {point!r}",
        f"gnss_term = {gnss!r}",
        f"lie_term = {lie_term!r}",
        f"total_cost = {point + gnss + lie_term!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def _write_trace(path, trace):
    with open(path, "w", newline="\n") as fh:
        fh.write("iteration,cost," + ",".join(f"p{i}" for i in range(12)) + "\n")
        for i, (cost, pose) in enumerate(trace, start=1):
            row = [str(i), repr(cost)] + [repr(v) for v in pose.as_kitti_row()]
            fh.write(",".join(row) + "\n")


def cmd_register(args) -> int:
    config = _config_from_args(args)
    scan = picp_io.read_point_cloud(args.scan)
    map_cloud = picp_io.read_point_cloud(args.map)
    priors = None
    if args.priors:
        priors = Priors(*picp_io.read_priors(args.priors)[0])
    result = register(scan, map_cloud, initial=None, priors=priors, config=config)
    _write_result(args.output, result.estimate, result.converged,
                  result.iterations, result.cost_breakdown)
    if args.trace:
        _write_trace(args.trace, result.trace)
    return 0 if result.converged else 2


def cmd_odometry(args) -> int:
    config = _config_from_args(args)
    scan_paths = sorted(Path(args.scans).glob(args.pattern))
    if not scan_paths:
        raise PicpError(f"no scans matching {args.pattern!r} under {args.scans}")
    scans = [picp_io.read_point_cloud(p) for p in scan_paths]
    priors = None
    if args.priors:
        records = picp_io.read_priors(args.priors)
        if len(records) != len(scans):
            raise PicpError(
                f"{len(records)} prior records for {len(scans)} scans"
            )
        priors = [Priors(tp, rp) for tp, rp in records]
    elif args.require_priors:
        raise PicpError("--require-priors set but no priors file given")
    steps = register_sequence(scans, config, priors=priors, map_window=args.map_window,
                              seed_with_prior=not args.seed_previous)
    picp_io.write_poses_kitti(Trajectory(tuple(s.pose for s in steps)), args.output)
    if args.report:
        with open(args.report, "w", newline="\n") as fh:
            fh.write("step,converged,iterations,point_term,gnss_term,lie_term\n")
            for i, s in enumerate(steps):
                point, gnss, lie_term = s.cost_breakdown
                fh.write(f"{i},{'true' if s.converged else 'false'},{s.iterations},"
                         f"{point!r},{gnss!r},{lie_term!r}\n")
    return 0 if all(s.converged for s in steps) else 2


def _triple(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected one value or 'x,y,z'")
    return tuple(parts)


def cmd_simulate(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(SceneSpec(SceneKind(args.scene), density=args.density,
                                     extent=args.extent, seed=args.seed))
    poses = [RigidTransform(Rotation.identity(), np.array(args.start))]
    yaw = 0.0
    for _ in range(args.steps):
        yaw += np.radians(args.yaw_rate)
        rot = exp_so3([0.0, 0.0, yaw])
        translation = poses[-1].translation + rot.apply([args.step_length, 0.0, 0.0])
        poses.append(RigidTransform(rot, translation))

    prior_records = []
    for k, pose in enumerate(poses):
        scan = sample_scan(scene, pose, subsample=args.subsample,
                           seed=args.seed + 1000 + k, max_range=args.max_range)
        picp_io.write_point_cloud(scan, outdir / f"scan_{k:04d}.{args.format_ext}",
                                  format=args.format)
        spec = NoisySensorSpec(gnss_sigma=args.gnss_sigma, imu_rot_sigma=args.imu_sigma,
                               outlier_prob=args.outlier_prob,
                               outlier_magnitude=args.outlier_magnitude,
                               seed=args.seed + 2000 + k)
        prior_records.append(corrupt_prior(pose, spec))
    picp_io.write_poses_kitti(Trajectory(tuple(poses)), outdir / "poses_gt.txt")
    picp_io.write_priors(prior_records, outdir / "priors.csv")
    return 0


def cmd_evaluate(args) -> int:
    estimate = picp_io.read_poses_kitti(args.estimate)
    truth = picp_io.read_poses_kitti(args.truth)
    lengths = [float(v) for v in args.segments.split(",")]
    metrics = kitti_metrics(estimate, truth, lengths)
    lines = [
        f"translation_error_percent = {metrics.translation_error_percent!r}",
        f"rotation_error_deg_per_100m = {metrics.rotation_error_deg_per_100m!r}",
        f"segments = {len(metrics.per_segment)}",
    ]
    Path(args.output).write_text("\n".join(lines) + "\n")
    if args.per_segment:
        with open(args.per_segment, "w", newline="\n") as fh:
            fh.write("start_index,length_m,t_err_percent,r_err_deg_per_m\n")
            for s in metrics.per_segment:
                fh.write(f"{s.start_index},{s.length_m!r},{s.t_err_percent!r},"
                         f"{s.r_err_deg_per_m!r}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="picp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", parents=[], help="align one scan to a map cloud")
    p.add_argument("--scan", required=True, help="scan point cloud file")
    p.add_argument("--map", required=True, help="map point cloud file")
    p.add_argument("--priors", help="priors CSV; first record is used")
    p.add_argument("--output", required=True, help="result key=value file")
    p.add_argument("--trace", help="per-iteration cost/pose CSV")
    _config_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("odometry", help="sequentially register a directory of scans")
    p.add_argument("--scans", required=True, help="directory of scan files")
    p.add_argument("--pattern", default="scan_*", help="glob for scan files (sorted by name)")
    p.add_argument("--priors", help="priors CSV, one record per scan")
    p.add_argument("--require-priors", action="store_true",
                   help="fail instead of running without priors")
    p.add_argument("--map-window", type=int, default=1,
                   help="number of previous scans forming the local map")
    p.add_argument("--seed-previous", action="store_true",
                   help="seed each step from the previous pose instead of the prior")
    p.add_argument("--output", required=True, help="output trajectory (12 reals per line)")
    p.add_argument("--report", help="per-step CSV report")
    _config_flags(p)
    p.set_defaults(func=cmd_odometry)

    p = sub.add_parser("simulate", help="emit synthetic scans, ground truth, and priors")
    p.add_argument("--scene", required=True,
                   choices=[k.value for k in SceneKind])
    p.add_argument("--density", type=float, default=100.0, help="points per square meter")
    p.add_argument("--extent", type=float, default=10.0, help="scene extent, meters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=0, help="trajectory steps after the start pose")
    p.add_argument("--step-length", type=float, default=0.5, help="meters per step")
    p.add_argument("--yaw-rate", type=float, default=0.0, help="degrees of yaw per step")
    p.add_argument("--start", type=_triple, default=(1.0, 1.0, 1.0), help="start position x,y,z")
    p.add_argument("--subsample", type=float, default=1.0, help="scan keep probability")
    p.add_argument("--max-range", type=float, default=None, help="sensor range, meters")
    p.add_argument("--gnss-sigma", type=_triple, default=(0.0, 0.0, 0.0))
    p.add_argument("--imu-sigma", type=_triple, default=(0.0, 0.0, 0.0))
    p.add_argument("--outlier-prob", type=float, default=0.0)
    p.add_argument("--outlier-magnitude", type=float, default=0.0, help="radians")
    p.add_argument("--format", choices=("ascii", "binary"), default="ascii")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="segment-wise trajectory errors")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--segments", default="100,200,300,400,500,600,700,800",
                   help="comma-separated segment lengths, meters")
    p.add_argument("--output", required=True, help="metrics key=value file")
    p.add_argument("--per-segment", help="per-segment CSV")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.format_ext = "xyz" if getattr(args, "format", "ascii") == "ascii" else "xyzb"
    try:
        code = args.func(args)
    except PicpError as exc:
        print(f"picp: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"picp: error: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
