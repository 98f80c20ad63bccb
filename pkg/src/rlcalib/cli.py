"""Command-line front end.

Subcommands::

    simulate   write a synthetic dataset (reference, sensor, IMU, true extrinsic)
    select     score IMU excitation and write informative segments as CSV
    calibrate  select data, train the policy, write result.json and reward_curve.csv
    evaluate   per-axis errors of an estimate against a known extrinsic
    align      Umeyama alignment and absolute pose error of two trajectories

Exit status: 0 success (calibration converged), 2 calibration did not
converge or the input is degenerate, 1 input or usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .alignment import DegenerateGeometry, trajectory_reward
from .env import CalibrationEnv, SynthConfig, make_observed_pair, replay_pair, synth_trajectory
from .excitation import EmptySelection, select_segments
from .geometry import AssociationError, Pose, UnitQuaternion, quat_from_axis_angle
from .ppo import CONVERGED, TrainConfig, calibrate, extrinsic_errors

log = logging.getLogger("rlcalib")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2

DEFAULT_TRUTH = Pose(
    UnitQuaternion.from_array(quat_from_axis_angle(np.ones(3), np.radians(20.0))),
    np.array([0.650, -0.372, -0.016]),
)


class ConfigError(ValueError):
    pass


@dataclass
class SelectConfig:
    enabled: bool = True
    window: float = 2.0
    stride: float = 0.5
    tau_rot: float = 1e-3
    tau_acc: float = 1e-3
    centered: bool = True


@dataclass
class EnvConfig:
    max_dt: float = 0.02
    squared_errors: bool = False
    translation_scale: float = 4.0
    divergence_translation: float = 0.5
    divergence_rotation: float = 0.5
    max_poses: int = 1000


@dataclass
class Settings:
    """Every configurable default, grouped by config-file section."""

    ppo: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    truth: Pose = DEFAULT_TRUTH

    def as_dict(self) -> dict:
        q = self.truth.quat
        return {
            "ppo": dataclasses.asdict(self.ppo),
            "env": dataclasses.asdict(self.env),
            "select": dataclasses.asdict(self.select),
            "synth": dataclasses.asdict(self.synth),
            "truth": {"rotation_xyzw": [q[1], q[2], q[3], q[0]],
                      "translation": self.truth.translation.tolist()},
        }


# keys accepted under a section other than the dataclass that stores them
_ALIASES = {
    "policy.rotation": "ppo.policy",
    "policy.init_std": "ppo.init_std",
    "bingham.nodes": "ppo.nodes",
}


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if isinstance(default, tuple):
        vals = value if isinstance(value, tuple) else (value,)
        try:
            return tuple(float(v) for v in vals)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected numbers, got {value!r}") from None
    return value


def build_settings(values: dict, seed: int | None = None) -> Settings:
    """Apply flat ``section.key`` overrides to the defaults.

    Raises
    ------
    ConfigError
        Naming the offending key for unknown keys or bad values.
    """
    groups = {"ppo": {}, "env": {}, "select": {}, "synth": {}}
    truth = DEFAULT_TRUTH
    for raw_key, value in values.items():
        key = _ALIASES.get(raw_key, raw_key)
        section, _, name = key.partition(".")
        if section == "truth":
            arr = np.atleast_1d(np.asarray(value, dtype=float))
            if name == "rotation_xyzw" and arr.shape == (4,):
                truth = Pose(UnitQuaternion(arr[3], *arr[:3]), truth.translation)
            elif name == "translation" and arr.shape == (3,):
                truth = Pose(truth.rotation, arr)
            else:
                raise ConfigError(f"{raw_key}: unknown key or wrong number of values")
            continue
        if section not in groups:
            raise ConfigError(f"{raw_key}: unknown section {section!r}")
        groups[section][name] = (raw_key, value)
    base = Settings()
    built = {}
    for section, entries in groups.items():
        default = getattr(base, section)
        known = {f.name for f in dataclasses.fields(default)}
        kwargs = {}
        for name, (raw_key, value) in entries.items():
            if name not in known:
                raise ConfigError(f"{raw_key}: unknown key")
            kwargs[name] = _coerce(value, getattr(default, name), raw_key)
        if section == "ppo" and seed is not None:
            kwargs["seed"] = seed
        try:
            built[section] = dataclasses.replace(default, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    if seed is not None:
        built["synth"] = dataclasses.replace(built["synth"], seed=seed)
    return Settings(truth=truth, **built)


def load_settings(args) -> Settings:
    values = io.load_config(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        values.update(io.parse_config_lines([item], "--set"))
    return build_settings(values, getattr(args, "seed", None))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_simulate(args) -> int:
    s = load_settings(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(s.synth.seed)
    ref, imu = synth_trajectory(s.synth, rng)
    pair = make_observed_pair(ref, s.truth, s.synth.sigma_t, s.synth.sigma_r, rng, imu,
                              s.synth.kappa)
    io.save_trajectory(out / "reference.txt", ref, "reference trajectory (frame A)")
    io.save_trajectory(out / "sensor.txt", pair.sensor, "sensor-B trajectory")
    io.save_imu(out / "imu.csv", imu)
    io.save_pose(out / "extrinsic.txt", s.truth, "true extrinsic (timestamp unused)")
    print(f"wrote {len(ref)} poses and {len(imu)} IMU samples to {out}")
    return EXIT_OK


def _selection_kwargs(s: Settings) -> dict:
    return dict(window=s.select.window, stride=s.select.stride,
                thresholds=(s.select.tau_rot, s.select.tau_acc), centered=s.select.centered)


def cmd_select(args) -> int:
    s = load_settings(args)
    imus = [io.load_imu(p) for p in args.imu]
    try:
        segments = select_segments(imus, **_selection_kwargs(s))
    except EmptySelection as exc:
        print(f"no informative segment: {exc}", file=sys.stderr)
        io.save_segments(args.out, [])
        return EXIT_NOT_CONVERGED
    io.save_segments(args.out, segments)
    print(f"wrote {len(segments)} segments to {args.out}")
    return EXIT_OK


def _load_pairs(args):
    if len(args.reference) != len(args.sensor):
        raise ConfigError("--reference and --sensor need the same number of files")
    if args.imu and len(args.imu) != len(args.sensor):
        raise ConfigError("--imu needs one file per sensor trajectory")
    pairs = []
    for i, (r, b) in enumerate(zip(args.reference, args.sensor)):
        imu = io.load_imu(args.imu[i], sequence_id=str(i)) if args.imu else None
        pairs.append(replay_pair(io.load_trajectory(r), io.load_trajectory(b), imu,
                                 name=str(i)))
    return pairs


def _apply_selection(pairs, s: Settings):
    """Restrict pairs to informative IMU segments; falls back to all data."""
    if not s.select.enabled or any(p.imu is None for p in pairs):
        return pairs, []
    try:
        segments = select_segments([p.imu for p in pairs], **_selection_kwargs(s))
    except EmptySelection as exc:
        log.warning("data selection kept nothing (%s); using all data", exc)
        return pairs, []
    kept = []
    for p in pairs:
        spans = [(g.start, g.end) for g in segments if g.sequence_id == p.name]
        if not spans:
            log.warning("sequence %s has no informative segment; dropped", p.name)
            continue
        kept.append(p.restricted(spans))
    return kept or pairs, segments


def result_document(res, settings: Settings, segments, inputs: dict) -> dict:
    """Deterministic result file contents (no wall-clock fields)."""
    doc = {
        "status": res.status,
        "converged": res.converged,
        "estimate": io.pose_to_dict(res.estimate),
        "reward": res.reward,
        "iterations": res.iterations,
        "seed": res.seed,
        "start": res.start,
        "low_confidence": res.low_confidence,
        "diagnostic": res.diagnostic,
        "concentration": {k: v for k, v in zip(("z1", "z2", "z3", "sx", "sy", "sz"),
                                               res.concentration)},
        "best_sampled": None if res.best_sampled is None else io.pose_to_dict(res.best_sampled),
        "best_sampled_reward": res.best_sampled_reward,
        "translation_error_m": None,
        "euler_error_deg": None,
        "segments": [dataclasses.asdict(g) for g in segments],
        "inputs": inputs,
        "config": settings.as_dict(),
    }
    if res.translation_error is not None:
        doc["translation_error_m"] = dict(zip("xyz", res.translation_error))
        doc["euler_error_deg"] = dict(zip(("roll", "pitch", "yaw"), res.euler_error))
    return doc


def cmd_calibrate(args) -> int:
    s = load_settings(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _load_pairs(args)
    truth = io.load_pose(args.truth) if args.truth else None
    pairs, segments = _apply_selection(pairs, s)
    env_kw = dataclasses.asdict(s.env)
    try:
        env = CalibrationEnv(pairs, **env_kw)
    except (DegenerateGeometry, AssociationError) as exc:
        raise ConfigError(f"cannot pair trajectories: {exc}") from None
    res, traces = calibrate(env, s.ppo, x_true=truth)
    inputs = {"reference": list(args.reference), "sensor": list(args.sensor),
              "imu": list(args.imu or []), "truth": args.truth}
    io.write_json(out / "result.json", result_document(res, s, segments, inputs))
    io.write_reward_curve(out / "reward_curve.csv", traces[res.start])
    io.write_json(out / "run_info.json", {"wall_time_s": res.wall_time,
                                          "starts": len(traces)})
    e = res.euler
    print(f"status={res.status} reward={res.reward:.6f} iterations={res.iterations}")
    print("translation [m]: " + " ".join(f"{v:.6f}" for v in res.estimate.translation))
    print(f"euler [deg]: roll={e.roll:.4f} pitch={e.pitch:.4f} yaw={e.yaw:.4f}")
    if res.translation_error is not None:
        print("translation error [m]: " + " ".join(f"{v:.6f}" for v in res.translation_error))
        print("euler error [deg]: " + " ".join(f"{v:.4f}" for v in res.euler_error))
    if res.status != CONVERGED:
        print(f"calibration did not converge: {res.diagnostic}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _load_estimate(path) -> Pose:
    if str(path).endswith(".json"):
        return io.pose_from_dict(io.read_json(path)["estimate"])
    return io.load_pose(path)


def cmd_evaluate(args) -> int:
    est = _load_estimate(args.estimate)
    truth = io.load_pose(args.truth)
    err_t, err_e = extrinsic_errors(est, truth)
    doc = {"translation_error_m": dict(zip("xyz", err_t)),
           "euler_error_deg": dict(zip(("roll", "pitch", "yaw"), err_e)),
           "translation_error_norm_m": float(np.linalg.norm(err_t))}
    if args.out:
        io.write_json(args.out, doc)
    for k, v in doc["translation_error_m"].items():
        print(f"t{k} error [m]: {v:.9f}")
    for k, v in doc["euler_error_deg"].items():
        print(f"{k} error [deg]: {v:.9f}")
    return EXIT_OK


def cmd_align(args) -> int:
    s = load_settings(args)
    ref = io.load_trajectory(args.reference)
    est = io.load_trajectory(args.estimate)
    try:
        X = _load_estimate(args.extrinsic) if args.extrinsic else Pose.identity()
        res = trajectory_reward(ref, est, X, max_dt=s.env.max_dt,
                                squared_errors=s.env.squared_errors,
                                translation_scale=s.env.translation_scale)
    except (DegenerateGeometry, AssociationError) as exc:
        raise ConfigError(str(exc)) from None
    doc = {"alignment": io.pose_to_dict(res.transform), "poses": res.n, "reward": res.reward,
           "ape_translation_rmse_m": float(np.sqrt(np.mean(res.translation_errors**2))),
           "ape_translation_mean_m": float(np.mean(res.translation_errors)),
           "ape_rotation_mean_deg": float(np.degrees(np.mean(res.rotation_errors)))}
    if args.out:
        io.write_json(args.out, doc)
    print(f"poses={res.n} reward={res.reward:.6f} "
          f"ape_rmse={doc['ape_translation_rmse_m']:.6f} m "
          f"rot_mean={doc['ape_rotation_mean_deg']:.4f} deg")
    return EXIT_OK


# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlcalib", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override ppo.seed and synth.seed")

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select", help="write informative IMU segments")
    common(p)
    p.add_argument("--imu", nargs="+", required=True, help="IMU CSV file(s)")
    p.add_argument("--out", required=True, help="segment CSV to write")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("calibrate", help="estimate the extrinsic")
    common(p)
    p.add_argument("--reference", nargs="+", required=True, help="reference trajectory file(s)")
    p.add_argument("--sensor", nargs="+", required=True, help="sensor-B trajectory file(s)")
    p.add_argument("--imu", nargs="+", help="IMU CSV per sequence (enables data selection)")
    p.add_argument("--truth", help="true extrinsic (one-pose trajectory file) for error report")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="compare an estimate with the true extrinsic")
    p.add_argument("--estimate", required=True, help="result.json or one-pose trajectory file")
    p.add_argument("--truth", required=True, help="one-pose trajectory file")
    p.add_argument("--out", help="JSON file to write")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("align", help="Umeyama alignment and APE")
    common(p)
    p.add_argument("--reference", required=True)
    p.add_argument("--estimate", required=True, help="trajectory to align")
    p.add_argument("--extrinsic", help="apply this extrinsic to the estimate first")
    p.add_argument("--out", help="JSON file to write")
    p.set_defaults(func=cmd_align)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (io.FormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
