"""File formats: trajectories, IMU streams, segment lists and key=value configs.

Trajectory files hold one pose per line, ``timestamp tx ty tz qx qy qz qw``,
space separated, with ``#`` comments. Quaternions are stored scalar-last in
files and scalar-first in memory. IMU files are CSV
``timestamp,wx,wy,wz,ax,ay,az`` with an optional header row.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .excitation import ImuSequence, Segment
from .geometry import Pose, Trajectory, UnitQuaternion

IMU_COLUMNS = ("timestamp", "wx", "wy", "wz", "ax", "ay", "az")
SEGMENT_COLUMNS = ("sequence_id", "start", "end", "score_rot", "score_acc", "score")
QUAT_NORM_TOL = 1e-3


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""

    def __init__(self, path, line: int | None, msg: str):
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {msg}")
        self.path = str(path)
        self.line = line


def _fmt(x: float) -> str:
    return repr(float(x))


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _parse_floats(tokens, path, lineno, names):
    out = []
    for tok, name in zip(tokens, names):
        try:
            v = float(tok)
        except ValueError:
            raise FormatError(path, lineno, f"column {name!r}: cannot parse {tok!r} as a number") from None
        if not math.isfinite(v):
            raise FormatError(path, lineno, f"column {name!r}: non-finite value {tok!r}")
        out.append(v)
    return out


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------
_TRAJ_COLUMNS = ("timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw")


def load_trajectory(path, frame: str = "") -> Trajectory:
    """Read a trajectory file.

    Quaternions whose norm is within 1e-3 of one are renormalized; others
    are rejected, as are repeated or decreasing timestamps.

    Raises
    ------
    FormatError
        With the offending line number.
    """
    path = Path(path)
    rows, lines = [], []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = _strip_comment(raw)
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 8:
                raise FormatError(path, lineno, f"expected 8 fields "
                                  f"({' '.join(_TRAJ_COLUMNS)}), got {len(tokens)}")
            vals = _parse_floats(tokens, path, lineno, _TRAJ_COLUMNS)
            norm = math.sqrt(sum(v * v for v in vals[4:]))
            if abs(norm - 1.0) > QUAT_NORM_TOL:
                raise FormatError(path, lineno, f"quaternion norm {norm:.6g} is not within "
                                  f"{QUAT_NORM_TOL:g} of 1")
            if rows and vals[0] <= rows[-1][0]:
                raise FormatError(path, lineno, f"timestamp {tokens[0]} does not increase "
                                  f"(previous pose on line {lines[-1]})")
            rows.append(vals)
            lines.append(lineno)
    if not rows:
        raise FormatError(path, None, "no poses found")
    a = np.array(rows)
    q = a[:, [7, 4, 5, 6]]
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return Trajectory(a[:, 0], q, a[:, 1:4], frame=frame or path.stem)


def save_trajectory(path, traj: Trajectory, header: str | None = None) -> None:
    """Write ``traj`` with round-trip exact float formatting."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# {header}\n" if header else "")
        fh.write("# " + " ".join(_TRAJ_COLUMNS) + "\n")
        for t, p, q in zip(traj.timestamps, traj.translations, traj.rotations):
            vals = (t, p[0], p[1], p[2], q[1], q[2], q[3], q[0])
            fh.write(" ".join(_fmt(v) for v in vals) + "\n")


def load_pose(path) -> Pose:
    """A single pose stored as a one-line trajectory file (timestamp ignored)."""
    traj = load_trajectory(path)
    if len(traj) != 1:
        raise FormatError(path, None, f"expected exactly one pose, found {len(traj)}")
    return Pose(UnitQuaternion.from_array(traj.rotations[0]), traj.translations[0])


def save_pose(path, pose: Pose, header: str | None = None) -> None:
    save_trajectory(path, Trajectory([0.0], pose.quat[None], pose.translation[None]), header)


# ---------------------------------------------------------------------------
# IMU
# ---------------------------------------------------------------------------
def _is_header(tokens) -> bool:
    for tok in tokens:
        try:
            float(tok)
        except ValueError:
            return True
    return False


def load_imu(path, sequence_id: str | None = None) -> ImuSequence:
    """Read an IMU CSV file.

    A header row, when present, may list the columns in any order; extra
    columns are ignored. Without a header the first seven columns are taken
    in the canonical order.
    """
    path = Path(path)
    rows = []
    order = list(range(len(IMU_COLUMNS)))
    header_seen = False
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            lineno = reader.line_num
            tokens = [t.strip() for t in row]
            if not tokens or not any(tokens) or tokens[0].startswith("#"):
                continue
            if not rows and not header_seen and _is_header(tokens):
                names = [t.lower() for t in tokens]
                missing = [c for c in IMU_COLUMNS if c not in names]
                if missing:
                    raise FormatError(path, lineno, f"missing column {missing[0]!r} in header")
                order = [names.index(c) for c in IMU_COLUMNS]
                header_seen = True
                continue
            if len(tokens) <= max(order):
                col = IMU_COLUMNS[next(i for i, j in enumerate(order) if j >= len(tokens))]
                raise FormatError(path, lineno, f"missing column {col!r} "
                                  f"(got {len(tokens)} fields)")
            vals = _parse_floats([tokens[j] for j in order], path, lineno, IMU_COLUMNS)
            if rows and vals[0] <= rows[-1][0][0]:
                raise FormatError(path, lineno, f"timestamp {tokens[order[0]]} does not increase "
                                  f"(previous sample on line {rows[-1][1]})")
            rows.append((vals, lineno))
    if not rows:
        raise FormatError(path, None, "no IMU samples found")
    a = np.array([r[0] for r in rows])
    return ImuSequence(a[:, 0], a[:, 1:4], a[:, 4:7], sequence_id or path.stem)


def save_imu(path, imu: ImuSequence, header: bool = True) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(IMU_COLUMNS)
        for t, g, a in zip(imu.timestamps, imu.gyro, imu.accel):
            w.writerow([_fmt(t), *map(_fmt, g), *map(_fmt, a)])


# ---------------------------------------------------------------------------
# segments
# ---------------------------------------------------------------------------
def save_segments(path, segments) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEGMENT_COLUMNS)
        for s in segments:
            w.writerow([s.sequence_id, _fmt(s.start), _fmt(s.end), _fmt(s.score_rot),
                        _fmt(s.score_acc), _fmt(s.score)])


def load_segments(path) -> list[Segment]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SEGMENT_COLUMNS[:5] if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(path, 1, f"missing column {missing[0]!r}")
        return [Segment(r["sequence_id"], float(r["start"]), float(r["end"]),
                        float(r["score_rot"]), float(r["score_acc"])) for r in reader]


# ---------------------------------------------------------------------------
# key=value configuration
# ---------------------------------------------------------------------------
def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    if "," in text:
        return tuple(_parse_value(t) for t in text.split(","))
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config_lines(lines, source: str = "<config>") -> dict:
    """``section.key=value`` lines to a flat ``{"section.key": value}`` dict.

    Values are parsed as booleans, ``none``, ints, floats, comma-separated
    tuples or, failing those, strings. Later keys override earlier ones.
    """
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if "=" not in line:
            raise FormatError(source, lineno, f"expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key or any(not part for part in key.split(".")):
            raise FormatError(source, lineno, f"malformed key {key!r}")
        out[key] = _parse_value(value)
    return out


def load_config(path) -> dict:
    path = Path(path)
    with path.open() as fh:
        return parse_config_lines(fh, str(path))


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------
def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, data) -> None:
    with Path(path).open("w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path) -> dict:
    with Path(path).open() as fh:
        return json.load(fh)


def pose_to_dict(pose: Pose) -> dict:
    from .geometry import quat_to_euler

    e = quat_to_euler(pose.quat)
    q = pose.quat
    return {
        "quaternion_xyzw": [q[1], q[2], q[3], q[0]],
        "translation": pose.translation,
        "euler_deg": {"roll": e.roll, "pitch": e.pitch, "yaw": e.yaw},
        "gimbal_lock": e.gimbal_lock,
    }


def pose_from_dict(d: dict) -> Pose:
    x, y, z, w = d["quaternion_xyzw"]
    return Pose(UnitQuaternion(w, x, y, z), np.asarray(d["translation"], dtype=float))


def write_reward_curve(path, trace) -> None:
    """CSV ``iter,mean_reward,max_reward,z1,z2,z3,sx,sy,sz`` (iterations from 1)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "mean_reward", "max_reward", "z1", "z2", "z3", "sx", "sy", "sz"])
        for i, (m, x, c) in enumerate(zip(trace.mean_reward, trace.max_reward,
                                          trace.concentration), start=1):
            w.writerow([i, _fmt(m), _fmt(x), *map(_fmt, c)])
