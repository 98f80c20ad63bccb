"""Quaternion and SE(3) primitives, trajectories and timestamp association.

Conventions
-----------
Quaternions are Hamilton quaternions stored scalar-first, ``(w, x, y, z)``.
A unit quaternion ``q`` acts on a vector ``v`` as ``q * v * conj(q)``, which
is the rotation matrix returned by :func:`quat_to_rotmat`. A pose
``(q, t)`` maps points from its child frame into its parent frame:
``p_parent = R(q) @ p_child + t``. ``q`` and ``-q`` encode the same rotation
and every rotation comparison in this package is antipodally invariant.

All array helpers broadcast over leading dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# quaternion array helpers
# ---------------------------------------------------------------------------
def quat_mul(a, b):
    """Hamilton product ``a ⊗ b`` of scalar-first quaternions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotmat(q):
    """Rotation matrix of a unit quaternion (shape ``(..., 3, 3)``)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    R = np.stack(
        [
            1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
            2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
            2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy),
        ],
        axis=-1,
    )
    return R.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(R):
    """Unit quaternion (nonnegative scalar part) of a rotation matrix."""
    R = np.asarray(R, dtype=float)
    m00, m01, m02 = R[..., 0, 0], R[..., 0, 1], R[..., 0, 2]
    m10, m11, m12 = R[..., 1, 0], R[..., 1, 1], R[..., 1, 2]
    m20, m21, m22 = R[..., 2, 0], R[..., 2, 1], R[..., 2, 2]
    # Shepperd: each row is 4·q_k·q scaled; use the one with the largest pivot
    cand = np.stack(
        [
            np.stack([1 + m00 + m11 + m22, m21 - m12, m02 - m20, m10 - m01], -1),
            np.stack([m21 - m12, 1 + m00 - m11 - m22, m01 + m10, m02 + m20], -1),
            np.stack([m02 - m20, m01 + m10, 1 - m00 + m11 - m22, m12 + m21], -1),
            np.stack([m10 - m01, m02 + m20, m12 + m21, 1 - m00 - m11 + m22], -1),
        ],
        axis=-2,
    )
    pivot = np.argmax(np.diagonal(cand, axis1=-2, axis2=-1), axis=-1)
    q = np.take_along_axis(cand, pivot[..., None, None], axis=-2)[..., 0, :]
    q = quat_normalize(q)
    return np.where(q[..., :1] < 0, -q, q)


def quat_left_matrix(q):
    """Matrix ``L(q)`` with ``L(q) @ p == q ⊗ p``."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    L = np.stack([w, -x, -y, -z,
                  x, w, -z, y,
                  y, z, w, -x,
                  z, -y, x, w], axis=-1)
    return L.reshape(np.shape(q)[:-1] + (4, 4))


def quat_right_matrix(q):
    """Matrix ``R(q)`` with ``R(q) @ p == p ⊗ q``."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    R = np.stack([w, -x, -y, -z,
                  x, w, z, -y,
                  y, -z, w, x,
                  z, y, -x, w], axis=-1)
    return R.reshape(np.shape(q)[:-1] + (4, 4))


def quat_rotate(q, v):
    """Rotate vectors ``v`` by unit quaternions ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_exp(rotvec):
    """Unit quaternion of a rotation vector (axis * angle, radians)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a -> 1/2 as a -> 0
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(angle > 1e-8, np.sin(half) / np.where(angle > 0, angle, 1.0),
                     0.5 - angle**2 / 48.0)
    return np.concatenate([np.cos(half), k * rotvec], axis=-1)


def quat_angle(q):
    """Rotation angle in ``[0, π]`` of a unit quaternion, sign-invariant."""
    q = np.asarray(q, dtype=float)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def euler_to_quat(roll, pitch, yaw, degrees=True):
    """Quaternion of the intrinsic x-y-z rotation ``Rx(roll) Ry(pitch) Rz(yaw)``."""
    angles = np.array([roll, pitch, yaw], dtype=float)
    if degrees:
        angles = np.radians(angles)
    qx = quat_from_axis_angle([1.0, 0.0, 0.0], angles[0])
    qy = quat_from_axis_angle([0.0, 1.0, 0.0], angles[1])
    qz = quat_from_axis_angle([0.0, 0.0, 1.0], angles[2])
    return quat_mul(quat_mul(qx, qy), qz)


class EulerAngles(NamedTuple):
    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool


def quat_to_euler(q) -> EulerAngles:
    """Intrinsic x-y-z (roll, pitch, yaw) angles in degrees.

    ``R = Rx(roll) @ Ry(pitch) @ Rz(yaw)``. When ``|pitch|`` is within 1e-6
    degrees of 90 the decomposition is not unique; yaw is then reported as 0
    and ``gimbal_lock`` is set.
    """
    R = quat_to_rotmat(quat_normalize(np.asarray(q, dtype=float)))
    s = np.clip(R[0, 2], -1.0, 1.0)
    pitch = np.degrees(np.arcsin(s))
    if abs(abs(pitch) - 90.0) < 1e-6:
        roll = np.degrees(np.arctan2(R[2, 1], R[1, 1]))
        return EulerAngles(float(roll), float(pitch), 0.0, True)
    roll = np.degrees(np.arctan2(-R[1, 2], R[2, 2]))
    yaw = np.degrees(np.arctan2(-R[0, 1], R[0, 0]))
    return EulerAngles(float(roll), float(pitch), float(yaw), False)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion, scalar first. Normalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must have finite nonzero norm")
        for name in "wxyz":
            object.__setattr__(self, name, float(getattr(self, name)) / n)

    @classmethod
    def from_array(cls, q) -> UnitQuaternion:
        w, x, y, z = np.asarray(q, dtype=float)
        return cls(w, x, y, z)

    @classmethod
    def identity(cls) -> UnitQuaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def __array__(self, dtype=None, copy=None):
        return self.as_array().astype(dtype or float)

    def __neg__(self) -> UnitQuaternion:
        return UnitQuaternion(-self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: UnitQuaternion) -> UnitQuaternion:
        return UnitQuaternion.from_array(quat_mul(self.as_array(), np.asarray(other)))

    def conjugate(self) -> UnitQuaternion:
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.as_array())


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform with an optional timestamp (seconds)."""

    rotation: UnitQuaternion
    translation: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        if not isinstance(self.rotation, UnitQuaternion):
            object.__setattr__(self, "rotation", UnitQuaternion.from_array(self.rotation))
        t = np.array(self.translation, dtype=float).reshape(3)
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)
        if not np.isfinite(self.timestamp):
            raise ValueError("pose timestamp must be finite")

    @classmethod
    def identity(cls, timestamp: float = 0.0) -> Pose:
        return cls(UnitQuaternion.identity(), np.zeros(3), timestamp)

    @property
    def quat(self) -> np.ndarray:
        return self.rotation.as_array()

    def rotation_matrix(self) -> np.ndarray:
        return self.rotation.rotation_matrix()

    def __repr__(self):
        q = np.array2string(self.quat, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"Pose(q={q}, t={t}, stamp={self.timestamp})"


def pose_compose(a: Pose, b: Pose) -> Pose:
    """``a · b``; the timestamp is taken from ``a``."""
    q = quat_mul(a.quat, b.quat)
    t = quat_rotate(a.quat, b.translation) + a.translation
    return Pose(UnitQuaternion.from_array(q), t, a.timestamp)


def pose_inverse(p: Pose) -> Pose:
    qi = quat_conj(p.quat)
    return Pose(UnitQuaternion.from_array(qi), -quat_rotate(qi, p.translation), p.timestamp)


def geodesic_rotation_error(q1, q2):
    """Angle (radians, in ``[0, π]``) of the relative rotation between ``q1`` and ``q2``.

    Equal to ``arccos((trace(R1 R2ᵀ) - 1) / 2)`` but evaluated through the
    relative quaternion, which keeps full precision near zero.
    """
    rel = quat_mul(quat_conj(np.asarray(q2, dtype=float)), np.asarray(q1, dtype=float))
    return quat_angle(rel)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------
class Trajectory:
    """Timestamped pose sequence of one sensor frame, stored as arrays.

    Parameters
    ----------
    timestamps : array of shape (N,)
        Strictly increasing times in seconds.
    rotations : array of shape (N, 4)
        Scalar-first quaternions; normalized on construction.
    translations : array of shape (N, 3)
        Positions in meters.
    frame : str
        Free-text frame label.
    """

    def __init__(self, timestamps, rotations, translations, frame: str = ""):
        ts = np.array(timestamps, dtype=float).reshape(-1)
        q = np.array(rotations, dtype=float).reshape(-1, 4)
        t = np.array(translations, dtype=float).reshape(-1, 3)
        if not (len(ts) == len(q) == len(t)):
            raise ValueError("timestamps, rotations and translations differ in length")
        if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("trajectory contains non-finite values")
        if np.any(np.diff(ts) <= 0):
            bad = int(np.argmax(np.diff(ts) <= 0)) + 1
            raise ValueError(f"timestamps not strictly increasing at index {bad}")
        q = quat_normalize(q) if len(q) else q
        for arr in (ts, q, t):
            arr.flags.writeable = False
        self.timestamps = ts
        self.rotations = q
        self.translations = t
        self.frame = frame

    @classmethod
    def from_poses(cls, poses, frame: str = "") -> Trajectory:
        poses = list(poses)
        return cls(
            [p.timestamp for p in poses],
            np.array([p.quat for p in poses]).reshape(-1, 4),
            np.array([p.translation for p in poses]).reshape(-1, 3),
            frame,
        )

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return Trajectory(self.timestamps[i], self.rotations[i], self.translations[i], self.frame)
        return Pose(UnitQuaternion.from_array(self.rotations[i]), self.translations[i],
                    float(self.timestamps[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        span = (self.timestamps[0], self.timestamps[-1]) if len(self) else ()
        return f"Trajectory(frame={self.frame!r}, n={len(self)}, span={span})"

    @property
    def poses(self) -> list[Pose]:
        return list(self)

    def rotation_matrices(self) -> np.ndarray:
        return quat_to_rotmat(self.rotations)

    def between(self, start: float, end: float) -> Trajectory:
        """Sub-trajectory with ``start <= t <= end``."""
        m = (self.timestamps >= start) & (self.timestamps <= end)
        return self[m]


class Association(NamedTuple):
    ref_index: np.ndarray
    est_index: np.ndarray
    dt: np.ndarray


class AssociationError(ValueError):
    pass


def associate(ref: Trajectory, est: Trajectory, max_dt: float = 0.02) -> Association:
    """Nearest-timestamp matching between two trajectories.

    Each estimate pose is matched to its nearest reference pose; pairs with
    ``|Δt| > max_dt`` are dropped and every reference pose is used at most
    once (the closest claimant wins). Pairs are returned in reference order.
    """
    if len(ref) == 0 or len(est) == 0:
        raise AssociationError("cannot associate an empty trajectory")
    tr = ref.timestamps
    te = est.timestamps
    j = np.searchsorted(tr, te)
    lo = np.clip(j - 1, 0, len(tr) - 1)
    hi = np.clip(j, 0, len(tr) - 1)
    pick = np.where(np.abs(te - tr[lo]) <= np.abs(tr[hi] - te), lo, hi)
    dt = te - tr[pick]
    keep = np.abs(dt) <= max_dt
    est_idx = np.flatnonzero(keep)
    ref_idx = pick[keep]
    dt = dt[keep]
    # resolve reference poses claimed twice: closest |dt| first
    order = np.lexsort((est_idx, np.abs(dt)))
    _, first = np.unique(ref_idx[order], return_index=True)
    sel = order[first]
    sel = sel[np.argsort(ref_idx[sel], kind="stable")]
    if len(sel) < 2:
        raise AssociationError(
            f"only {len(sel)} pose pair(s) within max_dt={max_dt} s; need at least 2"
        )
    return Association(ref_idx[sel], est_idx[sel], dt[sel])
