"""Calibration environments.

Synthetic mode generates a smooth reference trajectory with its IMU stream,
then observes sensor B through a hidden extrinsic with pose noise. The noise
can grow with the distance between the evaluated candidate and the truth,
standing in for a tightly-coupled odometry that degrades under a wrong
extrinsic. Replay mode wraps trajectories loaded from files.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .alignment import (
    TRANSLATION_SCALE,
    DegenerateGeometry,
    RewardKernel,
)
from .excitation import ImuSequence
from .geometry import (
    Pose,
    Trajectory,
    associate,
    quat_conj,
    quat_exp,
    quat_from_axis_angle,
    quat_mul,
    quat_rotate,
    quat_angle,
)

GRAVITY = 9.81
# harmonic frequency multipliers and weights of every synthetic channel
_HARMONICS = ((1.0, 1.0), (2.3, 0.4))


@dataclass
class SynthConfig:
    """Synthetic recording: per-axis oscillation amplitudes, rates and noise.

    Amplitudes are in radians (roll, pitch, yaw angles of an intrinsic x-y-z
    rotation) and meters; frequencies are the base frequency of each
    channel in Hz.
    """

    duration: float = 60.0
    pose_rate: float = 100.0
    imu_rate: float = 200.0
    rot_amp: tuple = (0.5, 0.5, 0.8)
    rot_freq: tuple = (0.23, 0.31, 0.17)
    trans_amp: tuple = (2.0, 2.0, 0.5)
    trans_freq: tuple = (0.05, 0.07, 0.11)
    sigma_t: float = 0.0
    sigma_r: float = 0.0
    kappa: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0 or self.pose_rate <= 0 or self.imu_rate <= 0:
            raise ValueError("duration and rates must be positive")
        for name in ("rot_amp", "rot_freq", "trans_amp", "trans_freq"):
            v = tuple(float(x) for x in np.broadcast_to(getattr(self, name), 3))
            setattr(self, name, v)
        if min(self.rot_amp + self.trans_amp) < 0:
            raise ValueError("amplitudes must be nonnegative")
        if self.sigma_t < 0 or self.sigma_r < 0 or self.kappa < 0:
            raise ValueError("noise parameters must be nonnegative")


class _Path:
    """Analytic sinusoid path with first and second derivatives."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rot_phase = rng.uniform(0, 2 * np.pi, (3, len(_HARMONICS)))
        self.trans_phase = rng.uniform(0, 2 * np.pi, (3, len(_HARMONICS)))

    @staticmethod
    def _channels(t, amp, freq, phase):
        t = np.asarray(t, dtype=float)[:, None]
        val = np.zeros((len(t), 3))
        d1 = np.zeros_like(val)
        d2 = np.zeros_like(val)
        for h, (mult, weight) in enumerate(_HARMONICS):
            w = 2 * np.pi * np.asarray(freq) * mult
            arg = w * t + phase[:, h]
            a = np.asarray(amp) * weight
            val += a * np.sin(arg)
            d1 += a * w * np.cos(arg)
            d2 -= a * w**2 * np.sin(arg)
        return val, d1, d2

    def angles(self, t):
        return self._channels(t, self.cfg.rot_amp, self.cfg.rot_freq, self.rot_phase)

    def position(self, t):
        return self._channels(t, self.cfg.trans_amp, self.cfg.trans_freq, self.trans_phase)

    def quats(self, t):
        ang, _, _ = self.angles(t)
        qx = quat_from_axis_angle([1.0, 0, 0], ang[:, 0])
        qy = quat_from_axis_angle([0, 1.0, 0], ang[:, 1])
        qz = quat_from_axis_angle([0, 0, 1.0], ang[:, 2])
        return quat_mul(quat_mul(qx, qy), qz), (qy, qz)

    def imu(self, t):
        ang, rate, _ = self.angles(t)
        q, (qy, qz) = self.quats(t)
        n = len(t)
        ex, ey, ez = np.eye(3)
        # body rate of Rx(a) Ry(b) Rz(c): a' Rzᵀ Ryᵀ ex + b' Rzᵀ ey + c' ez
        wx = quat_rotate(quat_conj(qz), quat_rotate(quat_conj(qy), np.tile(ex, (n, 1))))
        wy = quat_rotate(quat_conj(qz), np.tile(ey, (n, 1)))
        gyro = rate[:, :1] * wx + rate[:, 1:2] * wy + rate[:, 2:3] * ez
        _, _, acc = self.position(t)
        accel = quat_rotate(quat_conj(q), acc + np.array([0.0, 0.0, GRAVITY]))
        return gyro, accel


def synth_trajectory(cfg: SynthConfig, rng: np.random.Generator | None = None):
    """Smooth reference trajectory and the IMU stream of the same body.

    Orientation is ``Rx(roll(t)) Ry(pitch(t)) Rz(yaw(t))`` with each angle a
    sum of two sinusoids; position is a per-axis sum of sinusoids. The IMU
    reports body-frame angular velocity and specific force (gravity 9.81
    m/s² along world +z), obtained by analytic differentiation.

    Returns
    -------
    (Trajectory, ImuSequence)
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    path = _Path(cfg, rng)
    tp = np.arange(0.0, cfg.duration + 1e-12, 1.0 / cfg.pose_rate)
    ti = np.arange(0.0, cfg.duration + 1e-12, 1.0 / cfg.imu_rate)
    q, _ = path.quats(tp)
    p, _, _ = path.position(tp)
    gyro, accel = path.imu(ti)
    return Trajectory(tp, q, p, frame="A"), ImuSequence(ti, gyro, accel, "synthetic")


@dataclass(eq=False)
class SequencePair:
    """Reference trajectory and the sensor-B trajectory it is compared with.

    ``sensor_clean`` is the noise-free B trajectory (or the replayed file);
    ``noise_t`` and ``noise_r`` hold per-pose translation offsets (m) and
    right-multiplied rotation-vector perturbations (rad) at unit scale.
    """

    reference: Trajectory
    sensor_clean: Trajectory
    noise_t: np.ndarray | None = None
    noise_r: np.ndarray | None = None
    imu: ImuSequence | None = None
    x_true: Pose | None = None
    sigma_t: float = 0.0
    sigma_r: float = 0.0
    kappa: float = 0.0
    name: str = ""

    def sensor_at(self, scale: float = 1.0) -> Trajectory:
        """Observed B trajectory with its noise multiplied by ``scale``."""
        s = self.sensor_clean
        if self.noise_t is None:
            return s
        q = quat_mul(s.rotations, quat_exp(scale * self.noise_r))
        return Trajectory(s.timestamps, q, s.translations + scale * self.noise_t, s.frame)

    @property
    def sensor(self) -> Trajectory:
        return self.sensor_at(1.0)

    def restricted(self, intervals) -> SequencePair:
        """Copy keeping only sensor poses inside the union of ``(start, end)`` intervals."""
        ts = self.sensor_clean.timestamps
        keep = np.zeros(len(ts), dtype=bool)
        for start, end in intervals:
            keep |= (ts >= start) & (ts <= end)
        nt = None if self.noise_t is None else self.noise_t[keep]
        nr = None if self.noise_r is None else self.noise_r[keep]
        return replace(self, sensor_clean=self.sensor_clean[keep], noise_t=nt, noise_r=nr)


def make_observed_pair(ref: Trajectory, x_true: Pose, sigma_t: float = 0.0,
                       sigma_r: float = 0.0, rng: np.random.Generator | None = None,
                       imu: ImuSequence | None = None, kappa: float = 0.0,
                       name: str = "") -> SequencePair:
    """Observe sensor B as ``T_ref(t) · X_true`` plus iid pose noise."""
    if len(ref) == 0:
        raise ValueError("reference trajectory is empty")
    qb = quat_mul(ref.rotations, x_true.quat)
    pb = ref.translations + quat_rotate(ref.rotations, x_true.translation)
    clean = Trajectory(ref.timestamps, qb, pb, frame="B")
    nt = nr = None
    if sigma_t > 0 or sigma_r > 0:
        rng = np.random.default_rng() if rng is None else rng
        nt = sigma_t * rng.standard_normal((len(ref), 3))
        nr = sigma_r * rng.standard_normal((len(ref), 3))
    return SequencePair(ref, clean, nt, nr, imu, x_true, sigma_t, sigma_r, kappa, name)


def replay_pair(reference: Trajectory, sensor: Trajectory, imu: ImuSequence | None = None,
                name: str = "") -> SequencePair:
    """Pair from recorded trajectories; the observation cannot depend on the candidate."""
    return SequencePair(reference, sensor, imu=imu, name=name)


@dataclass(eq=False)
class _Prepared:
    pair: SequencePair
    full: RewardKernel
    train: RewardKernel


@dataclass(eq=False)
class EvalResult:
    reward: np.ndarray
    divergent: np.ndarray
    degenerate: np.ndarray
    per_pair: np.ndarray = field(default=None)


class CalibrationEnv:
    """Reward oracle over one or more sequence pairs.

    The aggregate reward is the geometric mean of per-pair rewards. A
    candidate whose degraded odometry noise exceeds the divergence bounds
    gets the 0 sentinel; so does a candidate whose geometry is degenerate
    in batch evaluation.

    ``max_poses`` caps the associated poses per pair used by the batched
    training reward (evenly spaced subset); :meth:`evaluate` and
    ``evaluate_batch(..., full=True)`` always use every associated pose.
    """

    def __init__(self, pairs, max_dt: float = 0.02, squared_errors: bool = False,
                 translation_scale: float = TRANSLATION_SCALE,
                 divergence_translation: float = 0.5, divergence_rotation: float = 0.5,
                 max_poses: int | None = 1000):
        if isinstance(pairs, SequencePair):
            pairs = [pairs]
        pairs = list(pairs)
        if not pairs:
            raise ValueError("need at least one sequence pair")
        if max_poses is not None and max_poses < 3:
            raise ValueError("max_poses must be at least 3")
        self.pairs = pairs
        self.max_dt = max_dt
        self.squared_errors = squared_errors
        self.translation_scale = translation_scale
        self.divergence_translation = divergence_translation
        self.divergence_rotation = divergence_rotation
        self.max_poses = max_poses
        self._prepared = [self._prepare(p) for p in pairs]

    def _prepare(self, pair: SequencePair) -> _Prepared:
        assoc = associate(pair.reference, pair.sensor_clean, self.max_dt)
        n = len(assoc.ref_index)
        if n < 3:
            raise DegenerateGeometry(f"pair {pair.name!r}: fewer than 3 associated poses")

        def kernel(idx):
            r = pair.reference[assoc.ref_index[idx]]
            b = pair.sensor_clean[assoc.est_index[idx]]
            ei = assoc.est_index[idx]
            nt = None if pair.noise_t is None else pair.noise_t[ei]
            nr = None if pair.noise_r is None else pair.noise_r[ei]
            return RewardKernel(r.rotations, r.translations, b.rotations, b.translations,
                                nt, nr, self.squared_errors, self.translation_scale)

        everything = np.arange(n)
        full = kernel(everything)
        if self.max_poses is None or n <= self.max_poses:
            return _Prepared(pair, full, full)
        sub = np.unique(np.round(np.linspace(0, n - 1, self.max_poses)).astype(int))
        return _Prepared(pair, full, kernel(sub))

    @property
    def n_poses(self) -> list[int]:
        """Associated poses per pair (full evaluation)."""
        return [p.full.n for p in self._prepared]

    def noise_scale(self, pair: SequencePair, x_q, x_t) -> np.ndarray:
        """Odometry degradation factor ``1 + κ d(X, X_true)`` per candidate."""
        k = len(x_q)
        if pair.kappa == 0 or pair.x_true is None:
            return np.ones(k)
        d = (np.linalg.norm(x_t - pair.x_true.translation, axis=1)
             + quat_angle(quat_mul(quat_conj(pair.x_true.quat), x_q)))
        return 1.0 + pair.kappa * d

    def evaluate_batch(self, x_q, x_t, full: bool = False) -> EvalResult:
        """Aggregate reward for ``K`` candidates given as arrays (K, 4), (K, 3)."""
        x_q = np.atleast_2d(np.asarray(x_q, dtype=float))
        x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
        k = len(x_q)
        per_pair = np.zeros((len(self._prepared), k))
        divergent = np.zeros(k, dtype=bool)
        degenerate = np.zeros(k, dtype=bool)
        for i, prep in enumerate(self._prepared):
            pair = prep.pair
            scale = self.noise_scale(pair, x_q, x_t)
            divergent |= ((scale * pair.sigma_t > self.divergence_translation)
                          | (scale * pair.sigma_r > self.divergence_rotation))
            kern = prep.full if full else prep.train
            r, deg = kern(x_q, x_t, scale)
            degenerate |= deg
            per_pair[i] = np.where(deg, 0.0, r)
        with np.errstate(divide="ignore"):
            agg = np.exp(np.mean(np.log(per_pair), axis=0))
        agg = np.where(divergent | degenerate, 0.0, agg)
        return EvalResult(agg, divergent, degenerate, per_pair)

    def evaluate(self, X: Pose) -> float:
        """Aggregate reward of one candidate over every associated pose.

        Raises
        ------
        DegenerateGeometry
            If any pair cannot be aligned at this candidate.
        """
        res = self.evaluate_batch(X.quat[None], X.translation[None], full=True)
        if res.degenerate[0]:
            raise DegenerateGeometry("trajectory geometry is degenerate at this candidate")
        return float(res.reward[0])


def env_evaluate(X: Pose, pairs, **kwargs) -> float:
    """Geometric-mean reward of candidate ``X`` over the given pairs."""
    return CalibrationEnv(pairs, **kwargs).evaluate(X)
