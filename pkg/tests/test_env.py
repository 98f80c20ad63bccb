import itertools

import numpy as np
import pytest

from rlcalib.alignment import trajectory_reward
from rlcalib.env import (
    CalibrationEnv,
    SynthConfig,
    env_evaluate,
    make_observed_pair,
    replay_pair,
    synth_trajectory,
)
from rlcalib.excitation import excitation_scores
from rlcalib.geometry import (
    Pose,
    UnitQuaternion,
    quat_conj,
    quat_exp,
    quat_from_axis_angle,
    quat_mul,
    quat_rotate,
)

X_TRUE = Pose(UnitQuaternion.from_array(quat_from_axis_angle([1, 1, 1], np.radians(20))),
              [0.650, -0.372, -0.016])


def short(**kw):
    kw.setdefault("duration", 20.0)
    return SynthConfig(**kw)


def perturb(X: Pose, d):
    """Right-perturb X by a 6-vector (translation m, rotation vector rad)."""
    d = np.asarray(d, dtype=float)
    q = quat_mul(X.quat, quat_exp(d[3:]))
    return Pose(UnitQuaternion.from_array(q), X.translation + d[:3])


def quat_log(q):
    q = np.where(q[..., :1] < 0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    return 2 * np.arctan2(s, q[..., :1]) * v / np.where(s > 0, s, 1)


class TestSynthetic:
    def test_static(self):
        cfg = short(rot_amp=0.0, trans_amp=0.0)
        ref, imu = synth_trajectory(cfg)
        np.testing.assert_allclose(imu.gyro, 0, atol=1e-15)
        np.testing.assert_allclose(np.linalg.norm(imu.accel, axis=1), 9.81, atol=1e-12)
        np.testing.assert_allclose(ref.translations, 0, atol=1e-15)

    def test_single_axis_rate_rank(self):
        _, imu = synth_trajectory(short(rot_amp=(0.5, 0.0, 0.0)))
        centered = imu.gyro - imu.gyro.mean(axis=0)
        assert np.linalg.matrix_rank(centered, tol=1e-9) == 1
        rot, _ = excitation_scores(imu)
        assert rot == pytest.approx(0.0, abs=1e-12)

    def test_imu_matches_finite_differences(self):
        cfg = short(pose_rate=200.0, imu_rate=200.0, duration=10.0)
        ref, imu = synth_trajectory(cfg)
        dt = 1 / 200.0
        q, p = ref.rotations, ref.translations
        # fourth-order Richardson combination of spans 2dt and 4dt
        def rate(k):
            return quat_log(quat_mul(quat_conj(q[2 - k:len(q) - 2 - k]), q[2 + k:len(q) - 2 + k])) / (2 * k * dt)

        def accel(k):
            return (p[2 + k:len(p) - 2 + k] - 2 * p[2:-2] + p[2 - k:len(p) - 2 - k]) / (k * dt) ** 2

        gyro_fd = (4 * rate(1) - rate(2)) / 3
        acc_fd = quat_rotate(quat_conj(q[2:-2]), (4 * accel(1) - accel(2)) / 3 + [0, 0, 9.81])
        np.testing.assert_allclose(gyro_fd, imu.gyro[2:-2], atol=1e-4)
        np.testing.assert_allclose(acc_fd, imu.accel[2:-2], atol=1e-4)

    def test_excitation_grows_with_amplitude(self):
        scores = []
        for amp in (0.05, 0.1, 0.2, 0.4):
            _, imu = synth_trajectory(short(rot_amp=amp, trans_amp=amp))
            scores.append(excitation_scores(imu))
        rot, acc = np.array(scores).T
        assert np.all(np.diff(rot) > 0) and np.all(np.diff(acc) > 0)

    def test_seeded(self):
        a, _ = synth_trajectory(short(seed=3))
        b, _ = synth_trajectory(short(seed=3))
        np.testing.assert_array_equal(a.translations, b.translations)

    @pytest.mark.parametrize("kw", [dict(duration=0), dict(rot_amp=-1.0), dict(sigma_t=-1.0)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)


class TestObservedPair:
    def setup_method(self):
        self.ref, self.imu = synth_trajectory(short())

    def test_reward_one_at_truth(self):
        pair = make_observed_pair(self.ref, X_TRUE)
        assert trajectory_reward(self.ref, pair.sensor, X_TRUE).reward == pytest.approx(1, abs=1e-7)
        # √ of the float residual floor costs ~1e-8
        assert env_evaluate(X_TRUE, [pair]) == pytest.approx(1.0, abs=1e-7)

    def test_lever_arm_error_not_absorbed(self):
        pair = make_observed_pair(self.ref, X_TRUE)
        wrong = Pose(X_TRUE.rotation, X_TRUE.translation + [1.0, 0, 0])
        assert env_evaluate(wrong, [pair]) < 0.9

    def test_grid_argmax_at_truth(self):
        env = CalibrationEnv(make_observed_pair(self.ref, X_TRUE))
        steps = (-1, 0, 1)
        d = np.array(list(itertools.product(steps, repeat=6)), dtype=float)
        d[:, :3] *= 0.01
        d[:, 3:] *= np.radians(0.5)
        cands = [perturb(X_TRUE, v) for v in d]
        r = env.evaluate_batch(np.array([c.quat for c in cands]),
                               np.array([c.translation for c in cands]), full=True).reward
        best = np.flatnonzero(r == r.max())
        assert list(best) == [len(d) // 2]

    def test_half_normal_translation_noise(self):
        ref, _ = synth_trajectory(SynthConfig(duration=100.0))
        sigma = 0.005
        pair = make_observed_pair(ref, X_TRUE, sigma, 0.0, np.random.default_rng(0))
        res = trajectory_reward(ref, pair.sensor, X_TRUE)
        assert res.n >= 10_000
        # |e_t| is the norm of an isotropic 3-D Gaussian: chi(3) mean σ√(8/π)
        mean_norm = sigma * np.sqrt(8 / np.pi)
        assert res.translation_errors.mean() == pytest.approx(mean_norm, rel=0.05)
        assert -np.log(res.reward) == pytest.approx(np.sqrt(mean_norm / 4), rel=0.05)
        per_axis = sigma * np.sqrt(2 / np.pi) * np.sqrt(3)
        assert res.reward == pytest.approx(np.exp(-np.sqrt(per_axis / 4)), rel=0.05)

    def test_noise_scale_grows_with_distance(self):
        pair = make_observed_pair(self.ref, X_TRUE, 0.005, 0.001, np.random.default_rng(1),
                                  kappa=0.5)
        env = CalibrationEnv(pair)
        near = env.noise_scale(pair, X_TRUE.quat[None], X_TRUE.translation[None])
        far = env.noise_scale(pair, X_TRUE.quat[None], X_TRUE.translation[None] + 1.0)
        assert near[0] == 1.0
        assert far[0] == pytest.approx(1 + 0.5 * np.sqrt(3))

    def test_divergence_sentinel(self):
        pair = make_observed_pair(self.ref, X_TRUE, 0.01, 0.0, np.random.default_rng(2),
                                  kappa=0.5)
        env = CalibrationEnv(pair)
        far = Pose(X_TRUE.rotation, X_TRUE.translation + [100.0, 0, 0])
        res = env.evaluate_batch(far.quat[None], far.translation[None])
        assert res.divergent[0] and res.reward[0] == 0.0
        assert env.evaluate(X_TRUE) > 0

    def test_restricted(self):
        pair = make_observed_pair(self.ref, X_TRUE, 0.01, 0.01, np.random.default_rng(3))
        sub = pair.restricted([(2.0, 4.0), (10.0, 11.0)])
        ts = sub.sensor.timestamps
        assert np.all(((ts >= 2) & (ts <= 4)) | ((ts >= 10) & (ts <= 11)))
        assert len(sub.noise_t) == len(ts)


class TestAggregation:
    def setup_method(self):
        self.ref, _ = synth_trajectory(short())
        rng = np.random.default_rng(4)
        self.pairs = [make_observed_pair(self.ref, X_TRUE, 0.01, 0.002, rng) for _ in range(3)]
        self.X = perturb(X_TRUE, [0.02, -0.01, 0.0, 0.01, 0.0, -0.02])

    def test_single_pair_matches_trajectory_reward(self):
        p = self.pairs[0]
        expected = trajectory_reward(self.ref, p.sensor, self.X).reward
        assert env_evaluate(self.X, [p]) == pytest.approx(expected, rel=1e-10)

    def test_idempotent(self):
        p = self.pairs[0]
        assert env_evaluate(self.X, [p, p]) == pytest.approx(env_evaluate(self.X, [p]), rel=1e-12)

    def test_geometric_mean_and_permutation(self):
        single = [env_evaluate(self.X, [p]) for p in self.pairs]
        joint = env_evaluate(self.X, self.pairs)
        assert joint == pytest.approx(np.prod(single) ** (1 / 3), rel=1e-12)
        for perm in itertools.permutations(self.pairs):
            assert env_evaluate(self.X, list(perm)) == pytest.approx(joint, rel=1e-12)

    def test_subsampled_training_kernel(self):
        ref, _ = synth_trajectory(SynthConfig(duration=30.0))
        env = CalibrationEnv(make_observed_pair(ref, X_TRUE), max_poses=500)
        assert env.n_poses == [len(ref)]
        r = env.evaluate_batch(X_TRUE.quat[None], X_TRUE.translation[None]).reward
        assert r[0] == pytest.approx(1.0, abs=1e-7)

    def test_replay_pair(self):
        p = self.pairs[0]
        replay = replay_pair(self.ref, p.sensor)
        assert env_evaluate(self.X, [replay]) == pytest.approx(env_evaluate(self.X, [p]),
                                                               rel=1e-10)


def directional_curvature(env, h=1e-3):
    """Central second differences of -log R along the six coordinate directions."""
    out = []
    for i in range(6):
        d = np.zeros(6)
        d[i] = h
        f = [-np.log(env.evaluate(perturb(X_TRUE, s * d))) for s in (-1, 0, 1)]
        out.append((f[0] - 2 * f[1] + f[2]) / h**2)
    return np.array(out)


class TestWeakExcitation:
    def test_joint_curvature(self):
        pairs = []
        for axis in range(3):
            amp = np.zeros(3)
            amp[axis] = 0.6
            ref, _ = synth_trajectory(short(rot_amp=amp, seed=axis))
            pairs.append(make_observed_pair(ref, X_TRUE))
        single = [directional_curvature(CalibrationEnv(p)) for p in pairs]
        joint = directional_curvature(CalibrationEnv(pairs))
        for c in single:
            assert c.min() < 1e-6 * c.max()
        assert joint.min() > 1e-3 * joint.max()
