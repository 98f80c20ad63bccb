"""Calibrate a noisy synthetic recording end to end.

Selects informative IMU windows, trains one policy, and prints the error of
the estimate against the hidden extrinsic every few hundred iterations.
Takes about a minute.
"""
import numpy as np

from rlcalib.env import CalibrationEnv, SynthConfig, make_observed_pair, synth_trajectory
from rlcalib.excitation import select_segments
from rlcalib.geometry import Pose, UnitQuaternion, quat_from_axis_angle
from rlcalib.ppo import TrainConfig, calibrate, extrinsic_errors

X = Pose(UnitQuaternion.from_array(quat_from_axis_angle([1, 1, 1], np.radians(20))),
         [0.650, -0.372, -0.016])

ref, imu = synth_trajectory(SynthConfig())
pair = make_observed_pair(ref, X, sigma_t=0.005, sigma_r=np.radians(0.2),
                          rng=np.random.default_rng(1), kappa=0.5)

segments = select_segments([imu])
print(f"{len(segments)} informative segments, "
      f"{sum(s.end - s.start for s in segments):.0f} s of {ref.timestamps[-1]:.0f} s")
env = CalibrationEnv(pair.restricted([(s.start, s.end) for s in segments]))


def progress(it, params, trace):
    if it % 250 == 0:
        est = params.point_estimate().pose
        et, ee = extrinsic_errors(est, X)
        print(f"iter {it:5d}  mean reward {trace.mean_reward[-1]:.4f}  "
              f"translation error {np.round(et * 1e3, 1)} mm  Euler error {np.round(ee, 2)} deg")
    return False


res, _ = calibrate(env, TrainConfig(n_starts=1), X, callback=progress)
print(f"status {res.status} after {res.iterations} iterations, reward {res.reward:.4f}")
print(f"translation error {np.round(res.translation_error * 1e3, 2)} mm")
print(f"Euler error {np.round(res.euler_error, 3)} deg")
