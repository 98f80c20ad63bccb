"""Targetless extrinsic calibration by policy-gradient search over SE(3).

A Bingham distribution over unit quaternions and a diagonal Gaussian over
translations form a stochastic policy; PPO moves it toward the extrinsic
whose sensor trajectory aligns best with a reference trajectory.
"""

from .alignment import DegenerateGeometry, trajectory_reward, umeyama_align
from .bingham import BinghamParams, bingham_sample, log_norm_const, mode
from .env import CalibrationEnv, SynthConfig, make_observed_pair, replay_pair, synth_trajectory
from .excitation import EmptySelection, ImuSequence, Segment, excitation_scores, select_segments
from .geometry import Pose, Trajectory, UnitQuaternion, geodesic_rotation_error, quat_to_euler
from .policy import PolicyParams, init_params
from .ppo import CalibrationResult, TrainConfig, calibrate, extrinsic_errors, train

__all__ = [
    "BinghamParams",
    "CalibrationEnv",
    "CalibrationResult",
    "DegenerateGeometry",
    "EmptySelection",
    "ImuSequence",
    "PolicyParams",
    "Pose",
    "Segment",
    "SynthConfig",
    "TrainConfig",
    "Trajectory",
    "UnitQuaternion",
    "bingham_sample",
    "calibrate",
    "excitation_scores",
    "extrinsic_errors",
    "geodesic_rotation_error",
    "init_params",
    "log_norm_const",
    "make_observed_pair",
    "mode",
    "quat_to_euler",
    "replay_pair",
    "select_segments",
    "synth_trajectory",
    "train",
    "trajectory_reward",
    "umeyama_align",
]
