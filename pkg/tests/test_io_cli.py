import subprocess
import sys

import numpy as np
import pytest

from rlcalib import io
from rlcalib.alignment import trajectory_reward
from rlcalib.cli import DEFAULT_TRUTH, ConfigError, build_settings, main
from rlcalib.env import SynthConfig, synth_trajectory

SHORT = ["--set", "synth.duration=10"]
QUICK = ["--set", "ppo.iterations=20", "--set", "ppo.n_starts=1"]


def write(path, text):
    path.write_text(text)
    return path


class TestTrajectoryFormat:
    def test_two_lines(self, tmp_path):
        f = write(tmp_path / "t.txt", "# comment\n0.0 1 2 3 0 0 0 1\n0.1 1 2 3 0 0 1 0\n")
        traj = io.load_trajectory(f)
        assert len(traj) == 2
        np.testing.assert_array_equal(traj.rotations[1], [0, 0, 0, 1])
        np.testing.assert_array_equal(traj.translations[0], [1, 2, 3])

    def test_near_unit_renormalized(self, tmp_path):
        f = write(tmp_path / "t.txt", "0.0 0 0 0 0 0 0 1.0005\n")
        q = io.load_trajectory(f).rotations[0]
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-15)

    def test_non_unit_rejected(self, tmp_path):
        f = write(tmp_path / "t.txt", "0.0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1.01\n")
        with pytest.raises(io.FormatError, match=":2:"):
            io.load_trajectory(f)

    def test_duplicate_timestamp_names_line(self, tmp_path):
        f = write(tmp_path / "t.txt", "0.0 0 0 0 0 0 0 1\n# gap\n0.0 0 0 0 0 0 0 1\n")
        with pytest.raises(io.FormatError) as exc:
            io.load_trajectory(f)
        assert exc.value.line == 3 and "line 1" in str(exc.value)

    @pytest.mark.parametrize("line, col", [("0.0 0 0 zero 0 0 0 1", "tz"),
                                           ("0.0 0 0 0 0 0 0 nan", "qw")])
    def test_bad_field(self, tmp_path, line, col):
        with pytest.raises(io.FormatError, match=col):
            io.load_trajectory(write(tmp_path / "t.txt", line + "\n"))

    def test_wrong_field_count(self, tmp_path):
        with pytest.raises(io.FormatError, match="expected 8 fields"):
            io.load_trajectory(write(tmp_path / "t.txt", "0.0 1 2 3\n"))

    def test_round_trip_exact(self, tmp_path):
        ref, _ = synth_trajectory(SynthConfig(duration=2.0))
        io.save_trajectory(tmp_path / "r.txt", ref)
        back = io.load_trajectory(tmp_path / "r.txt")
        np.testing.assert_array_equal(back.timestamps, ref.timestamps)
        np.testing.assert_array_equal(back.translations, ref.translations)
        np.testing.assert_allclose(back.rotations, ref.rotations, atol=1e-15)

    def test_pose_file(self, tmp_path):
        io.save_pose(tmp_path / "x.txt", DEFAULT_TRUTH)
        back = io.load_pose(tmp_path / "x.txt")
        np.testing.assert_allclose(back.quat, DEFAULT_TRUTH.quat, atol=1e-15)
        np.testing.assert_array_equal(back.translation, DEFAULT_TRUTH.translation)


class TestImuFormat:
    def test_header_and_rows(self, tmp_path):
        f = write(tmp_path / "i.csv", "timestamp,wx,wy,wz,ax,ay,az\n"
                  "0,0,0,0,0,0,9.81\n0.01,0,0,0,0,0,9.81\n0.02,0,0,0,0,0,9.81\n")
        assert len(io.load_imu(f)) == 3

    def test_reordered_header(self, tmp_path):
        f = write(tmp_path / "i.csv", "az,ay,ax,wz,wy,wx,timestamp\n9.81,0,0,3,2,1,0\n")
        imu = io.load_imu(f)
        np.testing.assert_array_equal(imu.gyro[0], [1, 2, 3])
        np.testing.assert_array_equal(imu.accel[0], [0, 0, 9.81])

    def test_missing_column_in_header(self, tmp_path):
        f = write(tmp_path / "i.csv", "timestamp,wx,wy,wz,ax,ay\n0,0,0,0,0,0\n")
        with pytest.raises(io.FormatError, match="'az'"):
            io.load_imu(f)

    def test_missing_column_in_row(self, tmp_path):
        f = write(tmp_path / "i.csv", "0,0,0,0,0,0,9.81\n0.01,0,0,0,0\n")
        with pytest.raises(io.FormatError, match=r":2:.*'ay'"):
            io.load_imu(f)

    def test_scientific_notation(self, tmp_path):
        f = write(tmp_path / "i.csv", "0.0,1e-3,-2.5E-2,0,0,0,9.81e0\n1e-2,0,0,0,0,0,9.81\n")
        imu = io.load_imu(f)
        np.testing.assert_array_equal(imu.gyro[0], [1e-3, -2.5e-2, 0])

    def test_round_trip(self, tmp_path):
        _, imu = synth_trajectory(SynthConfig(duration=1.0))
        io.save_imu(tmp_path / "i.csv", imu)
        back = io.load_imu(tmp_path / "i.csv")
        np.testing.assert_array_equal(back.gyro, imu.gyro)
        np.testing.assert_array_equal(back.accel, imu.accel)


class TestConfig:
    def test_parse(self):
        d = io.parse_config_lines(["ppo.batch_size=32  # comment", "", "synth.rot_amp=0.1,0,0",
                                   "select.centered=false", "ppo.lr = 1e-3"])
        assert d == {"ppo.batch_size": 32, "synth.rot_amp": (0.1, 0, 0),
                     "select.centered": False, "ppo.lr": 1e-3}

    def test_malformed_line(self):
        with pytest.raises(io.FormatError, match=":2:"):
            io.parse_config_lines(["ppo.lr=1", "ppo.lr"], "cfg")

    def test_build_settings(self):
        s = build_settings({"ppo.batch_size": 32, "policy.rotation": "gaussian4",
                            "synth.rot_amp": (0.1, 0, 0)}, seed=5)
        assert s.ppo.batch_size == 32 and s.ppo.policy == "gaussian4"
        assert s.ppo.seed == 5 and s.synth.seed == 5
        assert s.synth.rot_amp == (0.1, 0.0, 0.0)

    @pytest.mark.parametrize("values, key", [({"ppo.bogus": 1}, "ppo.bogus"),
                                             ({"nope.x": 1}, "nope.x"),
                                             ({"ppo.batch_size": 2.5}, "ppo.batch_size"),
                                             ({"ppo.batch_size": 4}, "ppo")])
    def test_errors_name_key(self, values, key):
        with pytest.raises(ConfigError, match=key):
            build_settings(values)


class TestJson:
    def test_nan_becomes_null(self, tmp_path):
        io.write_json(tmp_path / "a.json", {"x": float("nan"), "y": np.float64(2.5),
                                            "z": np.arange(2)})
        assert io.read_json(tmp_path / "a.json") == {"x": None, "y": 2.5, "z": [0, 1]}

    def test_pose_dict_round_trip(self, tmp_path):
        io.write_json(tmp_path / "p.json", io.pose_to_dict(DEFAULT_TRUTH))
        back = io.pose_from_dict(io.read_json(tmp_path / "p.json"))
        np.testing.assert_allclose(back.quat, DEFAULT_TRUTH.quat, atol=1e-15)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["simulate", "--out", str(out), *SHORT]) == 0
    return out


@pytest.fixture(scope="module")
def calibrated(dataset, tmp_path_factory):
    runs = []
    for _ in range(2):
        out = tmp_path_factory.mktemp("run")
        code = main(["calibrate", "--reference", str(dataset / "reference.txt"),
                     "--sensor", str(dataset / "sensor.txt"),
                     "--truth", str(dataset / "extrinsic.txt"), "--out", str(out), *QUICK])
        runs.append((code, out))
    return runs


class TestCli:
    def test_simulate_round_trip(self, dataset):
        cfg = SynthConfig(duration=10.0)
        ref, imu = synth_trajectory(cfg, np.random.default_rng(cfg.seed))
        back = io.load_trajectory(dataset / "reference.txt")
        np.testing.assert_allclose(back.translations, ref.translations, atol=1e-9)
        np.testing.assert_allclose(back.rotations, ref.rotations, atol=1e-9)
        np.testing.assert_allclose(io.load_imu(dataset / "imu.csv").accel, imu.accel, atol=1e-9)
        truth = io.load_pose(dataset / "extrinsic.txt")
        np.testing.assert_allclose(truth.translation, [0.650, -0.372, -0.016], atol=1e-15)

    def test_short_run_not_converged(self, calibrated):
        code, out = calibrated[0]
        assert code == 2
        doc = io.read_json(out / "result.json")
        assert doc["status"] == "non-converged" and doc["diagnostic"]
        assert doc["iterations"] == 20
        assert set(doc["euler_error_deg"]) == {"roll", "pitch", "yaw"}

    def test_result_reward_recomputes(self, dataset, calibrated):
        doc = io.read_json(calibrated[0][1] / "result.json")
        est = io.pose_from_dict(doc["estimate"])
        ref = io.load_trajectory(dataset / "reference.txt")
        sensor = io.load_trajectory(dataset / "sensor.txt")
        assert abs(trajectory_reward(ref, sensor, est).reward - doc["reward"]) < 1e-9

    def test_reward_curve(self, calibrated):
        lines = (calibrated[0][1] / "reward_curve.csv").read_text().splitlines()
        assert lines[0] == "iter,mean_reward,max_reward,z1,z2,z3,sx,sy,sz"
        assert len(lines) == 21
        assert lines[1].startswith("1,")

    def test_bit_identical(self, calibrated):
        (_, a), (_, b) = calibrated
        for name in ("result.json", "reward_curve.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_evaluate_identity(self, dataset, tmp_path, capsys):
        out = tmp_path / "e.json"
        code = main(["evaluate", "--estimate", str(dataset / "extrinsic.txt"),
                     "--truth", str(dataset / "extrinsic.txt"), "--out", str(out)])
        assert code == 0
        doc = io.read_json(out)
        errors = list(doc["translation_error_m"].values()) + list(doc["euler_error_deg"].values())
        np.testing.assert_allclose(errors, 0.0, atol=1e-12)

    def test_evaluate_result_json(self, dataset, calibrated):
        code = main(["evaluate", "--estimate", str(calibrated[0][1] / "result.json"),
                     "--truth", str(dataset / "extrinsic.txt")])
        assert code == 0

    def test_align(self, dataset, tmp_path):
        out = tmp_path / "a.json"
        code = main(["align", "--reference", str(dataset / "reference.txt"),
                     "--estimate", str(dataset / "sensor.txt"),
                     "--extrinsic", str(dataset / "extrinsic.txt"), "--out", str(out)])
        assert code == 0
        assert io.read_json(out)["reward"] == pytest.approx(1.0, abs=1e-7)

    def test_select(self, dataset, tmp_path):
        out = tmp_path / "seg.csv"
        assert main(["select", "--imu", str(dataset / "imu.csv"), "--out", str(out)]) == 0
        segs = io.load_segments(out)
        assert segs and segs[0].end > segs[0].start

    def test_static_input_exit_2(self, tmp_path):
        data = tmp_path / "static"
        main(["simulate", "--out", str(data), *SHORT, "--set", "synth.rot_amp=0",
              "--set", "synth.trans_amp=0"])
        assert main(["select", "--imu", str(data / "imu.csv"),
                     "--out", str(tmp_path / "s.csv")]) == 2
        code = main(["calibrate", "--reference", str(data / "reference.txt"),
                     "--sensor", str(data / "sensor.txt"), "--imu", str(data / "imu.csv"),
                     "--out", str(tmp_path / "run"), *QUICK])
        assert code == 2
        assert io.read_json(tmp_path / "run" / "result.json")["status"] == "degenerate-input"

    def test_missing_file_exit_1(self, tmp_path, capsys):
        code = main(["calibrate", "--reference", str(tmp_path / "nope.txt"),
                     "--sensor", str(tmp_path / "nope.txt"), "--out", str(tmp_path)])
        assert code == 1
        assert "nope.txt" in capsys.readouterr().err

    def test_bad_config_exit_1(self, dataset, tmp_path, capsys):
        code = main(["calibrate", "--reference", str(dataset / "reference.txt"),
                     "--sensor", str(dataset / "sensor.txt"), "--out", str(tmp_path),
                     "--set", "ppo.batch_sise=8"])
        assert code == 1
        assert "ppo.batch_sise" in capsys.readouterr().err

    def test_malformed_input_exit_1(self, dataset, tmp_path, capsys):
        bad = write(tmp_path / "bad.txt", "0.0 0 0 0 0 0 0 1\n0.1 0 0 x 0 0 0 1\n")
        code = main(["align", "--reference", str(bad), "--estimate", str(dataset / "sensor.txt")])
        assert code == 1
        assert "bad.txt:2" in capsys.readouterr().err

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "rlcalib", "--help"],
                             capture_output=True, text=True)
        assert res.returncode == 0 and "calibrate" in res.stdout
