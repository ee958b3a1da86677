import json
import subprocess
import sys

import numpy as np
import pytest

from facepose import fileio
from facepose.cli import main
from facepose.grid import Annotation, GroundTruth
from facepose.rotation import EulerAngles


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestRotationCommands:
    def test_euler2mat_identity(self, capsys):
        code, out, _ = run_cli(capsys, "euler2mat", "--yaw", "0", "--pitch", "0", "--roll", "0")
        assert code == 0
        rows = [line.split() for line in out.strip().splitlines()]
        assert rows == [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]]

    def test_project_reflection_to_identity(self, capsys, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("1 0 0\n0 1 0\n0 0 -1\n")
        code, out, _ = run_cli(capsys, "project", "--input", str(path))
        assert code == 0
        got = np.array([[float(v) for v in line.split()] for line in out.strip().splitlines()])
        np.testing.assert_allclose(got, np.eye(3), atol=1e-9)

    def test_mat2euler_round_trip(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "euler2mat", "--yaw", "30", "--pitch", "20",
                               "--roll", "10", "--out", str(tmp_path / "m.txt"))
        assert code == 0
        code, out, _ = run_cli(capsys, "mat2euler", "--input", str(tmp_path / "m.txt"))
        assert code == 0
        got = [float(v) for v in out.split()]
        np.testing.assert_allclose(got, [30, 20, 10], atol=1e-6)

    def test_project_rank_deficient_exits_2(self, capsys, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("1 0 0\n0 0 0\n0 0 0\n")
        code, _, err = run_cli(capsys, "project", "--input", str(path))
        assert code == 2
        assert "error" in err

    def test_nine_significant_digits(self, capsys):
        code, out, _ = run_cli(capsys, "euler2mat", "--yaw", "45", "--pitch", "0", "--roll", "0")
        assert code == 0
        assert "0.707106781" in out


class TestUsageErrors:
    def test_unknown_command_exits_1(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 1

    def test_missing_required_flag_exits_1(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["euler2mat", "--yaw", "1"])
        assert e.value.code == 1

    def test_no_command_exits_1(self, capsys):
        assert main([]) == 1

    def test_missing_file_exits_2(self, capsys):
        code, _, err = run_cli(capsys, "mat2euler", "--input", "/nonexistent/m.txt")
        assert code == 2


class TestGradcheck:
    @pytest.mark.parametrize("target", ["pose_loss", "bbox_loss"])
    def test_targets_pass(self, capsys, target):
        code, out, _ = run_cli(capsys, "gradcheck", "--target", target, "--seed", "1")
        assert code == 0
        assert "max_relative_error" in out

    def test_train_step_target(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck", "--target", "train_step", "--seed", "1")
        assert code == 0


class TestCodecCommands:
    def write_annotations(self, tmp_path):
        anns = [
            Annotation("img-0", [GroundTruth((0.5, 0.5, 0.2, 0.25), EulerAngles(40, -10, 25))]),
            Annotation("img-1", [GroundTruth((0.3, 0.7, 0.15, 0.15), EulerAngles(-120, 30, -60))]),
        ]
        path = tmp_path / "ann.jsonl"
        fileio.write_annotations(path, anns)
        return path, anns

    def test_encode_decode_round_trip(self, capsys, tmp_path):
        ann_path, anns = self.write_annotations(tmp_path)
        tensor_path = tmp_path / "logits.bin"
        code, _, _ = run_cli(capsys, "encode", "--annotations", str(ann_path),
                             "--out", str(tensor_path), "--grid-size", "7")
        assert code == 0
        code, out, _ = run_cli(capsys, "decode", "--tensor", str(tensor_path),
                               "--grid-size", "7", "--conf-threshold", "0.5")
        assert code == 0
        lines = [json.loads(l) for l in out.strip().splitlines()]
        assert len(lines) == 2
        for record, ann in zip(lines, anns):
            assert len(record["detections"]) == len(ann.objects)
            det = record["detections"][0]
            gt = ann.objects[0]
            np.testing.assert_allclose(det["box"], gt.box, atol=1e-6)

    def test_nms_command(self, capsys, tmp_path):
        dets = {
            "image_index": 0,
            "detections": [
                {"box": [0.5, 0.5, 0.2, 0.2], "confidence": 0.9, "class_id": 0,
                 "class_score": 0.9, "pose": {"yaw": 0.0, "pitch": 0.0, "roll": 0.0}},
                {"box": [0.5, 0.5, 0.2, 0.2], "confidence": 0.8, "class_id": 0,
                 "class_score": 0.8, "pose": {"yaw": 0.0, "pitch": 0.0, "roll": 0.0}},
            ],
        }
        path = tmp_path / "dets.jsonl"
        path.write_text(json.dumps(dets) + "\n")
        code, out, _ = run_cli(capsys, "nms", "--detections", str(path),
                               "--iou-threshold", "0.5")
        assert code == 0
        record = json.loads(out.strip())
        assert len(record["detections"]) == 1
        assert record["detections"][0]["confidence"] == 0.9

    def test_loss_command(self, capsys, tmp_path):
        ann_path, _ = self.write_annotations(tmp_path)
        tensor_path = tmp_path / "logits.bin"
        run_cli(capsys, "encode", "--annotations", str(ann_path),
                "--out", str(tensor_path), "--grid-size", "7")
        code, out, _ = run_cli(capsys, "loss", "--tensor", str(tensor_path),
                               "--annotations", str(ann_path), "--grid-size", "7")
        assert code == 0
        breakdown = json.loads(out)
        assert set(breakdown) == {
            "l_xy", "l_wh", "l_cls", "l_obj", "l_bbox",
            "l_vmse_x", "l_vmse_y", "l_vmse_z", "l_ortho", "l_pose", "total",
        }
        # perfect logits: every component is at (or within clamp of) zero
        assert breakdown["total"] < 1e-5


class TestPipeline:
    def test_gen_train_eval_deterministic(self, capsys, tmp_path):
        data_dir = tmp_path / "data"
        code, _, _ = run_cli(capsys, "gen-data", "--n", "12", "--seed", "4",
                             "--image-size", "32", "--max-markers", "1",
                             "--out", str(data_dir))
        assert code == 0

        config = {
            "seed": 1,
            "model": {
                "image_size": 32, "grid_size": 4,
                "backbone_widths": [4, 6, 6, 8], "backbone_strides": [2, 2, 2, 1],
                "detect_hidden": 8, "pose_hidden": 8,
            },
            "schedule": {
                "phases": [
                    {"epochs": 1, "batch_size": 4, "learning_rate": 0.02,
                     "frozen": ["backbone", "pose_head"]},
                    {"epochs": 1, "batch_size": 4, "learning_rate": 0.005,
                     "frozen": ["pose_head"]},
                    {"epochs": 1, "batch_size": 4, "learning_rate": 0.005, "frozen": []},
                ]
            },
            "eval": {"conf_threshold": 0.3},
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config))

        out_a, out_b = tmp_path / "run-a", tmp_path / "run-b"
        for out in (out_a, out_b):
            code, _, _ = run_cli(capsys, "train", "--config", str(cfg_path),
                                 "--data", str(data_dir), "--out", str(out))
            assert code == 0
            for name in ("weights.bin", "history.jsonl", "eval.json", "resolved_config.json"):
                assert (out / name).exists()

        for name in ("weights.bin", "history.jsonl", "eval.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

        # eval on the emitted weights reproduces the stored report bit for bit
        eval_out = tmp_path / "eval.json"
        code, _, _ = run_cli(capsys, "eval", "--weights", str(out_a / "weights.bin"),
                             "--data", str(data_dir), "--config", str(cfg_path),
                             "--out", str(eval_out))
        assert code == 0
        assert eval_out.read_bytes() == (out_a / "eval.json").read_bytes()

    def test_resolved_config_materializes_defaults(self, capsys, tmp_path):
        data_dir = tmp_path / "data"
        run_cli(capsys, "gen-data", "--n", "4", "--seed", "4", "--image-size", "16",
                "--max-markers", "1", "--out", str(data_dir))
        config = {
            "seed": 3,
            "model": {"image_size": 16, "grid_size": 2,
                      "backbone_widths": [2, 3, 3, 4], "backbone_strides": [2, 2, 2, 1],
                      "detect_hidden": 4, "pose_hidden": 4},
            "schedule": {"phases": [
                {"epochs": 1, "batch_size": 4, "learning_rate": 0.01,
                 "frozen": ["backbone", "pose_head"]},
                {"epochs": 0, "batch_size": 4, "learning_rate": 0.001,
                 "frozen": ["pose_head"]},
                {"epochs": 0, "batch_size": 4, "learning_rate": 0.001, "frozen": []},
            ]},
        }
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "run"
        code, _, _ = run_cli(capsys, "train", "--config", str(cfg_path),
                             "--data", str(data_dir), "--out", str(out))
        assert code == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        # defaults materialized alongside the overrides
        assert resolved["loss_weights"]["alpha"] == 0.5
        assert resolved["eval"]["match_iou_threshold"] == 0.5
        assert resolved["model"]["pose_params"] == 9
        assert resolved["seed"] == 3

    def test_unknown_config_key_exits_2(self, capsys, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({"sede": 3}))
        code, _, err = run_cli(capsys, "train", "--config", str(cfg_path),
                               "--data", "x", "--out", "y")
        assert code == 2
        assert "unknown" in err


class TestEntryPoint:
    def test_console_script(self):
        proc = subprocess.run(
            [sys.executable, "-m", "facepose.cli", "euler2mat",
             "--yaw", "90", "--pitch", "0", "--roll", "0"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        rows = [line.split() for line in proc.stdout.strip().splitlines()]
        assert [float(v) for v in rows[0]] == pytest.approx([0, -1, 0], abs=1e-12)
