"""Command-line entry point: artifacts, determinism and error handling."""

import json

import numpy as np
import pytest

from ngsgrasp import io
from ngsgrasp.cli import main, parse_args
from ngsgrasp.evaluator import force_closure
from ngsgrasp.scene import default_camera, load_scene, random_scene, save_scene


@pytest.fixture()
def scene_file(tmp_path):
    path = tmp_path / "scene.json"
    save_scene(path, random_scene(1, camera=default_camera(160, 120, 150.0)))
    return path


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestDetect:
    def test_force_closure_at_mu_one(self, scene_file, tmp_path):
        out = tmp_path / "det"
        assert main(["detect", "--scene", str(scene_file), "--out", str(out),
                     "--num-patches", "16"]) == 0
        gs = io.read_grasps(out / "grasps.jsonl")
        assert gs
        sc = load_scene(scene_file)
        assert all(force_closure(g, sc, 1.0) for g in gs)
        assert len(list((out / "heatmaps").glob("*.pfm"))) == 16

    def test_job_count_does_not_change_output(self, scene_file, tmp_path):
        for j in (1, 3):
            main(["detect", "--scene", str(scene_file), "--out", str(tmp_path / f"j{j}"),
                  "--num-patches", "12", "--jobs", str(j)])
        assert _tree(tmp_path / "j1") == _tree(tmp_path / "j3")

    def test_from_depth_file(self, scene_file, tmp_path):
        sim = tmp_path / "sim"
        assert main(["simulate", "--scene", str(scene_file), "--out", str(sim)]) == 0
        cam = json.loads((sim / "camera.json").read_text())
        (tmp_path / "k.json").write_text(json.dumps(cam["intrinsics"]))
        (tmp_path / "pose.json").write_text(json.dumps(cam["pose"]))
        rc = main(["detect", "--depth", str(sim / "depth_0000.pfm"), "--rgb",
                   str(sim / "rgb_0000.ppm"), "--intrinsics", str(tmp_path / "k.json"),
                   "--camera-pose", str(tmp_path / "pose.json"), "--num-patches", "8",
                   "--out", str(tmp_path / "d")])
        assert rc == 0
        assert (tmp_path / "d" / "grasps.jsonl").exists()

    def test_gated_runs(self, scene_file, tmp_path):
        rc = main(["detect", "--scene", str(scene_file), "--predictor", "gated",
                   "--num-patches", "4", "--out", str(tmp_path / "g")])
        assert rc == 0


class TestErrors:
    def test_missing_scene(self, tmp_path, capsys):
        assert main(["eval", "--scene", str(tmp_path / "none.json"), "--grasps", "x"]) == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["anchors", "--bogus"])
        assert exc.value.code != 0

    def test_detect_needs_input(self, tmp_path):
        assert main(["detect", "--out", str(tmp_path)]) == 2


class TestConfig:
    def test_file_then_flag_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# experiment\nseed = 5\nw-ref = 0.3\n")
        a = parse_args(["anchors", "--config", str(cfg)])
        assert a.seed == 5 and a.w_ref == 0.3
        b = parse_args(["anchors", "--config", str(cfg), "--seed", "9"])
        assert b.seed == 9 and b.w_ref == 0.3

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("colour = red\n")
        assert main(["anchors", "--config", str(cfg)]) == 2


class TestOtherCommands:
    def test_eval_report(self, scene_file, tmp_path):
        main(["detect", "--scene", str(scene_file), "--out", str(tmp_path / "d"),
              "--num-patches", "8"])
        rc = main(["eval", "--scene", str(scene_file), "--grasps",
                   str(tmp_path / "d" / "grasps.jsonl"), "--out", str(tmp_path / "e")])
        assert rc == 0
        rep = json.loads((tmp_path / "e" / "report.json").read_text())
        assert set(rep) >= {"ap_per_mu", "overall", "coverage"}
        assert rep["ap_per_mu"]["1"] == 1.0

    def test_anchors(self, tmp_path, capsys):
        (tmp_path / "gt.json").write_text(json.dumps([-0.5] * 4 + [0.5] * 4))
        assert main(["anchors", "--anchors", "2", "--mode", "shifted", "--gt",
                     str(tmp_path / "gt.json")]) == 0
        d = json.loads(capsys.readouterr().out)
        np.testing.assert_allclose(d["gammas"], [-0.5, 0.5])

    def test_invariance_suite_repeatable(self, tmp_path, capsys):
        outs = []
        for k in range(2):
            assert main(["invariance-suite", "--seed", "7", "--cases", "10",
                         "--out", str(tmp_path / str(k))]) == 0
            outs.append(capsys.readouterr().out)
        assert outs[0] == outs[1] and outs[0].count("PASS") == 4
        assert _tree(tmp_path / "0") == _tree(tmp_path / "1")

    def test_closed_loop(self, tmp_path):
        assert main(["closed-loop", "--profile", "static", "--seed", "2",
                     "--out", str(tmp_path / "c")]) == 0
        outcome = json.loads((tmp_path / "c" / "outcome.json").read_text())
        assert outcome["success"] is True

    def test_dataset_gen(self, scene_file, tmp_path):
        for k in range(2):
            assert main(["dataset-gen", "--scene", str(scene_file), "--n", "3",
                         "--patch-size", "16", "--seed", "4", "--out", str(tmp_path / str(k))]) == 0
        a, b = _tree(tmp_path / "0"), _tree(tmp_path / "1")
        assert a == b and len(a) == 9
