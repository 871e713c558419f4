import json

import numpy as np
import pytest
from click.testing import CliRunner

from scenemem.cli import main
from scenemem.geometry import PointCloud
from scenemem.pointcloud_io import write_spcl
from scenemem.scenes import generate_scene, make_clip_trajectory
from scenemem.session import SessionConfig, import_session


@pytest.fixture()
def runner():
    return CliRunner()


def cloud_at(offset, n=40, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(-0.3, 0.3, (n, 3)) + offset,
                      rng.uniform(size=(n, 3)))


class TestRetrieveCommand:
    def test_manifest_flow(self, runner, tmp_path):
        t = tmp_path / "t.spcl"
        write_spcl(cloud_at([0, 0, 0]), t)
        near = tmp_path / "near.spcl"
        write_spcl(cloud_at([0.05, 0, 0], seed=1), near)
        far = tmp_path / "far.spcl"
        write_spcl(cloud_at([40, 0, 0], seed=2), far)
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps({
            "targets": [str(t)],
            "candidates": [{"id": 3, "path": str(far)},
                           {"id": 9, "path": str(near)}],
            "config": {"k": 2, "epsilon": 0.05, "iou_cube_side": 0.1},
        }))
        out = tmp_path / "refs.json"
        result = runner.invoke(main, ["retrieve", "--manifest", str(manifest),
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert json.loads(out.read_text())["reference_ids"] == [9]


class TestEvalCommands:
    def test_closed_loop_oracle(self, runner, tmp_path):
        result = runner.invoke(main, [
            "eval", "closed-loop", "--scene-seed", "0", "--resolution", "48",
            "--clip-len", "4", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        record = json.loads((tmp_path / "closed_loop.json").read_text())[0]
        assert record["psnr_c"] == 99.0
        assert (tmp_path / "closed_loop.csv").exists()

    def test_long_horizon_oracle(self, runner, tmp_path):
        result = runner.invoke(main, [
            "eval", "long-horizon", "--scene-seed", "1", "--resolution", "48",
            "--clip-len", "4", "--clips", "4", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        records = json.loads((tmp_path / "long_horizon.json").read_text())
        assert [r["clip_count"] for r in records] == [2, 4]

    def test_density(self, runner, tmp_path):
        result = runner.invoke(main, [
            "eval", "density", "--scene-seed", "2", "--resolution", "64",
            "--views", "2", "--d-values", "0.01,0.07", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        rows = json.loads((tmp_path / "density.json").read_text())
        assert len(rows) == 2 and rows[0]["d"] == 0.01


class TestSessionCommands:
    def test_create_step_export_import(self, runner, tmp_path):
        bundle = tmp_path / "s.bundle"
        result = runner.invoke(main, ["session", "create", "--scene-seed", "3",
                                      "--out", str(bundle), "--resolution", "48",
                                      "--clip-len", "4"])
        assert result.exit_code == 0, result.output

        scene = generate_scene(3)
        intr = SessionConfig(resolution=48).intrinsics
        traj = make_clip_trajectory(scene, "pan_left", 4, intr,
                                    np.random.default_rng(0))
        traj_path = tmp_path / "traj.json"
        traj_path.write_text(json.dumps(traj.to_dict()))
        result = runner.invoke(main, ["session", "step", "--bundle", str(bundle),
                                      "--trajectory", str(traj_path),
                                      "--instruction", "2"])
        assert result.exit_code == 0, result.output
        s = import_session(bundle.read_bytes())
        assert s.clip_index == 1

        op_path = tmp_path / "op.json"
        op_path.write_text(json.dumps({
            "kind": "recolor-region",
            "region": {"type": "box", "min": [-100, -100, -100],
                       "max": [100, 100, 100]},
            "color": [0.5, 0.5, 0.5]}))
        result = runner.invoke(main, ["session", "edit", "--bundle", str(bundle),
                                      "--op", str(op_path)])
        assert result.exit_code == 0, result.output

        out2 = tmp_path / "copy.bundle"
        result = runner.invoke(main, ["session", "export", "--bundle", str(bundle),
                                      "--out", str(out2),
                                      "--memory-spcl", str(tmp_path / "m.spcl")])
        assert result.exit_code == 0, result.output
        assert out2.read_bytes() == bundle.read_bytes()
        assert (tmp_path / "m.spcl").exists()

        result = runner.invoke(main, ["session", "import", "--bundle", str(out2)])
        assert result.exit_code == 0
        assert json.loads(result.output)["clip_index"] == 1


class TestDatasetCommand:
    def test_build_tiny_dataset(self, runner, tmp_path):
        result = runner.invoke(main, ["dataset-build", "--out", str(tmp_path / "ds"),
                                      "--samples", "1", "--resolution", "32",
                                      "--seed", "1"])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "ds" / "manifest.json").exists()
