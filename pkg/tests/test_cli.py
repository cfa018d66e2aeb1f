"""
Tests for the spmap command line
"""

import pytest

from superpoint_mapper.cli import create_parser, main
from superpoint_mapper.dataset import write_dataset
from superpoint_mapper.synth import SYNTH_CLASSES


@pytest.fixture
def synth_dir(isolated_config):
    """Four-frame oracle dataset written through the CLI"""
    root = isolated_config / "data"
    assert main(["synth", str(root), "--frames", "4"]) == 0
    return root


class TestParser:
    """Test argument parsing"""

    def test_command_required(self):
        """Test running without a subcommand exits with usage"""
        with pytest.raises(SystemExit) as info:
            create_parser().parse_args([])
        assert info.value.code == 2

    def test_overrides(self):
        """Test repeated --set options are parsed as pairs"""
        args = create_parser().parse_args(["map", "data", "-o", "out", "--set", "k_c=10", "--set", "seed = 2"])
        assert args.overrides == [("k_c", "10"), ("seed", "2")]

    def test_bad_override(self):
        """Test --set without '=' is a usage error"""
        with pytest.raises(SystemExit):
            create_parser().parse_args(["map", "data", "-o", "out", "--set", "k_c"])


class TestCommands:
    """Test subcommands end to end"""

    def test_synth_writes_dataset(self, synth_dir):
        """Test synth writes the dataset layout with ground truth"""
        for name in ("intrinsics.txt", "poses.txt", "classes.txt", "gt.ply"):
            assert (synth_dir / name).exists()
        assert len(list((synth_dir / "depth").glob("*.png"))) == 4

    def test_map_and_eval(self, synth_dir, isolated_config):
        """Test map writes outputs and metrics, and eval scores them again"""
        out = isolated_config / "out"
        code = main(["map", str(synth_dir), "-o", str(out), "--gt", str(synth_dir / "gt.ply"), "--set", "workers=1"])
        assert code == 0
        for name in ("mesh.ply", "points.ply", "superpoints.txt", "instances.txt", "timing.txt", "metrics.txt"):
            assert (out / name).exists()
        (out / "metrics.txt").unlink()

        code = main(["eval", str(out), str(synth_dir / "gt.ply"), "--classes", str(synth_dir / "classes.txt")])
        assert code == 0
        assert (out / "metrics.txt").read_text().splitlines()[-1].startswith("all mean")

    def test_bench(self, synth_dir, capsys):
        """Test bench prints the timing table and the literal memory marker"""
        assert main(["bench", str(synth_dir), "--set", "workers=1"]) == 0
        output = capsys.readouterr().out
        assert "segmentation" in output
        assert "regularization" in output
        assert "[i] Peak map memory" in output

    def test_missing_dataset(self, isolated_config):
        """Test a missing dataset directory exits with 2"""
        assert main(["map", str(isolated_config / "none"), "-o", str(isolated_config / "out")]) == 2

    def test_unknown_config_key(self, synth_dir, isolated_config):
        """Test an unknown --set key exits with 2"""
        assert main(["map", str(synth_dir), "-o", str(isolated_config / "out"), "--set", "voxel=0.02"]) == 2

    def test_dataset_without_frames(self, isolated_config, small_intrinsics):
        """Test mapping zero frames exits with 1 on the empty map"""
        root = isolated_config / "empty"
        write_dataset(root, [], SYNTH_CLASSES)
        i = small_intrinsics
        (root / "intrinsics.txt").write_text(f"{i.fx} {i.fy} {i.cx} {i.cy} {i.width} {i.height}\n")
        assert main(["map", str(root), "-o", str(isolated_config / "out")]) == 1

    def test_unknown_scene(self, isolated_config):
        """Test a scene that is neither a preset nor a file exits with 2"""
        assert main(["synth", str(isolated_config / "x"), "--scene", "nowhere.toml"]) == 2


class TestConfigCommand:
    """Test spmap config"""

    def test_show(self, isolated_config, capsys):
        """Test show lists the resolved settings"""
        assert main(["config", "show", "--set", "theta_merge=5"]) == 0
        output = capsys.readouterr().out
        assert "theta_merge" in output
        assert "cli" in output

    def test_init_twice(self, isolated_config, capsys):
        """Test init creates the user config once"""
        assert main(["config", "init"]) == 0
        assert (isolated_config / "xdg" / "spmap" / "config.toml").exists()
        assert main(["config", "init"]) == 0
        assert "already exists" in capsys.readouterr().out

    def test_default(self, isolated_config, capsys):
        """Test default prints the template"""
        assert main(["config", "default"]) == 0
        assert "voxel_size = 0.01" in capsys.readouterr().out
