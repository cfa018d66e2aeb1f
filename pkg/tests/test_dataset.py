"""
Tests for the on-disk dataset layout
"""

import numpy as np
import pytest

from superpoint_mapper.core import Frame, PanopticInstance, PanopticKind, Pose, ViolationKind
from superpoint_mapper.dataset import (
    Dataset,
    ingest_dataset,
    read_classes,
    read_ground_truth,
    write_dataset,
    write_ground_truth,
)
from superpoint_mapper.errors import DatasetError
from superpoint_mapper.export import read_labeled_ply
from superpoint_mapper.synth import SYNTH_CLASSES, WALL_CLASS, ground_truth_points, render_sequence


@pytest.fixture
def oracle_dir(tmp_path, oracle_scene):
    """First three oracle frames with ground truth written to disk"""
    frames = render_sequence(oracle_scene)[:3]
    write_dataset(tmp_path / "oracle", frames, SYNTH_CLASSES, ground_truth_points(oracle_scene, resolution=0.05))
    return tmp_path / "oracle", frames


class TestRoundTrip:
    """Test write_dataset followed by Dataset.open"""

    def test_metadata(self, oracle_dir, oracle_scene):
        """Test intrinsics, poses and classes survive"""
        root, frames = oracle_dir
        dataset = Dataset.open(root)
        assert len(dataset) == 3
        assert dataset.intrinsics == oracle_scene.intrinsics
        assert dataset.classes.things == SYNTH_CLASSES.things
        assert dataset.classes.name_of(WALL_CLASS) == "wall"
        np.testing.assert_allclose(dataset.poses[2].matrix, frames[2].pose.matrix, atol=1e-9)

    def test_frames(self, oracle_dir):
        """Test depth to the millimeter, exact masks, instances and colors"""
        root, frames = oracle_dir
        for original, loaded in zip(frames, ingest_dataset(root), strict=True):
            assert loaded.frame_index == original.frame_index
            np.testing.assert_allclose(loaded.depth, original.depth, atol=5e-4)
            np.testing.assert_array_equal(loaded.panoptic_mask, original.panoptic_mask)
            np.testing.assert_array_equal(loaded.color, original.color)
            assert loaded.instances == original.instances

    def test_stuff_score_placeholder(self, oracle_dir):
        """Test stuff instances are written with a '-' score"""
        root, _ = oracle_dir
        lines = (root / "panoptic" / "000000.txt").read_text().splitlines()
        stuff = [line for line in lines if line.split()[2] == "stuff"]
        assert stuff and all(line.endswith(" -") for line in stuff)

    def test_ground_truth(self, oracle_dir, oracle_scene):
        """Test ground-truth points come back with their labels"""
        root, _ = oracle_dir
        expected = ground_truth_points(oracle_scene, resolution=0.05)
        gt = Dataset.open(root).ground_truth()
        np.testing.assert_allclose(gt.points, expected.points, atol=1e-6)
        np.testing.assert_array_equal(gt.instance_ids, expected.instance_ids)
        np.testing.assert_array_equal(gt.semantic_ids, expected.semantic_ids)

    def test_classes_without_frames(self, tmp_path):
        """Test classes.txt lists every configured class and leaves out the implicit background"""
        assert write_dataset(tmp_path, [], SYNTH_CLASSES) == 0
        lines = (tmp_path / "classes.txt").read_text().splitlines()
        assert len(lines) == 1 + len(SYNTH_CLASSES.kinds)
        assert not any(line.startswith("0 ") for line in lines)
        classes = read_classes(tmp_path / "classes.txt")
        assert classes.things == SYNTH_CLASSES.things
        assert classes.stuff == SYNTH_CLASSES.stuff
        assert classes.name_of(0) == "background"

    def test_ground_truth_file(self, tmp_path, oracle_scene):
        """Test the ground-truth PLY carries no faces"""
        path = write_ground_truth(tmp_path / "gt.ply", ground_truth_points(oracle_scene, resolution=0.05))
        assert read_labeled_ply(path).faces.shape == (0, 3)
        assert len(read_ground_truth(path)) > 0


class TestErrors:
    """Test malformed datasets raise DatasetError"""

    def test_missing_directory(self, tmp_path):
        """Test a missing root"""
        with pytest.raises(DatasetError, match="not found"):
            Dataset.open(tmp_path / "nowhere")

    def test_missing_poses(self, oracle_dir):
        """Test a dataset without poses.txt fails to open"""
        root, _ = oracle_dir
        (root / "poses.txt").unlink()
        with pytest.raises(DatasetError, match="Missing poses.txt"):
            ingest_dataset(root)

    def test_malformed_pose(self, oracle_dir):
        """Test a short pose line names its line number"""
        root, _ = oracle_dir
        (root / "poses.txt").write_text("# header\n0 0 0 0 0 0 0\n")
        with pytest.raises(DatasetError, match="line 2"):
            Dataset.open(root)

    def test_missing_image(self, oracle_dir):
        """Test a missing depth image"""
        root, _ = oracle_dir
        (root / "depth" / "000001.png").unlink()
        with pytest.raises(DatasetError, match="Missing image"):
            Dataset.open(root).read_frame(1)

    def test_unknown_mask_id(self, tmp_path, small_intrinsics):
        """Test a mask id without a sidecar entry fails validation"""
        mask = np.ones(small_intrinsics.shape, dtype=np.int64)
        mask[0, :5] = 9
        frame = Frame(
            depth=np.full(small_intrinsics.shape, 1.0),
            panoptic_mask=mask,
            instances=(PanopticInstance(1, WALL_CLASS, PanopticKind.STUFF),),
            pose=Pose.identity(),
            intrinsics=small_intrinsics,
        )
        write_dataset(tmp_path, [frame], SYNTH_CLASSES)
        dataset = Dataset.open(tmp_path)
        with pytest.raises(DatasetError, match="failed validation") as info:
            dataset.read_frame(0)
        assert [v.kind for v in info.value.violations] == [ViolationKind.UNKNOWN_INSTANCE_ID]
        assert dataset.read_frame(0, validate=False).panoptic_mask[0, 0] == 9

    def test_malformed_sidecar(self, oracle_dir):
        """Test an unknown kind in a sidecar"""
        root, _ = oracle_dir
        (root / "panoptic" / "000000.txt").write_text("1 3 blob 0.5\n")
        with pytest.raises(DatasetError, match="Malformed instance on line 1"):
            Dataset.open(root).read_frame(0)
