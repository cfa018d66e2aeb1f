"""
Tests for panoptic confidence and mask/segment fusion
"""

import numpy as np
import pytest

from superpoint_mapper.core import Frame, PanopticInstance, PanopticKind
from superpoint_mapper.errors import UnknownCategoryError
from superpoint_mapper.segmentation import estimate_normals, segment_depth
from superpoint_mapper.surfaces import canonical_instances, fuse_masks, panoptic_confidence
from superpoint_mapper.synth import BOX_CLASS as BOX
from superpoint_mapper.synth import WALL_CLASS as WALL


def _segments(frame: Frame):
    normals = estimate_normals(frame.depth, frame.intrinsics)
    return segment_depth(frame.depth, normals, frame.intrinsics)


class TestPanopticConfidence:
    """Test panoptic_confidence"""

    @pytest.mark.parametrize("score", [0.8, 0.999, 0.05])
    def test_thing_passes_score(self, score, classes):
        """Test a thing instance reports its detection score"""
        instance = PanopticInstance(4, BOX, PanopticKind.THING, score)
        assert panoptic_confidence(instance, classes) == pytest.approx(score)

    def test_stuff_is_half(self, classes):
        """Test stuff instances get 0.5 regardless of score"""
        instance = PanopticInstance(1, WALL, PanopticKind.STUFF, 0.9)
        assert panoptic_confidence(instance, classes) == 0.5

    def test_unknown_category(self, classes):
        """Test a category outside the class set raises UnknownCategoryError"""
        instance = PanopticInstance(1, 77, PanopticKind.STUFF)
        with pytest.raises(UnknownCategoryError, match="neither thing nor stuff"):
            panoptic_confidence(instance, classes)

    def test_class_set_overrides_kind(self, classes):
        """Test the configured kind wins over the frame's own kind"""
        instance = PanopticInstance(1, WALL, PanopticKind.THING, 0.9)
        assert panoptic_confidence(instance, classes) == 0.5


class TestCanonicalInstances:
    """Test stuff canonicalization"""

    def test_stuff_of_one_category_collapses(self, wall_frame):
        """Test two wall regions share the lowest instance id"""
        mask = np.array(wall_frame.panoptic_mask)
        mask[:, :10] = 5
        frame = Frame(
            wall_frame.depth, mask,
            (PanopticInstance(1, WALL, PanopticKind.STUFF), PanopticInstance(5, WALL, PanopticKind.STUFF)),
            wall_frame.pose, wall_frame.intrinsics,
        )
        remapped, canonical = canonical_instances(frame)
        assert set(canonical) == {1}
        assert np.all(remapped == 1)

    def test_things_stay_separate(self, split_wall_frame):
        """Test thing ids are kept"""
        _, canonical = canonical_instances(split_wall_frame)
        assert set(canonical) == {1, 2}


class TestFuseMasks:
    """Test fuse_masks"""

    def test_split_wall(self, split_wall_frame, classes):
        """Test one plane under two masks yields two surfaces"""
        surfaces = fuse_masks(split_wall_frame, _segments(split_wall_frame), classes=classes)
        assert [s.instance_id for s in surfaces] == [1, 2]
        assert [s.surface_id for s in surfaces] == [1, 2]
        wall, box = surfaces
        assert wall.kind is PanopticKind.STUFF
        assert wall.panoptic_confidence == 0.5
        assert box.kind is PanopticKind.THING
        assert box.panoptic_confidence == pytest.approx(0.8)
        assert wall.size == box.size == 600
        assert np.allclose(box.point_cloud[:, 2], 1.0)
        assert np.all(box.pixels[:, 0] < 20)

    def test_tiny_overlap_dropped(self, wall_frame, classes):
        """Test an intersection below min_surface_px does not become a surface"""
        mask = np.array(wall_frame.panoptic_mask)
        mask[10, 10:13] = 2
        frame = Frame(
            wall_frame.depth, mask,
            (PanopticInstance(1, WALL, PanopticKind.STUFF), PanopticInstance(2, BOX, PanopticKind.THING, 0.7)),
            wall_frame.pose, wall_frame.intrinsics,
        )
        surfaces = fuse_masks(frame, _segments(frame), min_surface_px=20, classes=classes)
        assert [s.instance_id for s in surfaces] == [1]
        assert surfaces[0].size == 40 * 30 - 3

    def test_unlabeled_pixels_ignored(self, wall_frame):
        """Test mask id 0 produces no surface"""
        mask = np.array(wall_frame.panoptic_mask)
        mask[:, 20:] = 0
        frame = Frame(wall_frame.depth, mask, wall_frame.instances, wall_frame.pose, wall_frame.intrinsics)
        surfaces = fuse_masks(frame, _segments(frame))
        assert len(surfaces) == 1
        assert surfaces[0].size == 600

    def test_no_segments(self, wall_frame):
        """Test an empty segmentation yields no surfaces"""
        assert fuse_masks(wall_frame, []) == []
