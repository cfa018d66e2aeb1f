"""
Tests for the Label-TSDF map
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superpoint_mapper.core import backproject_pixels, pixel_grid
from superpoint_mapper.errors import EmptyMapError
from superpoint_mapper.tsdf import NO_LABEL, LabelTsdfMap, voxel_label

from conftest import planar_frame


def _surface_points(frame):
    us, vs = pixel_grid(frame.intrinsics)
    return backproject_pixels(us.ravel(), vs.ravel(), frame.depth.ravel(), frame.intrinsics, frame.pose)


class TestConstruction:
    """Test map parameters"""

    def test_truncation_below_two_voxels(self):
        """Test truncation < 2 * voxel_size raises ValueError"""
        with pytest.raises(ValueError, match="truncation"):
            LabelTsdfMap(voxel_size=0.01, truncation=0.015)

    def test_default_truncation(self):
        """Test truncation defaults to four voxels"""
        tsdf_map = LabelTsdfMap(voxel_size=0.02)
        assert tsdf_map.truncation == pytest.approx(0.08)

    def test_new_map_is_empty(self):
        """Test a fresh map is empty and cannot be meshed"""
        tsdf_map = LabelTsdfMap()
        assert tsdf_map.is_empty()
        with pytest.raises(EmptyMapError):
            tsdf_map.extract_labeled_mesh()


class TestIntegrateDepth:
    """Test projective TSDF integration"""

    def test_zero_crossing_at_wall(self, intrinsics):
        """Test voxels straddling the wall at z = 1 read close to zero"""
        tsdf_map = LabelTsdfMap(voxel_size=0.01, truncation=0.04)
        assert tsdf_map.integrate_depth(planar_frame(intrinsics, 1.0)) > 0
        tsdf, weight = tsdf_map.tsdf_at(np.array([[0.005, 0.005, 0.995], [0.005, 0.005, 1.005]]))
        assert tsdf == pytest.approx([0.005, -0.005], abs=1e-9)
        assert np.all(weight == 1.0)
        assert not tsdf_map.is_empty()

    def test_free_space_within_truncation(self, intrinsics):
        """Test a voxel 0.095 in front of the wall stores its distance"""
        tsdf_map = LabelTsdfMap(voxel_size=0.01, truncation=0.12)
        tsdf_map.integrate_depth(planar_frame(intrinsics, 1.0))
        tsdf, _ = tsdf_map.tsdf_at(np.array([[0.005, 0.005, 0.905]]))
        assert tsdf[0] == pytest.approx(0.095, abs=1e-9)

    def test_free_space_beyond_truncation(self, intrinsics):
        """Test at truncation 0.04 a voxel 0.095 in front of the wall stays unobserved"""
        tsdf_map = LabelTsdfMap(voxel_size=0.01, truncation=0.04)
        tsdf_map.integrate_depth(planar_frame(intrinsics, 1.0))
        tsdf, weight = tsdf_map.tsdf_at(np.array([[0.005, 0.005, 0.905], [0.005, 0.005, 0.975]]))
        assert np.isnan(tsdf[0])
        assert weight[0] == 0.0
        assert tsdf[1] == pytest.approx(0.025, abs=1e-9)
        assert weight[1] == 1.0

    def test_unobserved_voxel(self, intrinsics):
        """Test voxels far from the surface are unobserved"""
        tsdf_map = LabelTsdfMap()
        tsdf_map.integrate_depth(planar_frame(intrinsics, 1.0))
        tsdf, weight = tsdf_map.tsdf_at(np.array([[0.005, 0.005, 0.505]]))
        assert np.isnan(tsdf[0])
        assert weight[0] == 0.0

    def test_weights_accumulate(self, intrinsics):
        """Test repeated observations average and add weight"""
        tsdf_map = LabelTsdfMap()
        tsdf_map.integrate_depth(planar_frame(intrinsics, 1.0))
        tsdf_map.integrate_depth(planar_frame(intrinsics, 1.0, frame_index=1))
        tsdf, weight = tsdf_map.tsdf_at(np.array([[0.005, 0.005, 0.995]]))
        assert weight[0] == 2.0
        assert tsdf[0] == pytest.approx(0.005, abs=1e-9)
        assert tsdf_map.frames_integrated == 2

    def test_invalid_depth_frame(self, small_intrinsics):
        """Test a frame without valid depth updates nothing"""
        tsdf_map = LabelTsdfMap()
        assert tsdf_map.integrate_depth(planar_frame(small_intrinsics, 0.0)) == 0
        assert tsdf_map.is_empty()


class TestVotes:
    """Test superpoint vote histograms"""

    point = (0.005, 0.005, 0.995)

    def test_majority_wins(self):
        """Test the label with most votes labels the voxel"""
        tsdf_map = LabelTsdfMap()
        tsdf_map.cast_vote(self.point, 3)
        tsdf_map.cast_vote(self.point, 3)
        tsdf_map.cast_vote(self.point, 1)
        assert tsdf_map.votes_at(self.point) == {3: 2, 1: 1}
        assert tsdf_map.labels_at(np.array([self.point])).tolist() == [3]
        assert tsdf_map.total_votes() == 3

    def test_tie_goes_to_smallest_label(self):
        """Test equal counts resolve to the smaller label"""
        tsdf_map = LabelTsdfMap()
        tsdf_map.cast_vote(self.point, 5)
        tsdf_map.cast_vote(self.point, 2)
        assert tsdf_map.labels_at(np.array([self.point])).tolist() == [2]
        assert voxel_label({5: 1, 2: 1}) == 2
        assert voxel_label({}) is None

    def test_unvoted_voxel(self):
        """Test a voxel without votes has no label"""
        tsdf_map = LabelTsdfMap()
        assert tsdf_map.labels_at(np.array([self.point])).tolist() == [NO_LABEL]
        assert tsdf_map.votes_at(self.point) == {}

    def test_negative_label_rejected(self):
        """Test negative labels raise ValueError"""
        with pytest.raises(ValueError):
            LabelTsdfMap().cast_vote(self.point, -2)

    def test_rename_folds_counts(self):
        """Test renaming moves every vote onto the new label"""
        tsdf_map = LabelTsdfMap()
        other = (0.105, 0.005, 0.995)
        tsdf_map.cast_votes(np.array([self.point, self.point]), 5)
        tsdf_map.cast_vote(self.point, 2)
        tsdf_map.cast_vote(other, 5)
        assert tsdf_map.labels() == [5]
        assert tsdf_map.rename_votes(5, 2) == 2
        assert tsdf_map.votes_at(self.point) == {2: 3}
        assert tsdf_map.votes_at(other) == {2: 1}
        assert tsdf_map.labels() == [2]
        assert tsdf_map.label_voxel_counts() == {2: 2}
        assert tsdf_map.superpoint_voxels(5).shape == (0, 3)
        assert tsdf_map.total_votes() == 4

    def test_rename_onto_itself(self):
        """Test renaming a label onto itself raises ValueError"""
        with pytest.raises(ValueError, match="onto itself"):
            LabelTsdfMap().rename_votes(4, 4)

    def test_superpoint_voxels(self):
        """Test voxel coordinates of a superpoint"""
        tsdf_map = LabelTsdfMap()
        tsdf_map.cast_votes(np.array([self.point, (-0.005, 0.005, 0.995)]), 8)
        assert tsdf_map.superpoint_voxels(8).tolist() == [[-1, 0, 99], [0, 0, 99]]

    def test_coarse_cells_follow_updates(self):
        """Test coarse occupancy is refreshed after new votes"""
        tsdf_map = LabelTsdfMap()
        tsdf_map.cast_vote(self.point, 1)
        assert tsdf_map.coarse_cells(1, factor=4).shape == (1, 3)
        tsdf_map.cast_vote((0.305, 0.005, 0.995), 1)
        assert tsdf_map.coarse_cells(1, factor=4).shape == (2, 3)

    @settings(max_examples=50, deadline=None)
    @given(
        votes=st.lists(
            st.tuples(st.integers(-20, 20), st.integers(-20, 20), st.integers(0, 4)), min_size=1, max_size=60
        ),
        rename=st.tuples(st.integers(0, 4), st.integers(0, 4)),
    )
    def test_votes_are_conserved(self, votes, rename):
        """Test every cast vote is counted once, before and after a rename"""
        tsdf_map = LabelTsdfMap()
        for x, y, label in votes:
            tsdf_map.cast_vote(((x + 0.5) * 0.01, (y + 0.5) * 0.01, 0.005), label)
        assert tsdf_map.total_votes() == len(votes)
        old, new = rename
        if old != new:
            tsdf_map.rename_votes(old, new)
            assert tsdf_map.total_votes() == len(votes)
            assert old not in tsdf_map.labels()


class TestRaycast:
    """Test raycast_instance"""

    def test_every_ray_hits_wall_label(self, wall_frame):
        """Test each wall pixel reports the superpoint under its surface point"""
        tsdf_map = LabelTsdfMap()
        tsdf_map.cast_votes(_surface_points(wall_frame), 7)
        assert tsdf_map.raycast_instance(wall_frame, 1) == {7: 40 * 30}

    def test_empty_map(self, wall_frame):
        """Test raycasting an empty map finds nothing"""
        assert LabelTsdfMap().raycast_instance(wall_frame, 1) == {}

    def test_absent_instance(self, wall_frame):
        """Test an id missing from the mask finds nothing"""
        tsdf_map = LabelTsdfMap()
        tsdf_map.cast_votes(_surface_points(wall_frame), 7)
        assert tsdf_map.raycast_instance(wall_frame, 9) == {}


class TestMesh:
    """Test labeled mesh extraction"""

    def test_wall_mesh(self, intrinsics):
        """Test the wall is meshed at z = 1 and carries the superpoint's labels"""
        frame = planar_frame(intrinsics, 1.0)
        tsdf_map = LabelTsdfMap()
        tsdf_map.integrate_depth(frame)
        tsdf_map.cast_votes(_surface_points(frame), 4)
        mesh = tsdf_map.extract_labeled_mesh(semantic={4: 1}, instance={4: 9})
        assert mesh.vertex_count > 0
        assert mesh.faces.shape[1] == 3
        assert np.allclose(mesh.vertices[:, 2], 1.0, atol=1e-3)
        labeled = mesh.superpoint_ids == 4
        assert labeled.mean() > 0.9
        assert np.all(mesh.semantic_ids[labeled] == 1)
        assert np.all(mesh.instance_ids[labeled] == 9)
        assert np.all(mesh.semantic_ids[~labeled] == 0)

    def test_block_seams_are_welded(self, intrinsics):
        """Test a wall spanning many small blocks has one vertex per position"""
        frame = planar_frame(intrinsics, 1.0)
        tsdf_map = LabelTsdfMap(block_size=4)
        tsdf_map.integrate_depth(frame)
        tsdf_map.cast_votes(_surface_points(frame), 4)
        mesh = tsdf_map.extract_labeled_mesh(semantic={4: 1})
        assert tsdf_map.block_count >= 4
        unique = np.unique(np.round(mesh.vertices, 6), axis=0)
        assert unique.shape[0] == mesh.vertex_count
        assert mesh.faces.min() >= 0
        assert mesh.faces.max() < mesh.vertex_count
        assert mesh.semantic_ids.shape == (mesh.vertex_count,)

    def test_memory_grows_with_blocks(self, intrinsics):
        """Test the memory estimate grows after integration"""
        tsdf_map = LabelTsdfMap()
        before = tsdf_map.memory_bytes()
        tsdf_map.integrate_depth(planar_frame(intrinsics, 1.0))
        assert tsdf_map.block_count > 0
        assert tsdf_map.memory_bytes() > before
