"""
Pytest configuration and shared fixtures
"""

import os

import numpy as np
import pytest

from superpoint_mapper.core import CameraIntrinsics, ClassSet, Frame, PanopticInstance, PanopticKind, Pose
from superpoint_mapper.graph import SuperpointGraph
from superpoint_mapper.settings import PipelineConfig
from superpoint_mapper.synth import BOX_CLASS, SYNTH_CLASSES, WALL_CLASS, SceneSpec, three_objects

WALL = WALL_CLASS
BOX = BOX_CLASS


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    """Synthetic camera used by the oracle scenes"""
    return CameraIntrinsics(fx=150.0, fy=150.0, cx=79.5, cy=59.5, width=160, height=120)


@pytest.fixture
def small_intrinsics() -> CameraIntrinsics:
    """40x30 camera for fast per-frame tests"""
    return CameraIntrinsics(fx=40.0, fy=40.0, cx=19.5, cy=14.5, width=40, height=30)


@pytest.fixture
def identity_pose() -> Pose:
    return Pose.identity()


@pytest.fixture
def classes() -> ClassSet:
    """Classes of the synthetic scenes: wall / floor stuff, box / sphere / cylinder things"""
    return SYNTH_CLASSES


def planar_frame(
    intrinsics: CameraIntrinsics,
    distance: float = 1.0,
    pose: Pose | None = None,
    frame_index: int = 0,
) -> Frame:
    """Fronto-parallel wall at `distance`, labeled as one wall instance"""
    depth = np.full(intrinsics.shape, distance)
    mask = np.ones(intrinsics.shape, dtype=np.int64)
    return Frame(
        depth=depth,
        panoptic_mask=mask,
        instances=(PanopticInstance(1, WALL, PanopticKind.STUFF),),
        pose=pose or Pose.identity(),
        intrinsics=intrinsics,
        frame_index=frame_index,
    )


@pytest.fixture
def wall_frame(small_intrinsics) -> Frame:
    """Wall one meter in front of an identity camera"""
    return planar_frame(small_intrinsics, 1.0)


@pytest.fixture
def split_wall_frame(small_intrinsics) -> Frame:
    """Wall whose left half is labeled as a box thing and right half as wall stuff"""
    depth = np.full(small_intrinsics.shape, 1.0)
    mask = np.ones(small_intrinsics.shape, dtype=np.int64)
    mask[:, : small_intrinsics.width // 2] = 2
    return Frame(
        depth=depth,
        panoptic_mask=mask,
        instances=(
            PanopticInstance(1, WALL, PanopticKind.STUFF),
            PanopticInstance(2, BOX, PanopticKind.THING, 0.8),
        ),
        pose=Pose.identity(),
        intrinsics=small_intrinsics,
    )


@pytest.fixture
def chain_graph() -> SuperpointGraph:
    """Four superpoints of class 3 in a chain 1-2-3-4 with a weak bridge 2-3"""
    graph = SuperpointGraph()
    for label in (1, 2, 3, 4):
        graph.add_node_confidence(label, BOX, 1.0)
    graph.add_edge_confidence(1, 2, BOX, 5.0)
    graph.add_edge_confidence(3, 4, BOX, 1.0)
    graph.add_edge_confidence(2, 3, BOX, 0.1)
    return graph


@pytest.fixture
def oracle_scene() -> SceneSpec:
    """Three-object scene with a short trajectory"""
    return three_objects(frames=12)


@pytest.fixture
def pipeline_config() -> PipelineConfig:
    """Defaults with a single worker"""
    return PipelineConfig(workers=1, queue_capacity=2)


@pytest.fixture
def isolated_config(tmp_path, monkeypatch):
    """Point the config search paths at an empty temp directory"""
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path / "xdg"))
    monkeypatch.chdir(tmp_path)
    for key in list(os.environ):
        if key.startswith("SPMAP_"):
            monkeypatch.delenv(key)
    return tmp_path
