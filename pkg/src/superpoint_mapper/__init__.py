"""
Superpoint Mapper Package
Incremental semantic-instance mapping on a Label-TSDF with semantically consistent
superpoints, graph-regularized semantics and refined instances

Version 1.0.0 - Python 3.12+
"""

__version__ = "1.0.0"

from .core import CameraIntrinsics, ClassSet, Frame, PanopticInstance, PanopticKind, Pose
from .errors import MappingError
from .pipeline import MapSession, QueryResult, evaluate, query_semantic_instance, run_mapping
from .settings import PipelineConfig, load_config

__all__ = [
    "CameraIntrinsics",
    "ClassSet",
    "Frame",
    "PanopticInstance",
    "PanopticKind",
    "Pose",
    "MappingError",
    "MapSession",
    "QueryResult",
    "PipelineConfig",
    "load_config",
    "run_mapping",
    "query_semantic_instance",
    "evaluate",
]
