"""
Writers and readers for labeled meshes and the text outputs of a mapping run
"""

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import trimesh

from .core import ClassId, InstanceId, SuperpointLabel
from .errors import DatasetError
from .tsdf import LabeledMesh

logger = logging.getLogger(__name__)

LABEL_DTYPES = {"semantic_id": np.uint16, "instance_id": np.uint32, "superpoint_id": np.int32}


def write_labeled_ply(path: Path, mesh: LabeledMesh, faces: bool = True) -> Path:
    """
    Write a binary PLY with per-vertex semantic, instance and superpoint ids.

    Args:
        path: Output file
        mesh: Labeled mesh
        faces: Write the triangles; False gives the labeled point cloud

    Returns:
        The written path
    """
    geometry = trimesh.Trimesh(
        vertices=mesh.vertices,
        faces=mesh.faces if faces else None,
        process=False,
    )
    geometry.vertex_attributes["semantic_id"] = mesh.semantic_ids.astype(LABEL_DTYPES["semantic_id"])
    geometry.vertex_attributes["instance_id"] = mesh.instance_ids.astype(LABEL_DTYPES["instance_id"])
    geometry.vertex_attributes["superpoint_id"] = mesh.superpoint_ids.astype(LABEL_DTYPES["superpoint_id"])

    path.parent.mkdir(parents=True, exist_ok=True)
    geometry.export(str(path), file_type="ply", encoding="binary", include_attributes=True)
    logger.debug(f"Wrote {mesh.vertex_count} vertices to {path}")
    return path


def read_labeled_ply(path: Path) -> LabeledMesh:
    """
    Read a PLY written by write_labeled_ply.

    Raises:
        DatasetError: If the file is missing, unreadable or lacks the label properties
    """
    if not path.exists():
        raise DatasetError("Missing PLY file", path)
    try:
        loaded = trimesh.load(str(path), file_type="ply", process=False)
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise DatasetError(f"Not a PLY file: {e}", path) from e

    raw = getattr(loaded, "metadata", {}).get("_ply_raw", {})
    if "vertex" not in raw:
        raise DatasetError("PLY has no vertex element", path)
    data = raw["vertex"]["data"]
    names = set(data.dtype.names or ()) if isinstance(data, np.ndarray) else set(data)
    for required in ("x", "y", "z", "semantic_id", "instance_id"):
        if required not in names:
            raise DatasetError(f"PLY vertex element lacks '{required}'", path)

    vertices = np.column_stack([data["x"], data["y"], data["z"]]).astype(np.float64).reshape(-1, 3)
    superpoints = (
        np.asarray(data["superpoint_id"], dtype=np.int64) if "superpoint_id" in names
        else np.full(vertices.shape[0], -1, dtype=np.int64)
    )
    faces = np.asarray(getattr(loaded, "faces", np.zeros((0, 3))), dtype=np.int64).reshape(-1, 3)
    return LabeledMesh(
        vertices=vertices,
        faces=faces,
        superpoint_ids=superpoints,
        semantic_ids=np.asarray(data["semantic_id"], dtype=np.int64),
        instance_ids=np.asarray(data["instance_id"], dtype=np.int64),
    )


@dataclass(frozen=True, slots=True)
class InstanceRecord:
    """One line of instances.txt"""
    instance_id: InstanceId
    category: ClassId
    confidence: float
    members: tuple[SuperpointLabel, ...]


def write_superpoints(
    path: Path,
    semantic: Mapping[SuperpointLabel, ClassId],
    instance: Mapping[SuperpointLabel, InstanceId],
) -> Path:
    """superpoints.txt: `label semantic_id instance_id`, one superpoint per line"""
    lines = ["# label semantic_id instance_id"]
    lines += [f"{label} {semantic[label]} {instance.get(label, 0)}" for label in sorted(semantic)]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_instances(path: Path, records: Iterable[InstanceRecord]) -> Path:
    """instances.txt: `instance_id semantic_id confidence member...`"""
    lines = ["# instance_id semantic_id confidence members"]
    for r in sorted(records, key=lambda r: r.instance_id):
        members = " ".join(str(m) for m in r.members)
        lines.append(f"{r.instance_id} {r.category} {r.confidence:.6f} {members}".rstrip())
    path.write_text("\n".join(lines) + "\n")
    return path


def read_instances(path: Path) -> list[InstanceRecord]:
    """
    Parse instances.txt.

    Raises:
        DatasetError: If the file is missing or a line is malformed
    """
    if not path.exists():
        raise DatasetError("Missing instances file", path)
    records: list[InstanceRecord] = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        try:
            records.append(InstanceRecord(
                instance_id=int(parts[0]),
                category=int(parts[1]),
                confidence=float(parts[2]),
                members=tuple(int(p) for p in parts[3:]),
            ))
        except (IndexError, ValueError) as e:
            raise DatasetError(f"Malformed line {number}: {e}", path) from e
    return records


def write_timing(path: Path, rows: Iterable[tuple[str, int, float, float]], peak_map_bytes: int) -> Path:
    """timing.txt: `stage calls total_s mean_ms` plus the map memory estimate"""
    lines = ["# stage calls total_s mean_ms"]
    for stage, calls, total, mean_ms in rows:
        lines.append(f"{stage} {calls} {total:.6f} {mean_ms:.3f}")
    lines.append(f"# peak_map_bytes {peak_map_bytes}")
    path.write_text("\n".join(lines) + "\n")
    return path
