"""
RGB-D panoptic dataset layout

    intrinsics.txt        fx fy cx cy width height
    poses.txt             frame_index tx ty tz qx qy qz qw (camera-to-world)
    classes.txt           category_id name thing|stuff
    depth/%06d.png        uint16 millimeters, 0 = invalid
    panoptic/%06d.png     uint16 frame-local instance ids, 0 = unlabeled
    panoptic/%06d.txt     instance_id category_id thing|stuff score ('-' for none)
    color/%06d.png        optional 8-bit RGB
    gt.ply                optional labeled ground-truth points
"""

import logging
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

import imageio.v3 as iio
import numpy as np

from .core import CameraIntrinsics, ClassSet, Frame, PanopticInstance, PanopticKind, Pose, validate_frame
from .errors import DatasetError
from .evaluation import GroundTruth
from .export import read_labeled_ply, write_labeled_ply
from .tsdf import LabeledMesh

logger = logging.getLogger(__name__)

INTRINSICS_FILE = "intrinsics.txt"
POSES_FILE = "poses.txt"
CLASSES_FILE = "classes.txt"
GT_FILE = "gt.ply"
DEPTH_SCALE = 1000.0

_KINDS = {"thing": PanopticKind.THING, "stuff": PanopticKind.STUFF}


def _lines(path: Path) -> Iterator[tuple[int, list[str]]]:
    if not path.exists():
        raise DatasetError(f"Missing {path.name}", path)
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if line.strip() and not line.lstrip().startswith("#"):
            yield number, line.split()


def read_intrinsics(path: Path) -> CameraIntrinsics:
    rows = list(_lines(path))
    try:
        fx, fy, cx, cy, width, height = rows[0][1]
        return CameraIntrinsics(float(fx), float(fy), float(cx), float(cy), int(width), int(height))
    except (IndexError, ValueError) as e:
        raise DatasetError(f"Malformed intrinsics: {e}", path) from e


def read_poses(path: Path) -> dict[int, Pose]:
    poses: dict[int, Pose] = {}
    for number, parts in _lines(path):
        try:
            index = int(parts[0])
            values = [float(p) for p in parts[1:8]]
            if len(values) != 7 or len(parts) != 8:
                raise ValueError(f"expected 8 fields, got {len(parts)}")
            poses[index] = Pose.from_quaternion(values[:3], values[3:])
        except ValueError as e:
            raise DatasetError(f"Malformed pose on line {number}: {e}", path) from e
    return poses


def read_classes(path: Path) -> ClassSet:
    entries = []
    for number, parts in _lines(path):
        try:
            category, name, kind = int(parts[0]), parts[1], _KINDS[parts[2].lower()]
        except (IndexError, KeyError, ValueError) as e:
            raise DatasetError(f"Malformed class on line {number}: {e}", path) from e
        if category != 0:
            entries.append((category, name, kind))
    try:
        return ClassSet.from_entries(entries)
    except ValueError as e:
        raise DatasetError(str(e), path) from e


def read_sidecar(path: Path) -> tuple[PanopticInstance, ...]:
    instances = []
    for number, parts in _lines(path):
        try:
            instance_id, category, kind = int(parts[0]), int(parts[1]), _KINDS[parts[2].lower()]
            score = None if len(parts) < 4 or parts[3] == "-" else float(parts[3])
            instances.append(PanopticInstance(instance_id, category, kind, score))
        except (IndexError, KeyError, ValueError) as e:
            raise DatasetError(f"Malformed instance on line {number}: {e}", path) from e
    return tuple(instances)


def _read_image(path: Path) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"Missing image {path.name}", path)
    try:
        return np.asarray(iio.imread(path))
    except Exception as e:
        raise DatasetError(f"Unreadable image: {e}", path) from e


@dataclass(frozen=True)
class Dataset:
    """Metadata of one dataset directory; frames are read lazily"""
    root: Path
    intrinsics: CameraIntrinsics
    poses: dict[int, Pose]
    classes: ClassSet

    @classmethod
    def open(cls, root: Path) -> "Dataset":
        """
        Raises:
            DatasetError: If the directory or a metadata file is missing or malformed
        """
        root = Path(root)
        if not root.is_dir():
            raise DatasetError("Dataset directory not found", root)
        return cls(
            root=root,
            intrinsics=read_intrinsics(root / INTRINSICS_FILE),
            poses=read_poses(root / POSES_FILE),
            classes=read_classes(root / CLASSES_FILE),
        )

    def __len__(self) -> int:
        return len(self.poses)

    def frame_paths(self, index: int) -> dict[str, Path]:
        name = f"{index:06d}"
        return {
            "depth": self.root / "depth" / f"{name}.png",
            "mask": self.root / "panoptic" / f"{name}.png",
            "sidecar": self.root / "panoptic" / f"{name}.txt",
            "color": self.root / "color" / f"{name}.png",
        }

    def read_frame(self, index: int, validate: bool = True) -> Frame:
        """
        Raises:
            DatasetError: On a missing file, a malformed sidecar or a failed validation
        """
        paths = self.frame_paths(index)
        depth = _read_image(paths["depth"]).astype(np.float64) / DEPTH_SCALE
        mask = _read_image(paths["mask"]).astype(np.int64)
        instances = read_sidecar(paths["sidecar"])
        color = _read_image(paths["color"])[..., :3] if paths["color"].exists() else None
        frame = Frame(depth, mask, instances, self.poses[index], self.intrinsics, index, color)
        if validate:
            violations = validate_frame(frame, self.classes)
            if violations:
                detail = "; ".join(str(v) for v in violations)
                raise DatasetError(f"Frame {index} failed validation: {detail}", paths["mask"], violations)
        return frame

    def frames(self, validate: bool = True) -> Iterator[Frame]:
        for index in sorted(self.poses):
            yield self.read_frame(index, validate)

    def ground_truth(self) -> GroundTruth:
        return read_ground_truth(self.root / GT_FILE)


def ingest_dataset(root: Path, validate: bool = True) -> Iterator[Frame]:
    """
    Lazy frame stream in index order.

    Metadata is read immediately, so a missing poses or intrinsics file fails here
    rather than on first iteration.
    """
    return Dataset.open(root).frames(validate)


def _format_score(instance: PanopticInstance) -> str:
    return "-" if instance.score is None else repr(float(instance.score))


def write_dataset(
    root: Path,
    frames: Iterable[Frame],
    classes: ClassSet,
    ground_truth: GroundTruth | None = None,
) -> int:
    """
    Write frames in the dataset layout.

    Depth is stored in millimeters; values beyond the uint16 range become invalid.

    Returns:
        Number of frames written
    """
    root = Path(root)
    for sub in ("depth", "panoptic", "color"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    # Background is implicit and has no kind
    class_lines = ["# category_id name kind"]
    for category, kind in sorted(classes.kinds.items()):
        class_lines.append(f"{category} {classes.name_of(category)} {kind.value}")
    (root / CLASSES_FILE).write_text("\n".join(class_lines) + "\n")

    pose_lines = ["# frame_index tx ty tz qx qy qz qw"]
    intrinsics: CameraIntrinsics | None = None
    count = 0
    for frame in frames:
        intrinsics = intrinsics or frame.intrinsics
        paths = {
            "depth": root / "depth" / f"{frame.frame_index:06d}.png",
            "mask": root / "panoptic" / f"{frame.frame_index:06d}.png",
            "sidecar": root / "panoptic" / f"{frame.frame_index:06d}.txt",
            "color": root / "color" / f"{frame.frame_index:06d}.png",
        }
        millimeters = np.round(frame.depth * DEPTH_SCALE)
        millimeters = np.where(np.isfinite(millimeters) & (millimeters <= 65535), millimeters, 0)
        iio.imwrite(paths["depth"], millimeters.astype(np.uint16))
        iio.imwrite(paths["mask"], frame.panoptic_mask.astype(np.uint16))
        sidecar = [f"{i.instance_id} {i.category} {i.kind.value} {_format_score(i)}" for i in frame.instances]
        paths["sidecar"].write_text("\n".join(sidecar) + ("\n" if sidecar else ""))
        if frame.color is not None:
            iio.imwrite(paths["color"], frame.color)
        t = frame.pose.translation
        q = frame.pose.as_quaternion()
        pose_lines.append(" ".join([str(frame.frame_index), *(repr(float(v)) for v in (*t, *q))]))
        count += 1

    (root / POSES_FILE).write_text("\n".join(pose_lines) + "\n")
    if intrinsics is not None:
        i = intrinsics
        (root / INTRINSICS_FILE).write_text(f"{i.fx!r} {i.fy!r} {i.cx!r} {i.cy!r} {i.width} {i.height}\n")
    if ground_truth is not None:
        write_ground_truth(root / GT_FILE, ground_truth)
    logger.debug(f"Wrote {count} frames to {root}")
    return count


def write_ground_truth(path: Path, gt: GroundTruth) -> Path:
    """Ground-truth points as a face-less labeled PLY"""
    n = len(gt)
    mesh = LabeledMesh(
        vertices=np.asarray(gt.points, dtype=np.float64).reshape(n, 3),
        faces=np.zeros((0, 3), dtype=np.int64),
        superpoint_ids=np.full(n, -1, dtype=np.int64),
        semantic_ids=np.asarray(gt.semantic_ids, dtype=np.int64),
        instance_ids=np.asarray(gt.instance_ids, dtype=np.int64),
    )
    return write_labeled_ply(path, mesh, faces=False)


def read_ground_truth(path: Path) -> GroundTruth:
    """
    Raises:
        DatasetError: If the file is missing or not a labeled PLY
    """
    mesh = read_labeled_ply(path)
    return GroundTruth(mesh.vertices, mesh.semantic_ids, mesh.instance_ids)
