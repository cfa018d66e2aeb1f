"""
Domain types and camera geometry shared by every stage of the mapper
"""

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation

from .errors import InvalidDepthError

type ClassId = int
type InstanceId = int
type SuperpointLabel = int
type Pixel = tuple[int, int]
type FloatArray = NDArray[np.float64]
type IntArray = NDArray[np.int64]

# Background class C_0, merge-compatible with every other class
BACKGROUND_CLASS: ClassId = 0

_ORTHONORMAL_TOL = 1e-6


def _frozen_array(values: object, dtype: type) -> NDArray:
    """Copy into a read-only array"""
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class PanopticKind(Enum):
    """Panoptic category kind"""
    THING = "thing"
    STUFF = "stuff"


@dataclass(frozen=True, slots=True)
class ClassSet:
    """
    Configured semantic classes, partitioned into things and stuff.

    Class 0 is always the background class C_0 and is neither thing nor stuff.

    Attributes:
        names: Class id to human-readable name
        kinds: Class id to panoptic kind (background excluded)
    """
    names: Mapping[ClassId, str]
    kinds: Mapping[ClassId, PanopticKind]

    def __post_init__(self) -> None:
        if BACKGROUND_CLASS in self.kinds:
            raise ValueError("Invalid class set: category 0 is reserved for background")
        missing = set(self.kinds) - set(self.names)
        if missing:
            raise ValueError(f"Invalid class set: unnamed categories {sorted(missing)}")

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[ClassId, str, PanopticKind]]) -> "ClassSet":
        names: dict[ClassId, str] = {BACKGROUND_CLASS: "background"}
        kinds: dict[ClassId, PanopticKind] = {}
        for class_id, name, kind in entries:
            names[class_id] = name
            if class_id != BACKGROUND_CLASS:
                kinds[class_id] = kind
        return cls(names=names, kinds=kinds)

    @property
    def things(self) -> frozenset[ClassId]:
        return frozenset(c for c, k in self.kinds.items() if k is PanopticKind.THING)

    @property
    def stuff(self) -> frozenset[ClassId]:
        return frozenset(c for c, k in self.kinds.items() if k is PanopticKind.STUFF)

    def kind_of(self, class_id: ClassId) -> PanopticKind | None:
        return self.kinds.get(class_id)

    def name_of(self, class_id: ClassId) -> str:
        return self.names.get(class_id, f"class_{class_id}")

    def __contains__(self, class_id: object) -> bool:
        return class_id in self.names


@dataclass(frozen=True, slots=True)
class CameraIntrinsics:
    """
    Pinhole intrinsics. Pixel centers sit at integer coordinates.

    Attributes:
        fx, fy: Focal lengths in pixels
        cx, cy: Principal point in pixels
        width, height: Image size in pixels

    Raises:
        ValueError: If focal lengths are not positive or the principal point
            lies outside the image
    """
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"Invalid intrinsics: focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"Invalid intrinsics: principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    @property
    def shape(self) -> tuple[int, int]:
        """Image shape as (height, width)"""
        return self.height, self.width

    @property
    def matrix(self) -> FloatArray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, slots=True, eq=False)
class Pose:
    """
    Rigid camera-to-world transform.

    Attributes:
        rotation: 3x3 orthonormal rotation matrix
        translation: Camera center in world coordinates (meters)

    Raises:
        ValueError: If the rotation is not orthonormal with determinant 1
    """
    rotation: FloatArray
    translation: FloatArray

    def __post_init__(self) -> None:
        rotation = _frozen_array(self.rotation, np.float64)
        translation = _frozen_array(self.translation, np.float64).reshape(3)
        if rotation.shape != (3, 3):
            raise ValueError(f"Invalid pose: rotation must be 3x3, got {rotation.shape}")
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=_ORTHONORMAL_TOL):
            raise ValueError("Invalid pose: rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > _ORTHONORMAL_TOL:
            raise ValueError("Invalid pose: rotation determinant is not 1")
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, translation: Iterable[float], quaternion_xyzw: Iterable[float]) -> "Pose":
        """Build a pose from a translation and a w-last quaternion"""
        rotation = Rotation.from_quat(np.asarray(list(quaternion_xyzw), dtype=np.float64)).as_matrix()
        return cls(rotation, np.asarray(list(translation), dtype=np.float64))

    @classmethod
    def look_at(cls, eye: Iterable[float], target: Iterable[float], up: Iterable[float] = (0.0, 0.0, 1.0)) -> "Pose":
        """
        Camera at `eye` looking at `target` (OpenCV convention: z forward, y down).

        Raises:
            ValueError: If eye and target coincide or the view direction is parallel to `up`
        """
        eye_v = np.asarray(list(eye), dtype=np.float64)
        forward = np.asarray(list(target), dtype=np.float64) - eye_v
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise ValueError("Invalid pose: eye and target coincide")
        forward /= norm
        right = np.cross(forward, np.asarray(list(up), dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            raise ValueError("Invalid pose: view direction parallel to up vector")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        return cls(np.column_stack([right, down, forward]), eye_v)

    def as_quaternion(self) -> FloatArray:
        """Rotation as a w-last quaternion"""
        return np.asarray(Rotation.from_matrix(self.rotation).as_quat(), dtype=np.float64)

    @property
    def matrix(self) -> FloatArray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """Return self ∘ other (apply `other` first)"""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rotation_t = self.rotation.T
        return Pose(rotation_t, -rotation_t @ self.translation)

    def transform(self, points: FloatArray) -> FloatArray:
        """Apply the transform to an (N, 3) or (3,) array"""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True, slots=True)
class PanopticInstance:
    """
    One frame-local panoptic instance.

    Attributes:
        instance_id: Frame-local id o_i as written in the panoptic mask
        category: Semantic class C(o_i)
        kind: Thing or stuff
        score: Detection score in (0, 1), required for things

    Raises:
        ValueError: If a thing carries no score or a score outside (0, 1)
    """
    instance_id: InstanceId
    category: ClassId
    kind: PanopticKind
    score: float | None = None

    def __post_init__(self) -> None:
        if self.instance_id <= 0:
            raise ValueError(f"Invalid panoptic instance: id must be positive, got {self.instance_id}")
        if self.kind is PanopticKind.THING:
            if self.score is None or not (0.0 < self.score < 1.0):
                raise ValueError(f"Invalid panoptic instance {self.instance_id}: thing score must be in (0, 1)")
        elif self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"Invalid panoptic instance {self.instance_id}: score outside [0, 1]")


@dataclass(frozen=True, slots=True, eq=False)
class Frame:
    """
    One registered RGB-D observation with its panoptic annotation.

    Attributes:
        depth: HxW depth in meters, 0 marks invalid pixels
        panoptic_mask: HxW frame-local instance ids, 0 marks unlabeled pixels
        instances: Panoptic instances referenced by the mask
        pose: Camera-to-world pose
        intrinsics: Pinhole intrinsics
        frame_index: Ordinal in the sequence
        color: Optional HxWx3 RGB image, passed through untouched
    """
    depth: FloatArray
    panoptic_mask: IntArray
    instances: tuple[PanopticInstance, ...]
    pose: Pose
    intrinsics: CameraIntrinsics
    frame_index: int = 0
    color: NDArray[np.uint8] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "depth", _frozen_array(self.depth, np.float64))
        object.__setattr__(self, "panoptic_mask", _frozen_array(self.panoptic_mask, np.int64))
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.color is not None:
            object.__setattr__(self, "color", _frozen_array(self.color, np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.depth.shape[0]), int(self.depth.shape[1])

    def instance(self, instance_id: InstanceId) -> PanopticInstance | None:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        return None

    def valid_depth_mask(self) -> NDArray[np.bool_]:
        return np.isfinite(self.depth) & (self.depth > 0)


class ViolationKind(Enum):
    """Frame invariants that validate_frame checks"""
    SHAPE_MISMATCH = "shape_mismatch"
    NON_FINITE_DEPTH = "non_finite_depth"
    NEGATIVE_DEPTH = "negative_depth"
    UNKNOWN_INSTANCE_ID = "unknown_instance_id"
    DUPLICATE_INSTANCE_ID = "duplicate_instance_id"
    UNKNOWN_CATEGORY = "unknown_category"


@dataclass(frozen=True, slots=True)
class FrameViolation:
    """A failed frame invariant"""
    kind: ViolationKind
    detail: str
    pixel: Pixel | None = None
    instance_id: InstanceId | None = None

    def __str__(self) -> str:
        where = f" at pixel {self.pixel}" if self.pixel is not None else ""
        return f"{self.kind.value}{where}: {self.detail}"


def _first_pixel(mask: NDArray[np.bool_]) -> Pixel:
    rows, cols = np.nonzero(mask)
    return int(cols[0]), int(rows[0])


def validate_frame(frame: Frame, classes: ClassSet | None = None) -> list[FrameViolation]:
    """
    Check every Frame invariant.

    Args:
        frame: Frame to check
        classes: Optional class set; when given, instance categories are checked against it

    Returns:
        One violation per failed invariant (one per offending instance id for id checks);
        empty when the frame is well formed
    """
    violations: list[FrameViolation] = []
    depth_shape = frame.depth.shape
    expected = frame.intrinsics.shape
    shapes = {"depth": depth_shape, "panoptic_mask": frame.panoptic_mask.shape}
    if frame.color is not None:
        shapes["color"] = frame.color.shape[:2]
    for name, shape in shapes.items():
        if tuple(shape) != expected:
            violations.append(FrameViolation(
                ViolationKind.SHAPE_MISMATCH, f"{name} is {tuple(shape)}, intrinsics expect {expected}"
            ))

    non_finite = ~np.isfinite(frame.depth)
    if non_finite.any():
        violations.append(FrameViolation(
            ViolationKind.NON_FINITE_DEPTH, f"{int(non_finite.sum())} non-finite depth values",
            pixel=_first_pixel(non_finite),
        ))
    negative = np.isfinite(frame.depth) & (frame.depth < 0)
    if negative.any():
        violations.append(FrameViolation(
            ViolationKind.NEGATIVE_DEPTH, f"{int(negative.sum())} negative depth values",
            pixel=_first_pixel(negative),
        ))

    known: set[InstanceId] = set()
    for inst in frame.instances:
        if inst.instance_id in known:
            violations.append(FrameViolation(
                ViolationKind.DUPLICATE_INSTANCE_ID, f"instance {inst.instance_id} listed twice",
                instance_id=inst.instance_id,
            ))
        known.add(inst.instance_id)
        if classes is not None and classes.kind_of(inst.category) is None:
            violations.append(FrameViolation(
                ViolationKind.UNKNOWN_CATEGORY, f"instance {inst.instance_id} has category {inst.category}",
                instance_id=inst.instance_id,
            ))

    for mask_id in np.unique(frame.panoptic_mask).tolist():
        if mask_id != 0 and mask_id not in known:
            violations.append(FrameViolation(
                ViolationKind.UNKNOWN_INSTANCE_ID, f"mask id {mask_id} has no instance entry",
                instance_id=int(mask_id),
            ))
    return violations


def backproject(pixel: tuple[float, float], depth_m: float, intrinsics: CameraIntrinsics, pose: Pose) -> FloatArray:
    """
    Lift one pixel to a world point.

    Args:
        pixel: (u, v) image coordinates
        depth_m: Depth along the optical axis in meters
        intrinsics: Camera intrinsics
        pose: Camera-to-world pose

    Returns:
        World point (3,)

    Raises:
        InvalidDepthError: If depth_m is not a positive finite number
    """
    if not math.isfinite(depth_m) or depth_m <= 0:
        raise InvalidDepthError(f"Invalid depth {depth_m} at pixel {pixel}")
    u, v = pixel
    camera_point = np.array([
        (u - intrinsics.cx) * depth_m / intrinsics.fx,
        (v - intrinsics.cy) * depth_m / intrinsics.fy,
        depth_m,
    ])
    return pose.transform(camera_point)


def backproject_pixels(
    us: NDArray, vs: NDArray, depths: NDArray, intrinsics: CameraIntrinsics, pose: Pose | None = None
) -> FloatArray:
    """Vectorized backproject; returns camera-frame points when pose is None"""
    d = np.asarray(depths, dtype=np.float64)
    points = np.stack([
        (np.asarray(us, dtype=np.float64) - intrinsics.cx) * d / intrinsics.fx,
        (np.asarray(vs, dtype=np.float64) - intrinsics.cy) * d / intrinsics.fy,
        d,
    ], axis=-1)
    if pose is None:
        return points
    return pose.transform(points)


def project(points: FloatArray, intrinsics: CameraIntrinsics, pose: Pose) -> tuple[FloatArray, FloatArray, FloatArray]:
    """
    Inverse of backproject.

    Returns:
        (u, v, depth) arrays; depth ≤ 0 means the point is behind the camera
    """
    camera = pose.inverse().transform(np.atleast_2d(points))
    z = camera[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * camera[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * camera[:, 1] / z + intrinsics.cy
    return u, v, z


def pixel_grid(intrinsics: CameraIntrinsics) -> tuple[IntArray, IntArray]:
    """Column (u) and row (v) index images"""
    vs, us = np.indices(intrinsics.shape)
    return us, vs
