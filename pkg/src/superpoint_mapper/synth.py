"""
Synthetic RGB-D oracle

Primitive scenes (boxes, spheres, vertical cylinders inside an axis-aligned room) are
rendered by exact ray intersection, so depth, panoptic masks and ground-truth surface
points are all analytic. A seeded noise model perturbs poses, depth and masks.
"""

import dataclasses
import logging
import math
import tomllib
from abc import ABC, abstractmethod
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .core import (
    CameraIntrinsics,
    ClassId,
    ClassSet,
    FloatArray,
    Frame,
    InstanceId,
    PanopticInstance,
    PanopticKind,
    Pose,
    pixel_grid,
)
from .errors import ConfigError
from .evaluation import GroundTruth

logger = logging.getLogger(__name__)

_EPS = 1e-9

WALL_CLASS: ClassId = 1
FLOOR_CLASS: ClassId = 2
BOX_CLASS: ClassId = 3
SPHERE_CLASS: ClassId = 4
CYLINDER_CLASS: ClassId = 5

SYNTH_CLASSES = ClassSet.from_entries([
    (WALL_CLASS, "wall", PanopticKind.STUFF),
    (FLOOR_CLASS, "floor", PanopticKind.STUFF),
    (BOX_CLASS, "box", PanopticKind.THING),
    (SPHERE_CLASS, "sphere", PanopticKind.THING),
    (CYLINDER_CLASS, "cylinder", PanopticKind.THING),
])

_PALETTE = np.array([
    [0, 0, 0], [200, 200, 190], [140, 110, 80], [220, 60, 50], [60, 120, 220],
    [70, 180, 90], [230, 200, 60], [150, 80, 170], [90, 200, 200],
], dtype=np.uint8)


def _safe(d: FloatArray) -> FloatArray:
    return np.where(np.abs(d) < 1e-15, 1e-15, d)


def _slab(origin: FloatArray, dirs: FloatArray, lo: FloatArray, hi: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Entry and exit ray parameters of an axis-aligned box"""
    d = _safe(dirs)
    t1 = (lo - origin) / d
    t2 = (hi - origin) / d
    return np.minimum(t1, t2).max(axis=-1), np.maximum(t1, t2).min(axis=-1)


def _yaw_matrix(yaw: float) -> FloatArray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _face_grid(extent_a: float, extent_b: float, resolution: float) -> tuple[FloatArray, FloatArray]:
    """Cell-center samples of an extent_a x extent_b rectangle centered at 0"""
    na = max(1, round(extent_a / resolution))
    nb = max(1, round(extent_b / resolution))
    a = -extent_a / 2 + (np.arange(na) + 0.5) * extent_a / na
    b = -extent_b / 2 + (np.arange(nb) + 0.5) * extent_b / nb
    ga, gb = np.meshgrid(a, b, indexing="ij")
    return ga.ravel(), gb.ravel()


class Primitive(ABC):
    """Closed solid with a semantic class and a scene-unique instance id"""
    category: ClassId
    instance_id: InstanceId

    @abstractmethod
    def intersect(self, origin: FloatArray, dirs: FloatArray) -> FloatArray:
        """Nearest positive ray parameter per direction, inf on a miss"""
        ...

    @abstractmethod
    def contains(self, points: FloatArray) -> np.ndarray:
        """Strict interior test"""
        ...

    @abstractmethod
    def surface_points(self, resolution: float) -> FloatArray:
        """Near-uniform surface samples about `resolution` apart"""
        ...

    @abstractmethod
    def bounds(self) -> tuple[FloatArray, FloatArray]:
        ...


@dataclass(frozen=True)
class Box(Primitive):
    """Box with a yaw rotation about the vertical axis through its center"""
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    category: ClassId
    instance_id: InstanceId
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if min(self.size) <= 0:
            raise ValueError(f"Invalid box {self.instance_id}: sizes must be positive")

    def _local(self, points: FloatArray) -> FloatArray:
        return (np.asarray(points) - np.asarray(self.center)) @ _yaw_matrix(self.yaw)

    def intersect(self, origin: FloatArray, dirs: FloatArray) -> FloatArray:
        rot = _yaw_matrix(self.yaw)
        o = (origin - np.asarray(self.center)) @ rot
        d = dirs @ rot
        half = np.asarray(self.size) / 2
        near, far = _slab(o, d, -half, half)
        return np.where((near <= far) & (near > _EPS), near, np.inf)

    def contains(self, points: FloatArray) -> np.ndarray:
        local = self._local(points)
        return np.all(np.abs(local) < np.asarray(self.size) / 2 - _EPS, axis=-1)

    def surface_points(self, resolution: float) -> FloatArray:
        sx, sy, sz = self.size
        faces = []
        for axis, (ea, eb) in enumerate(((sy, sz), (sx, sz), (sx, sy))):
            a, b = _face_grid(ea, eb, resolution)
            for sign in (-1.0, 1.0):
                face = np.zeros((a.size, 3))
                others = [k for k in range(3) if k != axis]
                face[:, others[0]] = a
                face[:, others[1]] = b
                face[:, axis] = sign * self.size[axis] / 2
                faces.append(face)
        local = np.concatenate(faces)
        return local @ _yaw_matrix(self.yaw).T + np.asarray(self.center)

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]) * np.asarray(self.size) / 2
        world = corners @ _yaw_matrix(self.yaw).T + np.asarray(self.center)
        return world.min(axis=0), world.max(axis=0)


@dataclass(frozen=True)
class Sphere(Primitive):
    center: tuple[float, float, float]
    radius: float
    category: ClassId
    instance_id: InstanceId

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError(f"Invalid sphere {self.instance_id}: radius must be positive")

    def intersect(self, origin: FloatArray, dirs: FloatArray) -> FloatArray:
        oc = origin - np.asarray(self.center)
        a = np.einsum("...k,...k->...", dirs, dirs)
        b = 2.0 * dirs @ oc
        c = float(oc @ oc) - self.radius**2
        disc = b * b - 4 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        t = (-b - root) / (2 * a)
        return np.where((disc >= 0) & (t > _EPS), t, np.inf)

    def contains(self, points: FloatArray) -> np.ndarray:
        return np.linalg.norm(np.asarray(points) - np.asarray(self.center), axis=-1) < self.radius - _EPS

    def surface_points(self, resolution: float) -> FloatArray:
        n = max(1, round(4 * math.pi * self.radius**2 / resolution**2))
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        r = np.sqrt(np.maximum(0.0, 1 - z * z))
        phi = math.pi * (3 - math.sqrt(5)) * np.arange(n)
        unit = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
        return np.asarray(self.center) + self.radius * unit

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Cylinder(Primitive):
    """Vertical cylinder; center is the midpoint of its axis"""
    center: tuple[float, float, float]
    radius: float
    height: float
    category: ClassId
    instance_id: InstanceId

    def __post_init__(self) -> None:
        if self.radius <= 0 or self.height <= 0:
            raise ValueError(f"Invalid cylinder {self.instance_id}: radius and height must be positive")

    def intersect(self, origin: FloatArray, dirs: FloatArray) -> FloatArray:
        o = origin - np.asarray(self.center)
        dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        half = self.height / 2
        a = dx * dx + dy * dy
        b = 2 * (o[0] * dx + o[1] * dy)
        c = o[0] ** 2 + o[1] ** 2 - self.radius**2
        disc = b * b - 4 * a * c
        safe_a = np.where(a > 1e-15, a, 1.0)
        t_side = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * safe_a)
        z_side = o[2] + t_side * dz
        side_ok = (a > 1e-15) & (disc >= 0) & (t_side > _EPS) & (np.abs(z_side) <= half)
        best = np.where(side_ok, t_side, np.inf)
        for cap in (-half, half):
            t_cap = (cap - o[2]) / _safe(dz)
            x = o[0] + t_cap * dx
            y = o[1] + t_cap * dy
            cap_ok = (t_cap > _EPS) & (x * x + y * y <= self.radius**2)
            best = np.where(cap_ok & (t_cap < best), t_cap, best)
        return best

    def contains(self, points: FloatArray) -> np.ndarray:
        p = np.asarray(points) - np.asarray(self.center)
        radial = np.hypot(p[..., 0], p[..., 1])
        return (radial < self.radius - _EPS) & (np.abs(p[..., 2]) < self.height / 2 - _EPS)

    def surface_points(self, resolution: float) -> FloatArray:
        n_theta = max(3, round(2 * math.pi * self.radius / resolution))
        n_z = max(1, round(self.height / resolution))
        theta = 2 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
        z = -self.height / 2 + (np.arange(n_z) + 0.5) * self.height / n_z
        gt, gz = np.meshgrid(theta, z, indexing="ij")
        side = np.stack([self.radius * np.cos(gt.ravel()), self.radius * np.sin(gt.ravel()), gz.ravel()], axis=-1)
        a, b = _face_grid(2 * self.radius, 2 * self.radius, resolution)
        disk = (a * a + b * b) <= self.radius**2
        caps = [np.stack([a[disk], b[disk], np.full(int(disk.sum()), s * self.height / 2)], axis=-1) for s in (-1, 1)]
        return np.concatenate([side, *caps]) + np.asarray(self.center)

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        c = np.asarray(self.center)
        extent = np.array([self.radius, self.radius, self.height / 2])
        return c - extent, c + extent


@dataclass(frozen=True)
class RoomSpec:
    """
    Axis-aligned room shell seen from inside. Walls and ceiling are one wall instance.

    Attributes:
        lo, hi: Opposite room corners; lo[2] is the floor height
    """
    lo: tuple[float, float, float] = (-0.8, -0.8, 0.0)
    hi: tuple[float, float, float] = (0.8, 0.8, 1.0)
    wall_category: ClassId = WALL_CLASS
    floor_category: ClassId = FLOOR_CLASS
    wall_instance: InstanceId = 100
    floor_instance: InstanceId = 101

    def __post_init__(self) -> None:
        if any(h <= lo for lo, h in zip(self.lo, self.hi, strict=True)):
            raise ValueError("Invalid room: hi must exceed lo on every axis")

    def intersect(self, origin: FloatArray, dirs: FloatArray) -> tuple[FloatArray, np.ndarray]:
        """Exit parameter and instance id per ray"""
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        d = _safe(dirs)
        t_lo = (lo - origin) / d
        t_hi = (hi - origin) / d
        exits = np.maximum(t_lo, t_hi)
        far = exits.min(axis=-1)
        near = np.minimum(t_lo, t_hi).max(axis=-1)
        hit = (near <= far) & (far > _EPS)
        axis = exits.argmin(axis=-1)
        floor = (axis == 2) & (dirs[..., 2] < 0)
        ids = np.where(floor, self.floor_instance, self.wall_instance)
        return np.where(hit, far, np.inf), np.where(hit, ids, 0)

    def surface_points(self, resolution: float) -> tuple[FloatArray, np.ndarray]:
        """Samples of floor, ceiling and walls with their instance ids"""
        lo, hi = np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)
        size = hi - lo
        mid = (hi + lo) / 2
        chunks: list[FloatArray] = []
        ids: list[np.ndarray] = []
        for axis in range(3):
            others = [k for k in range(3) if k != axis]
            a, b = _face_grid(size[others[0]], size[others[1]], resolution)
            for side, value in (("lo", lo[axis]), ("hi", hi[axis])):
                face = np.zeros((a.size, 3))
                face[:, others[0]] = a + mid[others[0]]
                face[:, others[1]] = b + mid[others[1]]
                face[:, axis] = value
                chunks.append(face)
                is_floor = axis == 2 and side == "lo"
                ids.append(np.full(a.size, self.floor_instance if is_floor else self.wall_instance))
        return np.concatenate(chunks), np.concatenate(ids)


@dataclass(frozen=True)
class SceneSpec:
    """
    Renderable scene.

    Raises:
        ValueError: On duplicate instance ids or objects reaching outside the room
    """
    objects: tuple[Primitive, ...]
    intrinsics: CameraIntrinsics
    trajectory: tuple[Pose, ...] = ()
    room: RoomSpec | None = None
    classes: ClassSet = SYNTH_CLASSES
    name: str = "scene"

    def __post_init__(self) -> None:
        ids = [o.instance_id for o in self.objects]
        if self.room is not None:
            ids += [self.room.wall_instance, self.room.floor_instance]
        if len(ids) != len(set(ids)):
            raise ValueError(f"Invalid scene {self.name}: instance ids are not unique")
        if any(i <= 0 or i > 65535 for i in ids):
            raise ValueError(f"Invalid scene {self.name}: instance ids must fit in 1..65535")
        if self.room is not None:
            lo, hi = np.asarray(self.room.lo), np.asarray(self.room.hi)
            for obj in self.objects:
                o_lo, o_hi = obj.bounds()
                if np.any(o_lo < lo - 1e-6) or np.any(o_hi > hi + 1e-6):
                    raise ValueError(f"Invalid scene {self.name}: object {obj.instance_id} leaves the room")

    def instance_category(self, instance_id: InstanceId) -> ClassId:
        for obj in self.objects:
            if obj.instance_id == instance_id:
                return obj.category
        if self.room is not None:
            if instance_id == self.room.wall_instance:
                return self.room.wall_category
            if instance_id == self.room.floor_instance:
                return self.room.floor_category
        raise KeyError(instance_id)


@dataclass(frozen=True, slots=True)
class NoiseSpec:
    """
    Input degradations.

    Attributes:
        rotation_drift_deg: Per-frame std of the pose random walk rotation
        translation_drift_m: Per-frame std of the pose random walk translation
        depth_noise_std: Additive Gaussian depth noise in meters
        mask_erode_dilate_px: Boundary erosion / dilation radius per instance
        mask_misclass_rate: Probability of relabeling a thing instance
        score_range: Interval of synthetic thing scores
    """
    rotation_drift_deg: float = 0.0
    translation_drift_m: float = 0.0
    depth_noise_std: float = 0.0
    mask_erode_dilate_px: int = 0
    mask_misclass_rate: float = 0.0
    score_range: tuple[float, float] = (0.6, 0.95)

    def __post_init__(self) -> None:
        values = (self.rotation_drift_deg, self.translation_drift_m, self.depth_noise_std, self.mask_erode_dilate_px)
        if any(v < 0 for v in values):
            raise ValueError("Invalid noise settings: values must be non-negative")
        if not 0.0 <= self.mask_misclass_rate < 1.0:
            raise ValueError(f"Invalid noise settings: misclass rate {self.mask_misclass_rate} outside [0, 1)")
        lo, hi = self.score_range
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"Invalid noise settings: score range {self.score_range} outside (0, 1)")

    @property
    def is_zero(self) -> bool:
        return (
            self.rotation_drift_deg == 0 and self.translation_drift_m == 0 and self.depth_noise_std == 0
            and self.mask_erode_dilate_px == 0 and self.mask_misclass_rate == 0
        )

    @classmethod
    def pose_drift(cls, level: float) -> "NoiseSpec":
        """Pose-only noise: `level` degrees and `level` centimeters per frame"""
        return cls(rotation_drift_deg=level, translation_drift_m=level / 100.0)


def orbit_trajectory(
    frames: int,
    radius: float,
    height: float,
    target: Sequence[float] = (0.0, 0.0, 0.0),
    start_angle: float = 0.0,
    sweep: float = 2 * math.pi,
) -> tuple[Pose, ...]:
    """Cameras on a horizontal circle around `target`, all looking at it"""
    poses = []
    for k in range(frames):
        angle = start_angle + sweep * k / max(frames, 1)
        eye = (target[0] + radius * math.cos(angle), target[1] + radius * math.sin(angle), height)
        poses.append(Pose.look_at(eye, target))
    return tuple(poses)


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=150.0, fy=150.0, cx=79.5, cy=59.5, width=160, height=120)


def three_objects(frames: int = 60) -> SceneSpec:
    """A box, a sphere and a cylinder on the floor of a small room"""
    objects: tuple[Primitive, ...] = (
        Box(center=(-0.15, -0.1, 0.1), size=(0.2, 0.16, 0.2), category=BOX_CLASS, instance_id=1),
        Sphere(center=(0.18, -0.05, 0.1), radius=0.1, category=SPHERE_CLASS, instance_id=2),
        Cylinder(center=(0.0, 0.2, 0.12), radius=0.07, height=0.24, category=CYLINDER_CLASS, instance_id=3),
    )
    return SceneSpec(
        objects=objects,
        intrinsics=default_intrinsics(),
        trajectory=orbit_trajectory(frames, radius=0.55, height=0.55, target=(0.0, 0.0, 0.08)),
        room=RoomSpec(),
        name="three_objects",
    )


def cluttered(frames: int = 60) -> SceneSpec:
    """Six objects, two per thing class, closer together"""
    objects: tuple[Primitive, ...] = (
        Box(center=(-0.22, -0.15, 0.08), size=(0.14, 0.14, 0.16), category=BOX_CLASS, instance_id=1),
        Box(center=(0.05, 0.25, 0.06), size=(0.18, 0.1, 0.12), category=BOX_CLASS, instance_id=2, yaw=0.4),
        Sphere(center=(0.22, -0.12, 0.08), radius=0.08, category=SPHERE_CLASS, instance_id=3),
        Sphere(center=(-0.25, 0.18, 0.07), radius=0.07, category=SPHERE_CLASS, instance_id=4),
        Cylinder(center=(0.0, -0.05, 0.1), radius=0.06, height=0.2, category=CYLINDER_CLASS, instance_id=5),
        Cylinder(center=(0.25, 0.15, 0.09), radius=0.05, height=0.18, category=CYLINDER_CLASS, instance_id=6),
    )
    return SceneSpec(
        objects=objects,
        intrinsics=default_intrinsics(),
        trajectory=orbit_trajectory(frames, radius=0.6, height=0.6, target=(0.0, 0.0, 0.06)),
        room=RoomSpec(),
        name="cluttered",
    )


PRESETS = {"three_objects": three_objects, "cluttered": cluttered}


def _primitive_from_table(entry: dict[str, Any]) -> Primitive:
    kind = entry.get("kind")
    common = {"category": int(entry["category"]), "instance_id": int(entry["instance_id"])}
    match kind:
        case "box":
            return Box(center=tuple(entry["center"]), size=tuple(entry["size"]), yaw=float(entry.get("yaw", 0.0)), **common)
        case "sphere":
            return Sphere(center=tuple(entry["center"]), radius=float(entry["radius"]), **common)
        case "cylinder":
            return Cylinder(
                center=tuple(entry["center"]), radius=float(entry["radius"]), height=float(entry["height"]), **common
            )
        case _:
            raise ConfigError(f"Unknown primitive kind '{kind}'")


def load_scene(path: Path) -> SceneSpec:
    """
    Read a TOML scene file.

    Layout: optional `[room]` (lo, hi), `[camera]` (fx fy cx cy width height),
    `[trajectory]` (frames, radius, height, target) and `[[objects]]` tables with
    kind = box | sphere | cylinder.

    Raises:
        ConfigError: If the file is unreadable or a table is malformed
    """
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
        camera = data.get("camera", {})
        intrinsics = CameraIntrinsics(**camera) if camera else default_intrinsics()
        room = RoomSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in data["room"].items()}) \
            if "room" in data else None
        traj = data.get("trajectory", {})
        trajectory = orbit_trajectory(
            int(traj.get("frames", 60)),
            float(traj.get("radius", 0.55)),
            float(traj.get("height", 0.55)),
            tuple(traj.get("target", (0.0, 0.0, 0.08))),
        )
        objects = tuple(_primitive_from_table(entry) for entry in data.get("objects", []))
        return SceneSpec(objects, intrinsics, trajectory, room, name=path.stem)
    except (OSError, tomllib.TOMLDecodeError, KeyError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Invalid scene file {path}: {e}") from e


def _instance_scores(scene: SceneSpec, frame_index: int, seed: int, score_range: tuple[float, float]) -> dict[InstanceId, float]:
    rng = np.random.default_rng([seed, frame_index])
    things = sorted(o.instance_id for o in scene.objects if scene.classes.kind_of(o.category) is PanopticKind.THING)
    scores = rng.uniform(score_range[0], score_range[1], size=len(things))
    return {i: float(s) for i, s in zip(things, scores, strict=True)}


def render_frame(
    scene: SceneSpec,
    pose: Pose,
    frame_index: int = 0,
    seed: int = 0,
    score_range: tuple[float, float] = (0.6, 0.95),
) -> Frame:
    """
    Ray-trace depth, panoptic mask and a flat-shaded color image.

    Depth is the camera z of the nearest hit, 0 where nothing is hit. The mask holds the
    hit primitive's instance id; the room contributes one wall and one floor instance.
    """
    intrinsics = scene.intrinsics
    us, vs = pixel_grid(intrinsics)
    dirs_cam = np.stack([(us - intrinsics.cx) / intrinsics.fx, (vs - intrinsics.cy) / intrinsics.fy,
                         np.ones(us.shape)], axis=-1)
    dirs = dirs_cam @ pose.rotation.T
    origin = pose.translation

    best = np.full(us.shape, np.inf)
    ids = np.zeros(us.shape, dtype=np.int64)
    if scene.room is not None:
        best, ids = scene.room.intersect(origin, dirs)
        ids = ids.astype(np.int64)
    for obj in scene.objects:
        t = obj.intersect(origin, dirs)
        closer = t < best
        best = np.where(closer, t, best)
        ids = np.where(closer, obj.instance_id, ids)

    depth = np.where(np.isfinite(best), best, 0.0)
    scores = _instance_scores(scene, frame_index, seed, score_range)
    instances = []
    categories = np.zeros_like(ids)
    for instance_id in np.unique(ids[ids > 0]).tolist():
        category = scene.instance_category(instance_id)
        categories[ids == instance_id] = category
        kind = scene.classes.kind_of(category) or PanopticKind.THING
        score = scores.get(instance_id) if kind is PanopticKind.THING else None
        instances.append(PanopticInstance(instance_id, category, kind, score))
    color = _PALETTE[np.clip(categories, 0, len(_PALETTE) - 1)]
    return Frame(depth, ids, tuple(instances), pose, intrinsics, frame_index, color)


def render_sequence(scene: SceneSpec, seed: int = 0, score_range: tuple[float, float] = (0.6, 0.95)) -> list[Frame]:
    return [render_frame(scene, pose, k, seed, score_range) for k, pose in enumerate(scene.trajectory)]


def _morph_masks(frame: Frame, radius: int, rng: np.random.Generator) -> tuple[np.ndarray, tuple[PanopticInstance, ...]]:
    mask = np.array(frame.panoptic_mask, copy=True)
    valid = frame.valid_depth_mask()
    for instance_id in sorted(i.instance_id for i in frame.instances):
        region = mask == instance_id
        grow = bool(rng.integers(2))
        if not region.any():
            continue
        if grow:
            grown = ndimage.binary_dilation(region, iterations=radius) & valid
            mask[grown & ~region] = instance_id
        else:
            shrunk = ndimage.binary_erosion(region, iterations=radius)
            mask[region & ~shrunk] = 0
    present = set(np.unique(mask).tolist())
    return mask, tuple(i for i in frame.instances if i.instance_id in present)


def apply_noise(
    frames: Sequence[Frame],
    noise: NoiseSpec,
    seed: int = 0,
    thing_classes: Iterable[ClassId] | None = None,
) -> list[Frame]:
    """
    Perturb a sequence.

    Poses follow one seeded random walk over the whole sequence; depth and mask noise
    are seeded per frame index, so each channel is independent of the others.

    Args:
        frames: Clean sequence
        noise: Degradations to apply
        seed: Noise seed
        thing_classes: Classes a misclassified thing may take; defaults to those in the sequence

    Returns:
        New frames; the input frames themselves when every noise setting is zero
    """
    if noise.is_zero:
        return list(frames)
    things = sorted(set(thing_classes) if thing_classes is not None else {
        i.category for f in frames for i in f.instances if i.kind is PanopticKind.THING
    })
    walk_rng = np.random.default_rng([seed, 0])
    drift = Pose.identity()
    noisy: list[Frame] = []
    for frame in frames:
        pose = frame.pose
        if noise.rotation_drift_deg > 0 or noise.translation_drift_m > 0:
            rotvec = walk_rng.normal(0.0, math.radians(noise.rotation_drift_deg), 3)
            step = Pose(Rotation.from_rotvec(rotvec).as_matrix(), walk_rng.normal(0.0, noise.translation_drift_m, 3))
            drift = step @ drift
            pose = drift @ frame.pose

        depth = frame.depth
        if noise.depth_noise_std > 0:
            rng = np.random.default_rng([seed, 1, frame.frame_index])
            valid = frame.valid_depth_mask()
            jitter = rng.normal(0.0, noise.depth_noise_std, depth.shape)
            depth = np.where(valid, np.maximum(depth + jitter, 0.0), 0.0)

        mask, instances = frame.panoptic_mask, frame.instances
        if noise.mask_erode_dilate_px > 0:
            mask, instances = _morph_masks(frame, noise.mask_erode_dilate_px, np.random.default_rng([seed, 2, frame.frame_index]))
        if noise.mask_misclass_rate > 0:
            rng = np.random.default_rng([seed, 3, frame.frame_index])
            relabeled = []
            for inst in instances:
                draw, pick = rng.random(), rng.random()
                alternatives = [c for c in things if c != inst.category]
                if inst.kind is PanopticKind.THING and alternatives and draw < noise.mask_misclass_rate:
                    inst = dataclasses.replace(inst, category=alternatives[int(pick * len(alternatives))])
                relabeled.append(inst)
            instances = tuple(relabeled)

        noisy.append(dataclasses.replace(frame, pose=pose, depth=depth, panoptic_mask=mask, instances=instances))
    logger.debug(f"Applied noise to {len(noisy)} frames (seed {seed}): {noise}")
    return noisy


def ground_truth_points(scene: SceneSpec, resolution: float = 0.01, include_room: bool = True) -> GroundTruth:
    """
    Labeled surface samples of every primitive.

    Object samples on or below the floor, or strictly inside another object, are dropped.

    Raises:
        ValueError: If resolution is not positive
    """
    if resolution <= 0:
        raise ValueError(f"Resolution must be positive, got {resolution}")
    chunks: list[FloatArray] = []
    instance_ids: list[np.ndarray] = []
    for obj in scene.objects:
        points = obj.surface_points(resolution)
        keep = np.ones(points.shape[0], dtype=bool)
        if scene.room is not None:
            keep &= points[:, 2] > scene.room.lo[2] + _EPS
        for other in scene.objects:
            if other is not obj:
                keep &= ~other.contains(points)
        chunks.append(points[keep])
        instance_ids.append(np.full(int(keep.sum()), obj.instance_id))
    if include_room and scene.room is not None:
        points, ids = scene.room.surface_points(resolution)
        chunks.append(points)
        instance_ids.append(ids)
    if not chunks:
        empty = np.zeros(0, dtype=np.int64)
        return GroundTruth(np.zeros((0, 3)), empty, empty)
    all_ids = np.concatenate(instance_ids).astype(np.int64)
    semantic = np.array([scene.instance_category(int(i)) for i in np.unique(all_ids)], dtype=np.int64)
    lookup = dict(zip(np.unique(all_ids).tolist(), semantic.tolist(), strict=True))
    semantic_ids = np.array([lookup[i] for i in all_ids.tolist()], dtype=np.int64)
    return GroundTruth(np.concatenate(chunks), semantic_ids, all_ids)
