"""
Panoptic-geometric surface fusion

A surface is the intersection of one panoptic instance mask with one convex geometric
segment of the same frame. Surfaces are the unit of 3D integration.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    ClassId,
    ClassSet,
    FloatArray,
    Frame,
    InstanceId,
    IntArray,
    PanopticInstance,
    PanopticKind,
    backproject_pixels,
)
from .errors import UnknownCategoryError
from .segmentation import GeometricSegment, segment_label_image

logger = logging.getLogger(__name__)

STUFF_CONFIDENCE = 0.5


@dataclass(frozen=True, slots=True, eq=False)
class Surface:
    """
    Frame-wise surface s_i.

    Attributes:
        surface_id: Frame-local id, starting at 1
        segment_id: Geometric segment the surface was cut from
        instance_id: Panoptic instance o_i (canonical id for stuff)
        category: Semantic class C(o_i)
        kind: Thing or stuff
        panoptic_confidence: P_o
        pixels: (N, 2) array of (u, v)
        point_cloud: (N, 3) world points, one per pixel
    """
    surface_id: int
    segment_id: int
    instance_id: InstanceId
    category: ClassId
    kind: PanopticKind
    panoptic_confidence: float
    pixels: IntArray
    point_cloud: FloatArray

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])


def panoptic_confidence(instance: PanopticInstance, classes: ClassSet | None = None) -> float:
    """
    Panoptic confidence P_o of one instance.

    Things pass their detection score through; stuff regions get a flat 0.5.

    Args:
        instance: Frame-local panoptic instance
        classes: Configured classes; when given they decide thing vs stuff

    Raises:
        UnknownCategoryError: If the category is neither a thing nor a stuff class
    """
    kind = instance.kind
    if classes is not None:
        configured = classes.kind_of(instance.category)
        if configured is None:
            raise UnknownCategoryError(f"Category {instance.category} is neither thing nor stuff")
        kind = configured

    match kind:
        case PanopticKind.THING:
            if instance.score is None:
                raise UnknownCategoryError(f"Thing instance {instance.instance_id} carries no score")
            return float(instance.score)
        case PanopticKind.STUFF:
            return STUFF_CONFIDENCE
        case _:
            raise UnknownCategoryError(f"Category {instance.category} has unsupported kind {kind}")


def _kind_of(instance: PanopticInstance, classes: ClassSet | None) -> PanopticKind:
    if classes is not None:
        return classes.kind_of(instance.category) or instance.kind
    return instance.kind


def canonical_instances(frame: Frame, classes: ClassSet | None = None) -> tuple[IntArray, dict[InstanceId, PanopticInstance]]:
    """
    Collapse stuff instances of one category into a single frame-wise instance.

    Returns:
        (remapped panoptic mask, canonical id -> instance)
    """
    mask = np.array(frame.panoptic_mask, dtype=np.int64, copy=True)
    canonical: dict[InstanceId, PanopticInstance] = {}
    stuff_owner: dict[ClassId, InstanceId] = {}
    for inst in sorted(frame.instances, key=lambda i: i.instance_id):
        if _kind_of(inst, classes) is PanopticKind.STUFF:
            owner = stuff_owner.setdefault(inst.category, inst.instance_id)
            if owner != inst.instance_id:
                mask[frame.panoptic_mask == inst.instance_id] = owner
                continue
        canonical[inst.instance_id] = inst
    return mask, canonical


def fuse_masks(
    frame: Frame,
    segments: list[GeometricSegment],
    min_surface_px: int = 20,
    classes: ClassSet | None = None,
) -> list[Surface]:
    """
    Intersect panoptic masks with geometric segments.

    Args:
        frame: Source frame
        segments: Geometric segments of the same frame
        min_surface_px: Smallest intersection (valid-depth pixels) that becomes a surface
        classes: Configured classes, forwarded to panoptic_confidence

    Returns:
        Surfaces ordered by (instance id, segment id)

    Raises:
        UnknownCategoryError: If an instance category is not configured
    """
    if not segments:
        return []
    mask, instances = canonical_instances(frame, classes)
    seg_image = segment_label_image(segments, frame.shape)
    valid = frame.valid_depth_mask()

    keep = valid & (seg_image > 0) & (mask > 0)
    rows, cols = np.nonzero(keep)
    if rows.size == 0:
        return []
    inst_ids = mask[rows, cols]
    seg_ids = seg_image[rows, cols]
    pair_keys = inst_ids * (int(seg_ids.max()) + 1) + seg_ids
    unique_keys, inverse, counts = np.unique(pair_keys, return_inverse=True, return_counts=True)
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)])

    surfaces: list[Surface] = []
    dropped = 0
    for k in range(unique_keys.size):
        members = order[starts[k]:starts[k + 1]]
        instance_id = int(inst_ids[members[0]])
        instance = instances.get(instance_id)
        if instance is None:
            dropped += 1
            continue
        if members.size < min_surface_px:
            dropped += 1
            continue
        u, v = cols[members], rows[members]
        cloud = backproject_pixels(u, v, frame.depth[v, u], frame.intrinsics, frame.pose)
        surfaces.append(Surface(
            surface_id=len(surfaces) + 1,
            segment_id=int(seg_ids[members[0]]),
            instance_id=instance_id,
            category=instance.category,
            kind=_kind_of(instance, classes),
            panoptic_confidence=panoptic_confidence(instance, classes),
            pixels=np.column_stack([u, v]),
            point_cloud=cloud,
        ))
    logger.debug(f"Frame {frame.frame_index}: {len(surfaces)} surfaces, {dropped} intersections dropped")
    return surfaces
