"""
Convex depth segmentation

Depth images are split into convex surface segments by region growing over the
4-neighbourhood. Two adjacent pixels are compatible when their depth step is small and
the surface between them is convex (or only mildly concave).
"""

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .core import CameraIntrinsics, FloatArray, IntArray, backproject_pixels, pixel_grid

logger = logging.getLogger(__name__)

_DEFAULT_NORMAL = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True, slots=True)
class SegmentationParams:
    """
    Region-growing thresholds.

    Attributes:
        max_concavity_deg: Largest normal angle across a concave crease that still joins
        max_step_m: Largest depth difference between adjacent pixels of one segment
        min_segment_px: Segments with fewer pixels are discarded
    """
    max_concavity_deg: float = 10.0
    max_step_m: float = 0.05
    min_segment_px: int = 100

    def __post_init__(self) -> None:
        if not 0.0 <= self.max_concavity_deg <= 180.0:
            raise ValueError(f"Invalid segmentation params: max_concavity_deg={self.max_concavity_deg}")
        if self.max_step_m <= 0:
            raise ValueError(f"Invalid segmentation params: max_step_m={self.max_step_m}")
        if self.min_segment_px < 1:
            raise ValueError(f"Invalid segmentation params: min_segment_px={self.min_segment_px}")


@dataclass(frozen=True, slots=True, eq=False)
class GeometricSegment:
    """
    One convex, 4-connected image segment.

    Attributes:
        segment_id: Frame-local id, starting at 1
        pixels: (N, 2) array of (u, v) pixel coordinates
        mean_normal: Unit mean normal in the camera frame
    """
    segment_id: int
    pixels: IntArray
    mean_normal: FloatArray

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])


def estimate_normals(depth: NDArray[np.floating], intrinsics: CameraIntrinsics) -> FloatArray:
    """
    Per-pixel normals from central-difference tangents of the backprojected depth.

    Normals are oriented toward the camera. Pixels on the image border, pixels with
    invalid depth and pixels with any invalid 4-neighbour get the zero vector.

    Args:
        depth: HxW depth in meters, 0 = invalid
        intrinsics: Camera intrinsics

    Returns:
        HxWx3 normal image in the camera frame
    """
    depth = np.asarray(depth, dtype=np.float64)
    height, width = depth.shape
    us, vs = pixel_grid(intrinsics)
    points = backproject_pixels(us, vs, depth, intrinsics)
    valid = np.isfinite(depth) & (depth > 0)
    normals = np.zeros((height, width, 3))
    if height < 3 or width < 3:
        return normals

    defined = np.zeros_like(valid)
    defined[1:-1, 1:-1] = (
        valid[1:-1, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2] & valid[2:, 1:-1] & valid[:-2, 1:-1]
    )
    du = points[1:-1, 2:] - points[1:-1, :-2]
    dv = points[2:, 1:-1] - points[:-2, 1:-1]
    cross = np.cross(du, dv)
    norm = np.linalg.norm(cross, axis=-1)
    inner = defined[1:-1, 1:-1] & (norm > 1e-15)
    defined[1:-1, 1:-1] = inner

    unit = np.zeros_like(cross)
    unit[inner] = cross[inner] / norm[inner, None]
    facing = np.einsum("ijk,ijk->ij", unit, points[1:-1, 1:-1])
    unit[facing > 0] *= -1.0
    normals[1:-1, 1:-1] = unit
    return normals


def _pair_compatibility(
    points: FloatArray,
    normals: FloatArray,
    depth: FloatArray,
    has_normal: NDArray[np.bool_],
    a: tuple[slice, slice],
    b: tuple[slice, slice],
    params: SegmentationParams,
) -> NDArray[np.bool_]:
    """Join test for every pixel pair (a[i], b[i]) of two shifted views"""
    step_ok = np.abs(depth[a] - depth[b]) <= params.max_step_m
    both = has_normal[a] & has_normal[b]
    offset = points[b] - points[a]
    turn = normals[b] - normals[a]
    convex = np.einsum("ijk,ijk->ij", offset, turn) > 0.0
    cos_angle = np.clip(np.einsum("ijk,ijk->ij", normals[a], normals[b]), -1.0, 1.0)
    mild = cos_angle >= math.cos(math.radians(params.max_concavity_deg))
    return step_ok & (~both | convex | mild)


def segment_depth(
    depth: NDArray[np.floating],
    normals: FloatArray,
    intrinsics: CameraIntrinsics,
    params: SegmentationParams | None = None,
) -> list[GeometricSegment]:
    """
    Region-grow convex segments over the valid depth pixels.

    Seeds are taken in raster order among pixels with a defined normal. A pixel joins the
    growing segment only when it is compatible with every 4-neighbour already in it.
    Pixels without a normal may join but do not propagate the segment further. Segments
    below min_segment_px are dropped and their pixels stay unassigned.

    Args:
        depth: HxW depth in meters
        normals: Output of estimate_normals
        intrinsics: Camera intrinsics
        params: Thresholds, defaults when None

    Returns:
        Segments with ids 1..K in seed order
    """
    params = params or SegmentationParams()
    depth = np.asarray(depth, dtype=np.float64)
    height, width = depth.shape
    valid = np.isfinite(depth) & (depth > 0)
    has_normal = valid & (np.linalg.norm(normals, axis=-1) > 0.5)
    us, vs = pixel_grid(intrinsics)
    points = backproject_pixels(us, vs, np.where(valid, depth, 0.0), intrinsics)

    # right[v, u]: (v, u) ~ (v, u+1); down[v, u]: (v, u) ~ (v+1, u)
    right = _pair_compatibility(
        points, normals, depth, has_normal, (slice(None), slice(0, -1)), (slice(None), slice(1, None)), params
    ).tolist()
    down = _pair_compatibility(
        points, normals, depth, has_normal, (slice(0, -1), slice(None)), (slice(1, None), slice(None)), params
    ).tolist()

    valid_l = valid.tolist()
    normal_l = has_normal.tolist()
    labels = [[0] * width for _ in range(height)]

    def compatible(v0: int, u0: int, v1: int, u1: int) -> bool:
        if v0 == v1:
            return bool(right[v0][min(u0, u1)])
        return bool(down[min(v0, v1)][u0])

    def neighbours(v: int, u: int) -> list[tuple[int, int]]:
        result = []
        if v > 0:
            result.append((v - 1, u))
        if u > 0:
            result.append((v, u - 1))
        if u + 1 < width:
            result.append((v, u + 1))
        if v + 1 < height:
            result.append((v + 1, u))
        return result

    def joins(v: int, u: int, seg: int) -> bool:
        return all(compatible(v, u, nv, nu) for nv, nu in neighbours(v, u) if labels[nv][nu] == seg)

    regions: list[list[tuple[int, int]]] = []
    next_id = 1
    seeds = np.argwhere(has_normal).tolist()
    for sv, su in seeds:
        if labels[sv][su]:
            continue
        seg = next_id
        next_id += 1
        labels[sv][su] = seg
        members = [(sv, su)]
        queue = deque([(sv, su)])
        while queue:
            v, u = queue.popleft()
            for nv, nu in neighbours(v, u):
                if labels[nv][nu] or not valid_l[nv][nu] or not compatible(v, u, nv, nu):
                    continue
                if not joins(nv, nu, seg):
                    continue
                labels[nv][nu] = seg
                members.append((nv, nu))
                if normal_l[nv][nu]:
                    queue.append((nv, nu))
        regions.append(members)

    # Corners and other normal-less pixels not touching a grown pixel
    changed = True
    while changed:
        changed = False
        for v, u in np.argwhere(valid & ~has_normal).tolist():
            if labels[v][u]:
                continue
            for nv, nu in neighbours(v, u):
                seg = labels[nv][nu]
                if seg and compatible(v, u, nv, nu) and joins(v, u, seg):
                    labels[v][u] = seg
                    regions[seg - 1].append((v, u))
                    changed = True
                    break

    segments: list[GeometricSegment] = []
    for members in regions:
        if len(members) < params.min_segment_px:
            continue
        rows = np.fromiter((m[0] for m in members), dtype=np.int64, count=len(members))
        cols = np.fromiter((m[1] for m in members), dtype=np.int64, count=len(members))
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        seg_normals = normals[rows, cols]
        seg_normals = seg_normals[np.linalg.norm(seg_normals, axis=-1) > 0.5]
        mean = seg_normals.sum(axis=0) if len(seg_normals) else np.zeros(3)
        length = np.linalg.norm(mean)
        mean_normal = mean / length if length > 1e-12 else _DEFAULT_NORMAL.copy()
        segments.append(GeometricSegment(len(segments) + 1, np.column_stack([cols, rows]), mean_normal))

    logger.debug(f"Segmented {int(valid.sum())} valid pixels into {len(segments)} segments ({len(regions)} grown)")
    return segments


def segment_label_image(segments: list[GeometricSegment], shape: tuple[int, int]) -> IntArray:
    """HxW image of segment ids, 0 for unassigned pixels"""
    image = np.zeros(shape, dtype=np.int64)
    for segment in segments:
        image[segment.pixels[:, 1], segment.pixels[:, 0]] = segment.segment_id
    return image
