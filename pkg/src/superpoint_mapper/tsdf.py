"""
Label-TSDF map

Sparse block-hashed voxel grid. Every voxel carries a truncated signed distance, an
integration weight and a histogram of superpoint votes. A voxel's superpoint label is
the histogram argmax, ties going to the smallest label.
"""

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np
import trimesh
from numpy.typing import NDArray
from skimage import measure

from .core import (
    ClassId,
    FloatArray,
    Frame,
    InstanceId,
    IntArray,
    SuperpointLabel,
    backproject_pixels,
    pixel_grid,
    project,
)
from .errors import EmptyMapError

logger = logging.getLogger(__name__)

NO_LABEL = -1
# Decimal places of the position key used to weld block seams
WELD_DIGITS = 6

_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


def _encode(coords: IntArray) -> IntArray:
    """Pack integer (x, y, z) rows into one int64 key each"""
    c = np.asarray(coords, dtype=np.int64) + _KEY_OFFSET
    if c.size and (c.min() < 0 or c.max() > _KEY_MASK):
        raise ValueError("Voxel coordinates outside the addressable map extent")
    return (c[..., 0] << (2 * _KEY_BITS)) | (c[..., 1] << _KEY_BITS) | c[..., 2]


def _decode(keys: IntArray) -> IntArray:
    k = np.asarray(keys, dtype=np.int64)
    return np.stack([(k >> (2 * _KEY_BITS)) & _KEY_MASK, (k >> _KEY_BITS) & _KEY_MASK, k & _KEY_MASK], axis=-1) - _KEY_OFFSET


def voxel_label(votes: Mapping[SuperpointLabel, int]) -> SuperpointLabel | None:
    """Histogram argmax, smallest label on ties, None for an empty histogram"""
    if not votes:
        return None
    return min(votes, key=lambda label: (-votes[label], label))


@dataclass(frozen=True, slots=True, eq=False)
class LabeledMesh:
    """
    Triangle mesh with per-vertex labels.

    Attributes:
        vertices: (V, 3) world coordinates
        faces: (F, 3) vertex indices
        superpoint_ids: (V,) winning superpoint label per vertex, -1 if none nearby
        semantic_ids: (V,) semantic class per vertex, 0 when unlabeled
        instance_ids: (V,) instance id per vertex, 0 when unlabeled
    """
    vertices: FloatArray
    faces: IntArray
    superpoint_ids: IntArray
    semantic_ids: IntArray
    instance_ids: IntArray

    @property
    def vertex_count(self) -> int:
        return int(self.vertices.shape[0])


class LabelTsdfMap:
    """
    Block-hashed TSDF with superpoint vote histograms.

    Voxel i along an axis covers [i * voxel_size, (i + 1) * voxel_size); its center is
    (i + 0.5) * voxel_size. Blocks of block_size³ voxels are allocated on first touch.
    """

    def __init__(
        self,
        voxel_size: float = 0.01,
        truncation: float | None = None,
        block_size: int = 16,
        observation_weight: float = 1.0,
    ):
        truncation = 4.0 * voxel_size if truncation is None else truncation
        if voxel_size <= 0:
            raise ValueError(f"Invalid map: voxel_size must be positive, got {voxel_size}")
        if truncation < 2.0 * voxel_size:
            raise ValueError(f"Invalid map: truncation {truncation} below 2 * voxel_size")
        if block_size < 2:
            raise ValueError(f"Invalid map: block_size must be at least 2, got {block_size}")
        if observation_weight <= 0:
            raise ValueError(f"Invalid map: observation_weight must be positive, got {observation_weight}")

        self.voxel_size = float(voxel_size)
        self.truncation = float(truncation)
        self.block_size = int(block_size)
        self.observation_weight = float(observation_weight)
        self._block_volume = self.block_size**3

        self._blocks: dict[int, int] = {}
        self._block_coords: list[tuple[int, int, int]] = []
        capacity = 8 * self._block_volume
        self._tsdf = np.zeros(capacity, dtype=np.float64)
        self._weight = np.zeros(capacity, dtype=np.float64)
        self._best_label = np.full(capacity, NO_LABEL, dtype=np.int64)
        self._best_count = np.zeros(capacity, dtype=np.int64)

        self._votes: dict[int, dict[SuperpointLabel, int]] = {}
        self._label_voxels: dict[SuperpointLabel, set[int]] = {}
        self._label_stamp: dict[SuperpointLabel, int] = {}
        self._coarse_cache: dict[tuple[SuperpointLabel, int], tuple[int, FloatArray]] = {}
        self._stamp = 0
        self.frames_integrated = 0

    # Addressing

    @property
    def block_count(self) -> int:
        return len(self._block_coords)

    def is_empty(self) -> bool:
        return not self._block_coords or not bool(np.any(self._weight[: self._used] > 0))

    @property
    def _used(self) -> int:
        return len(self._block_coords) * self._block_volume

    def voxel_index(self, points: FloatArray) -> IntArray:
        """Integer voxel coordinates V(p) of world points"""
        return np.floor(np.atleast_2d(np.asarray(points, dtype=np.float64)) / self.voxel_size).astype(np.int64)

    def voxel_center(self, index: IntArray) -> FloatArray:
        return (np.asarray(index, dtype=np.float64) + 0.5) * self.voxel_size

    def _grow(self) -> None:
        capacity = self._tsdf.size * 2
        for name, fill in (("_tsdf", 0.0), ("_weight", 0.0), ("_best_label", NO_LABEL), ("_best_count", 0)):
            old = getattr(self, name)
            new = np.full(capacity, fill, dtype=old.dtype)
            new[: old.size] = old
            setattr(self, name, new)

    def _flat(self, voxels: IntArray, allocate: bool) -> IntArray:
        """Flat storage index per voxel, -1 for voxels in unallocated blocks"""
        voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        if voxels.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        b = self.block_size
        blocks = voxels // b
        local = voxels - blocks * b
        keys, inverse = np.unique(_encode(blocks), return_inverse=True)
        slots = np.empty(keys.size, dtype=np.int64)
        for i, key in enumerate(keys.tolist()):
            slot = self._blocks.get(key)
            if slot is None:
                if not allocate:
                    slots[i] = -1
                    continue
                slot = len(self._block_coords)
                if (slot + 1) * self._block_volume > self._tsdf.size:
                    self._grow()
                self._blocks[key] = slot
                self._block_coords.append(tuple(int(c) for c in _decode(np.array([key]))[0]))
            slots[i] = slot
        slot_per_voxel = slots[inverse.reshape(-1)]
        flat = slot_per_voxel * self._block_volume + (local[:, 0] * b + local[:, 1]) * b + local[:, 2]
        return np.where(slot_per_voxel >= 0, flat, -1)

    def _voxels_of(self, flat: IntArray) -> IntArray:
        """Inverse of _flat"""
        flat = np.asarray(flat, dtype=np.int64)
        b = self.block_size
        slot, local = np.divmod(flat, self._block_volume)
        origin = np.asarray(self._block_coords, dtype=np.int64).reshape(-1, 3)[slot] * b
        return origin + np.stack([local // (b * b), (local // b) % b, local % b], axis=-1)

    # Geometry

    def integrate_depth(self, frame: Frame) -> int:
        """
        Projective TSDF update for one frame.

        Voxels sampled along every valid pixel ray within ±truncation of the observed depth
        get sdf = D(u, v) - z, where (u, v) is the nearest pixel of the voxel center and z
        its camera depth. Values behind -truncation are ignored, values in front are clamped.

        Returns:
            Number of voxels updated
        """
        intrinsics = frame.intrinsics
        valid = frame.valid_depth_mask()
        us, vs = pixel_grid(intrinsics)
        d = frame.depth[valid]
        if d.size == 0:
            return 0

        step = 0.5 * self.voxel_size
        offsets = np.arange(-self.truncation, self.truncation + 0.5 * step, step)
        depths = d[:, None] + offsets[None, :]
        keep = depths > 0
        u = np.broadcast_to(us[valid][:, None], depths.shape)[keep]
        v = np.broadcast_to(vs[valid][:, None], depths.shape)[keep]
        samples = backproject_pixels(u, v, depths[keep], intrinsics, frame.pose)
        voxels = _decode(np.unique(_encode(self.voxel_index(samples))))

        centers = self.voxel_center(voxels)
        pu, pv, z = project(centers, intrinsics, frame.pose)
        col = np.rint(pu)
        row = np.rint(pv)
        inside = (z > 0) & (col >= 0) & (col < intrinsics.width) & (row >= 0) & (row < intrinsics.height)
        col_i = np.where(inside, col, 0).astype(np.int64)
        row_i = np.where(inside, row, 0).astype(np.int64)
        observed = frame.depth[row_i, col_i]
        inside &= np.isfinite(observed) & (observed > 0)
        sdf = observed - z
        inside &= sdf >= -self.truncation
        if not inside.any():
            return 0

        flat = self._flat(voxels[inside], allocate=True)
        sdf = np.minimum(sdf[inside], self.truncation)
        w_old = self._weight[flat]
        w_new = w_old + self.observation_weight
        self._tsdf[flat] = (self._tsdf[flat] * w_old + sdf * self.observation_weight) / w_new
        self._weight[flat] = w_new
        self.frames_integrated += 1
        return int(flat.size)

    def tsdf_at(self, points: FloatArray) -> tuple[FloatArray, FloatArray]:
        """
        (tsdf, weight) of the voxels containing each point.

        Unallocated or never observed voxels read as (nan, 0).
        """
        flat = self._flat(self.voxel_index(points), allocate=False)
        tsdf = np.full(flat.shape, np.nan)
        weight = np.zeros(flat.shape)
        hit = flat >= 0
        weight[hit] = self._weight[flat[hit]]
        seen = hit.copy()
        seen[hit] = weight[hit] > 0
        tsdf[seen] = self._tsdf[flat[seen]]
        return tsdf, weight

    # Votes

    def cast_votes(self, points: FloatArray, label: SuperpointLabel) -> None:
        """Add one vote for `label` per point in the voxel containing it"""
        if label < 0:
            raise ValueError(f"Superpoint labels are non-negative, got {label}")
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[0] == 0:
            return
        flat, counts = np.unique(self._flat(self.voxel_index(pts), allocate=True), return_counts=True)
        owned = self._label_voxels.setdefault(label, set())
        for f, c in zip(flat.tolist(), counts.tolist(), strict=True):
            votes = self._votes.setdefault(f, {})
            total = votes.get(label, 0) + c
            votes[label] = total
            owned.add(f)
            best = int(self._best_label[f])
            if total > self._best_count[f] or (total == self._best_count[f] and label < best) or best == NO_LABEL:
                if best != NO_LABEL and best != label:
                    self._touch(best)
                self._best_label[f] = label
                self._best_count[f] = total
        self._touch(label)

    def cast_vote(self, point: Iterable[float], label: SuperpointLabel) -> None:
        self.cast_votes(np.asarray(list(point), dtype=np.float64).reshape(1, 3), label)

    def votes_at(self, point: Iterable[float]) -> dict[SuperpointLabel, int]:
        """Copy of the vote histogram of the voxel containing `point`"""
        flat = int(self._flat(self.voxel_index(np.asarray(list(point), dtype=np.float64)), allocate=False)[0])
        return dict(self._votes.get(flat, {})) if flat >= 0 else {}

    def labels_at(self, points: FloatArray) -> IntArray:
        """Winning label of the voxel containing each point, NO_LABEL where none"""
        flat = self._flat(self.voxel_index(points), allocate=False)
        labels = np.full(flat.shape, NO_LABEL, dtype=np.int64)
        hit = flat >= 0
        labels[hit] = self._best_label[flat[hit]]
        return labels

    def rename_votes(self, old_label: SuperpointLabel, new_label: SuperpointLabel) -> int:
        """
        Fold every vote for old_label into new_label.

        Returns:
            Number of voxels that carried old_label

        Raises:
            ValueError: If both labels are equal
        """
        if old_label == new_label:
            raise ValueError(f"Cannot rename superpoint {old_label} onto itself")
        touched = self._label_voxels.pop(old_label, set())
        if not touched:
            return 0
        target = self._label_voxels.setdefault(new_label, set())
        for f in touched:
            votes = self._votes[f]
            votes[new_label] = votes.get(new_label, 0) + votes.pop(old_label)
            target.add(f)
            best = voxel_label(votes)
            assert best is not None
            if best != self._best_label[f] and self._best_label[f] not in (old_label, new_label):
                self._touch(int(self._best_label[f]))
            self._best_label[f] = best
            self._best_count[f] = votes[best]
        self._label_stamp.pop(old_label, None)
        self._touch(new_label)
        return len(touched)

    def total_votes(self) -> int:
        return sum(sum(v.values()) for v in self._votes.values())

    def labels(self) -> list[SuperpointLabel]:
        """Superpoint labels that currently win at least one voxel"""
        used = self._best_label[: self._used]
        return [int(x) for x in np.unique(used[used >= 0])]

    def label_voxel_counts(self) -> dict[SuperpointLabel, int]:
        used = self._best_label[: self._used]
        values, counts = np.unique(used[used >= 0], return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts, strict=True)}

    def superpoint_voxels(self, label: SuperpointLabel) -> IntArray:
        """Voxel coordinates whose winning label is `label`"""
        candidates = np.fromiter(self._label_voxels.get(label, ()), dtype=np.int64)
        if candidates.size == 0:
            return np.zeros((0, 3), dtype=np.int64)
        owned = candidates[self._best_label[candidates] == label]
        return self._voxels_of(np.sort(owned))

    def _touch(self, label: SuperpointLabel) -> None:
        self._stamp += 1
        self._label_stamp[label] = self._stamp

    def coarse_cells(self, label: SuperpointLabel, factor: int = 4) -> FloatArray:
        """Centers of the coarse (factor x voxel) cells occupied by a superpoint"""
        stamp = self._label_stamp.get(label, 0)
        cached = self._coarse_cache.get((label, factor))
        if cached is not None and cached[0] == stamp:
            return cached[1]
        voxels = self.superpoint_voxels(label)
        cells = np.unique(voxels // factor, axis=0) if voxels.size else np.zeros((0, 3), dtype=np.int64)
        centers = (cells.astype(np.float64) + 0.5) * (factor * self.voxel_size)
        self._coarse_cache[(label, factor)] = (stamp, centers)
        return centers

    # Raycasting

    def raycast_instance(
        self, frame: Frame, instance_id: InstanceId, mask: NDArray[np.integer] | None = None
    ) -> dict[SuperpointLabel, int]:
        """
        Count the superpoints hit by the rays of one panoptic instance.

        Each valid-depth pixel of the instance marches from truncation in front of its
        observed depth up to the depth itself in voxel_size / 2 steps; the first sample in
        a labeled voxel contributes one hit to that voxel's label.

        Args:
            frame: Frame whose pose and depth define the rays
            instance_id: Id in the panoptic mask
            mask: Panoptic mask to read, defaults to the frame's own

        Returns:
            Superpoint label -> hit count
        """
        mask = frame.panoptic_mask if mask is None else mask
        rows, cols = np.nonzero((mask == instance_id) & frame.valid_depth_mask())
        if rows.size == 0 or not self._block_coords:
            return {}
        d = frame.depth[rows, cols]
        samples_per_ray = int(round(self.truncation / (0.5 * self.voxel_size))) + 1
        offsets = np.linspace(-self.truncation, 0.0, samples_per_ray)
        depths = np.maximum(d[:, None] + offsets[None, :], 1e-6)
        u = np.broadcast_to(cols[:, None], depths.shape)
        v = np.broadcast_to(rows[:, None], depths.shape)
        points = backproject_pixels(u.ravel(), v.ravel(), depths.ravel(), frame.intrinsics, frame.pose)
        labels = self.labels_at(points).reshape(depths.shape)
        labeled = labels >= 0
        hit = labeled.any(axis=1)
        first = labels[np.arange(labels.shape[0]), np.argmax(labeled, axis=1)][hit]
        values, counts = np.unique(first, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts, strict=True)}

    # Meshing

    def _gather(self, origin: IntArray, size: int) -> tuple[FloatArray, NDArray[np.bool_], IntArray]:
        axis = np.arange(size)
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3) + origin
        flat = self._flat(grid, allocate=False)
        tsdf = np.full(flat.shape, self.truncation)
        observed = np.zeros(flat.shape, dtype=bool)
        hit = flat >= 0
        observed[hit] = self._weight[flat[hit]] > 0
        tsdf[observed] = self._tsdf[flat[observed]]
        shape = (size, size, size)
        return tsdf.reshape(shape), observed.reshape(shape), grid

    def _vertex_labels(self, vertices: FloatArray) -> IntArray:
        """Label of the nearest labeled voxel among the 27 around each vertex"""
        if vertices.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        base = self.voxel_index(vertices)
        steps = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)], dtype=np.int64)
        # Own voxel first so exact distance ties keep it
        steps = steps[np.argsort(np.abs(steps).sum(axis=1), kind="stable")]
        candidates = base[:, None, :] + steps[None, :, :]
        labels = self.labels_at(candidates.reshape(-1, 3)).reshape(candidates.shape[:2])
        dist = np.linalg.norm(self.voxel_center(candidates) - vertices[:, None, :], axis=-1)
        dist[labels < 0] = np.inf
        best = np.argmin(dist, axis=1)
        chosen = labels[np.arange(labels.shape[0]), best]
        return np.where(np.isfinite(dist[np.arange(dist.shape[0]), best]), chosen, NO_LABEL)

    def extract_labeled_mesh(
        self,
        semantic: Mapping[SuperpointLabel, ClassId] | None = None,
        instance: Mapping[SuperpointLabel, InstanceId] | None = None,
    ) -> LabeledMesh:
        """
        Marching-cubes mesh of the zero crossing, labeled through superpoint assignments.

        Blocks are meshed independently in coordinate order over a (B+1)³ window that
        borrows the first voxel layer of the neighbouring blocks. Cubes with an unobserved
        corner are skipped. Seam vertices shared by two blocks are welded into one.

        Raises:
            EmptyMapError: If no voxel has been observed
        """
        if self.is_empty():
            raise EmptyMapError("Cannot extract a mesh from an empty map")
        semantic = semantic or {}
        instance = instance or {}
        size = self.block_size + 1
        all_vertices: list[FloatArray] = []
        all_faces: list[IntArray] = []
        offset = 0
        for coord in sorted(self._block_coords):
            origin = np.asarray(coord, dtype=np.int64) * self.block_size
            volume, observed, _ = self._gather(origin, size)
            cube_ok = (
                observed[:-1, :-1, :-1] & observed[1:, :-1, :-1] & observed[:-1, 1:, :-1] & observed[:-1, :-1, 1:]
                & observed[1:, 1:, :-1] & observed[1:, :-1, 1:] & observed[:-1, 1:, 1:] & observed[1:, 1:, 1:]
            )
            if not cube_ok.any():
                continue
            seen = volume[observed]
            if seen.min() > 0 or seen.max() < 0:
                continue
            mask = np.zeros_like(observed)
            mask[:-1, :-1, :-1] = cube_ok
            try:
                verts, faces, _, _ = measure.marching_cubes(
                    volume, level=0.0, spacing=(self.voxel_size,) * 3, mask=mask
                )
            except (ValueError, RuntimeError):
                continue
            if faces.size == 0:
                continue
            all_vertices.append(verts + self.voxel_center(origin))
            all_faces.append(faces.astype(np.int64) + offset)
            offset += verts.shape[0]

        vertices = np.concatenate(all_vertices) if all_vertices else np.zeros((0, 3))
        faces = np.concatenate(all_faces) if all_faces else np.zeros((0, 3), dtype=np.int64)
        if faces.size:
            # Neighbouring blocks emit the same vertex on their shared face
            welded = trimesh.Trimesh(vertices=vertices, faces=faces, process=False)
            welded.merge_vertices(merge_tex=True, merge_norm=True, digits_vertex=WELD_DIGITS)
            vertices = np.asarray(welded.vertices, dtype=np.float64)
            faces = np.asarray(welded.faces, dtype=np.int64)
        superpoints = self._vertex_labels(vertices)
        semantic_ids = np.array([semantic.get(int(s), 0) if s >= 0 else 0 for s in superpoints], dtype=np.int64)
        instance_ids = np.array([instance.get(int(s), 0) if s >= 0 else 0 for s in superpoints], dtype=np.int64)
        logger.debug(f"Extracted mesh with {vertices.shape[0]} vertices and {faces.shape[0]} faces")
        return LabeledMesh(vertices, faces, superpoints, semantic_ids, instance_ids)

    def memory_bytes(self) -> int:
        """Estimate of the map's resident size"""
        arrays = self._tsdf.nbytes + self._weight.nbytes + self._best_label.nbytes + self._best_count.nbytes
        vote_entries = sum(len(v) for v in self._votes.values())
        return int(arrays + 64 * len(self._votes) + 32 * vote_entries)
