"""
Superpoint assignment and merging

Frame surfaces are assigned to global superpoints by counting how many of their points
fall into voxels already won by each superpoint. Superpoints that keep co-occurring in
the significant overlap sets of surfaces are merged when a merge policy allows it.
"""

import logging
from abc import ABC, abstractmethod
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

import numpy as np

from .core import BACKGROUND_CLASS, ClassId, InstanceId, SuperpointLabel
from .errors import EmptySurfaceError
from .graph import SuperpointGraph, edge_key
from .surfaces import Surface
from .tsdf import NO_LABEL, LabelTsdfMap

logger = logging.getLogger(__name__)

type MergeListener = Callable[[SuperpointLabel, SuperpointLabel], None]


@dataclass(frozen=True, slots=True)
class AssignmentParams:
    """
    Attributes:
        min_overlap_ratio: Fraction of a surface's points a superpoint must cover
        min_overlap_voxels: Absolute floor on the covered point count
        merge_threshold: Co-observation count a pair must exceed to merge
    """
    min_overlap_ratio: float = 0.25
    min_overlap_voxels: int = 10
    merge_threshold: int = 3

    def __post_init__(self) -> None:
        if not 0.0 < self.min_overlap_ratio <= 1.0:
            raise ValueError(f"Invalid assignment params: min_overlap_ratio={self.min_overlap_ratio}")
        if self.min_overlap_voxels < 1:
            raise ValueError(f"Invalid assignment params: min_overlap_voxels={self.min_overlap_voxels}")
        if self.merge_threshold < 0:
            raise ValueError(f"Invalid assignment params: merge_threshold={self.merge_threshold}")

    def threshold(self, point_count: int) -> float:
        return max(float(self.min_overlap_voxels), self.min_overlap_ratio * point_count)


@dataclass(frozen=True, slots=True)
class Superpoint:
    """
    Snapshot of one superpoint.

    Attributes:
        label: Global label L_S
        semantic_confidences: Class -> P_ν^C
        semantic_label: Most confident class, C_0 without evidence
        instance: Mapping-time instance, None when never associated
        voxel_count: Voxels the superpoint currently wins
    """
    label: SuperpointLabel
    semantic_confidences: dict[ClassId, float]
    semantic_label: ClassId
    instance: InstanceId | None
    voxel_count: int


@dataclass(frozen=True, slots=True)
class SurfaceAssignment:
    """
    Outcome of assigning one surface.

    Attributes:
        surface_id: Frame-local surface id
        label: Assigned superpoint
        is_new: True when a fresh label was minted
        overlaps: Superpoint -> number of surface points in its voxels
        significant: L_N(s_i), superpoints at or above the threshold
    """
    surface_id: int
    label: SuperpointLabel
    is_new: bool
    overlaps: dict[SuperpointLabel, int]
    significant: frozenset[SuperpointLabel]


@dataclass(frozen=True, slots=True)
class MergeRecord:
    """Audit entry for one merge"""
    survivor: SuperpointLabel
    absorbed: SuperpointLabel
    survivor_class: ClassId
    absorbed_class: ClassId
    overlap: int
    frame_index: int = -1

    @property
    def semantically_consistent(self) -> bool:
        return (
            self.survivor_class == self.absorbed_class
            or BACKGROUND_CLASS in (self.survivor_class, self.absorbed_class)
        )


class OverlapMatrix:
    """Symmetric co-observation counts M, keyed by (smaller, larger) label"""

    def __init__(self) -> None:
        self._counts: dict[tuple[SuperpointLabel, SuperpointLabel], int] = {}

    def increment(self, labels: Iterable[SuperpointLabel]) -> int:
        """Add 1 for every unordered pair of distinct labels; returns the number of pairs"""
        pairs = list(combinations(sorted(set(labels)), 2))
        for pair in pairs:
            self._counts[pair] = self._counts.get(pair, 0) + 1
        return len(pairs)

    def get(self, a: SuperpointLabel, b: SuperpointLabel) -> int:
        return self._counts.get(edge_key(a, b), 0)

    def fold(self, survivor: SuperpointLabel, absorbed: SuperpointLabel) -> None:
        """Re-key absorbed's pairs onto survivor, summing counts; the pair itself disappears"""
        for (a, b) in [k for k in self._counts if absorbed in k]:
            count = self._counts.pop((a, b))
            other = b if a == absorbed else a
            if other == survivor:
                continue
            key = edge_key(survivor, other)
            self._counts[key] = self._counts.get(key, 0) + count

    def items(self) -> Iterator[tuple[tuple[SuperpointLabel, SuperpointLabel], int]]:
        yield from sorted(self._counts.items())

    def __len__(self) -> int:
        return len(self._counts)


class MergePolicyKind(Enum):
    """Which semantic condition, if any, gates a spatially justified merge"""
    SEMANTIC = "semantic"
    SPATIAL = "spatial"


class MergePolicy(ABC):
    """Second merge condition, applied to the current semantic labels of a pair"""

    @abstractmethod
    def allows(self, class_a: ClassId, class_b: ClassId) -> bool:
        ...

    @staticmethod
    def create(kind: MergePolicyKind) -> "MergePolicy":
        """
        Build the policy for `kind`.

        Raises:
            NotImplementedError: If the kind is unknown
        """
        match kind:
            case MergePolicyKind.SEMANTIC:
                return SemanticConsistentMerge()
            case MergePolicyKind.SPATIAL:
                return SpatialOnlyMerge()
            case _:
                raise NotImplementedError(f"Merge policy {kind} not supported")


class SemanticConsistentMerge(MergePolicy):
    """Equal classes, or at least one side still background"""

    def allows(self, class_a: ClassId, class_b: ClassId) -> bool:
        return class_a == class_b or BACKGROUND_CLASS in (class_a, class_b)


class SpatialOnlyMerge(MergePolicy):
    """Spatial connection alone suffices"""

    def allows(self, class_a: ClassId, class_b: ClassId) -> bool:
        return True


@dataclass
class ManagerCounters:
    surfaces: int = 0
    minted: int = 0
    merges: int = 0
    votes: int = 0


class SuperpointManager:
    """
    Owns the superpoint label space.

    Mutates the map's vote histograms, the overlap matrix and (through merges) the graph.
    Extra merge listeners are called as listener(survivor, absorbed) after each merge.
    """

    def __init__(
        self,
        tsdf_map: LabelTsdfMap,
        graph: SuperpointGraph,
        params: AssignmentParams | None = None,
        policy: MergePolicy | None = None,
        listeners: list[MergeListener] | None = None,
    ):
        self.map = tsdf_map
        self.graph = graph
        self.params = params or AssignmentParams()
        self.policy = policy or SemanticConsistentMerge()
        self.overlap = OverlapMatrix()
        self.listeners: list[MergeListener] = list(listeners or [])
        self.merge_log: list[MergeRecord] = []
        self.counters = ManagerCounters()
        self._live: set[SuperpointLabel] = set()
        self._next_label: SuperpointLabel = 1

    @property
    def live_labels(self) -> list[SuperpointLabel]:
        return sorted(self._live)

    def _mint(self) -> SuperpointLabel:
        label = self._next_label
        self._next_label += 1
        self._live.add(label)
        self.graph.add_vertex(label)
        self.counters.minted += 1
        return label

    def overlap_counts(self, surface: Surface) -> dict[SuperpointLabel, int]:
        """Π_s: surface points per superpoint whose voxel label is that superpoint"""
        labels = self.map.labels_at(surface.point_cloud)
        labels = labels[labels != NO_LABEL]
        values, counts = np.unique(labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts, strict=True)}

    def plan_assignment(self, surface: Surface) -> SurfaceAssignment:
        """
        Pick the superpoint for a surface without touching any state.

        Raises:
            EmptySurfaceError: If the surface has no points
        """
        if surface.point_cloud.shape[0] == 0:
            raise EmptySurfaceError(f"Surface {surface.surface_id} has no points")
        overlaps = self.overlap_counts(surface)
        threshold = self.params.threshold(surface.point_cloud.shape[0])
        significant = frozenset(label for label, count in overlaps.items() if count >= threshold)
        if significant:
            best = min(significant, key=lambda label: (-overlaps[label], label))
            return SurfaceAssignment(surface.surface_id, best, False, overlaps, significant)
        return SurfaceAssignment(surface.surface_id, NO_LABEL, True, overlaps, significant)

    def assign_surface(self, surface: Surface) -> SurfaceAssignment:
        """
        Assign one surface, mint a label if needed, and cast its votes.

        Raises:
            EmptySurfaceError: If the surface has no points
        """
        return self.assign_surfaces([surface])[0]

    def assign_surfaces(self, surfaces: list[Surface]) -> list[SurfaceAssignment]:
        """
        Assign all surfaces of one frame against the map state before the frame,
        then cast their votes and update the overlap matrix.
        """
        planned = [self.plan_assignment(surface) for surface in surfaces]
        result: list[SurfaceAssignment] = []
        for surface, plan in zip(surfaces, planned, strict=True):
            if plan.is_new:
                plan = SurfaceAssignment(plan.surface_id, self._mint(), True, plan.overlaps, plan.significant)
            self.map.cast_votes(surface.point_cloud, plan.label)
            self.overlap.increment(plan.significant)
            self.counters.surfaces += 1
            self.counters.votes += surface.point_cloud.shape[0]
            result.append(plan)
        return result

    def update_overlap_matrix(self, significant: Iterable[SuperpointLabel]) -> int:
        return self.overlap.increment(significant)

    def _next_merge(self) -> tuple[SuperpointLabel, SuperpointLabel, int] | None:
        theta = self.params.merge_threshold
        candidates = sorted(
            ((count, a, b) for (a, b), count in self.overlap.items() if count > theta),
            key=lambda item: (-item[0], item[1], item[2]),
        )
        for count, a, b in candidates:
            if a not in self._live or b not in self._live:
                continue
            if self.policy.allows(self.graph.initial_semantic(a), self.graph.initial_semantic(b)):
                return a, b, count
        return None

    def merge_superpoints(self, frame_index: int = -1) -> list[MergeRecord]:
        """
        Merge pairs with M > merge_threshold that the policy allows until none remain.

        Pairs are taken in descending overlap order, labels breaking ties. The smaller
        label survives. Classes are re-evaluated after every merge.

        Returns:
            Audit records of this pass
        """
        records: list[MergeRecord] = []
        while (pair := self._next_merge()) is not None:
            a, b, count = pair
            survivor, absorbed = min(a, b), max(a, b)
            record = MergeRecord(
                survivor=survivor,
                absorbed=absorbed,
                survivor_class=self.graph.initial_semantic(survivor),
                absorbed_class=self.graph.initial_semantic(absorbed),
                overlap=count,
                frame_index=frame_index,
            )
            self._fold(survivor, absorbed)
            records.append(record)
            logger.debug(
                f"Merged superpoint {absorbed} (class {record.absorbed_class}) into "
                f"{survivor} (class {record.survivor_class}), M={count}"
            )
        self.merge_log.extend(records)
        self.counters.merges += len(records)
        return records

    def _fold(self, survivor: SuperpointLabel, absorbed: SuperpointLabel) -> None:
        self.map.rename_votes(absorbed, survivor)
        self.graph.fold_vertices(survivor, absorbed)
        self.overlap.fold(survivor, absorbed)
        self._live.discard(absorbed)
        for listener in self.listeners:
            listener(survivor, absorbed)

    def superpoints(self, instances: dict[SuperpointLabel, InstanceId] | None = None) -> list[Superpoint]:
        """Snapshot of all live superpoints"""
        voxel_counts = self.map.label_voxel_counts()
        instances = instances or {}
        return [
            Superpoint(
                label=label,
                semantic_confidences=self.graph.node_confidence(label),
                semantic_label=self.graph.initial_semantic(label),
                instance=instances.get(label),
                voxel_count=voxel_counts.get(label, 0),
            )
            for label in sorted(self._live)
        ]


@dataclass
class MergeAudit:
    """Summary of a merge log"""
    merges: int = 0
    inconsistent: list[MergeRecord] = field(default_factory=list)

    @classmethod
    def of(cls, records: Iterable[MergeRecord]) -> "MergeAudit":
        audit = cls()
        for record in records:
            audit.merges += 1
            if not record.semantically_consistent:
                audit.inconsistent.append(record)
        return audit
