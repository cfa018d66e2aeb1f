"""
Superpoint graph

Vertices are superpoints carrying per-class node confidences; edges carry per-class
spatial-panoptic confidences. Both are accumulated per frame from instance raycasts.
"""

import copy
import logging
import math
from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from .core import BACKGROUND_CLASS, ClassId, InstanceId, SuperpointLabel
from .errors import MissingVertexError
from .tsdf import LabelTsdfMap

logger = logging.getLogger(__name__)

type EdgeKey = tuple[SuperpointLabel, SuperpointLabel]
type Confidences = dict[ClassId, float]


def edge_key(a: SuperpointLabel, b: SuperpointLabel) -> EdgeKey:
    return (a, b) if a < b else (b, a)


def spatial_confidence_from_distance(distance: float, voxel_size: float, sigma: float) -> float:
    """exp(-max(0, d - voxel_size) / sigma)"""
    return math.exp(-max(0.0, distance - voxel_size) / sigma)


def superpoint_distance(a: SuperpointLabel, b: SuperpointLabel, tsdf_map: LabelTsdfMap, factor: int = 4) -> float:
    """
    Approximate minimum distance between two superpoints' voxel sets.

    Both sets are downsampled to a grid `factor` times coarser; the distance between the
    nearest occupied coarse cells, less one coarse cell, bounds the voxel-set distance.
    Returns inf when either superpoint owns no voxel.
    """
    cells_a = tsdf_map.coarse_cells(a, factor)
    cells_b = tsdf_map.coarse_cells(b, factor)
    if cells_a.shape[0] == 0 or cells_b.shape[0] == 0:
        return math.inf
    if cells_a.shape[0] < cells_b.shape[0]:
        cells_a, cells_b = cells_b, cells_a
    nearest, _ = cKDTree(cells_a).query(cells_b, k=1)
    return max(0.0, float(np.min(nearest)) - factor * tsdf_map.voxel_size)


def spatial_confidence(
    a: SuperpointLabel, b: SuperpointLabel, tsdf_map: LabelTsdfMap, sigma: float = 0.05, factor: int = 4
) -> float:
    """P_spatial in [0, 1]: 1 for touching superpoints, decaying with their separation"""
    distance = superpoint_distance(a, b, tsdf_map, factor)
    if math.isinf(distance):
        return 0.0
    return spatial_confidence_from_distance(distance, tsdf_map.voxel_size, sigma)


@dataclass(frozen=True, slots=True)
class InstanceObservation:
    """
    Raycast result of one frame-local panoptic instance.

    Attributes:
        instance_id: Frame-local id o_i
        category: C(o_i)
        confidence: P_o
        hits: Superpoint label -> N^S_{o_i}
    """
    instance_id: InstanceId
    category: ClassId
    confidence: float
    hits: Mapping[SuperpointLabel, int] = field(default_factory=dict)


class SuperpointGraph:
    """Sparse graph over superpoint labels with per-class confidences"""

    def __init__(self) -> None:
        self._nodes: dict[SuperpointLabel, Confidences] = {}
        self._edges: dict[EdgeKey, Confidences] = {}
        self._adjacency: dict[SuperpointLabel, set[SuperpointLabel]] = {}
        self.dropped_self_edge_mass = 0.0

    # Structure

    def add_vertex(self, label: SuperpointLabel) -> None:
        self._nodes.setdefault(label, {})
        self._adjacency.setdefault(label, set())

    def has_vertex(self, label: SuperpointLabel) -> bool:
        return label in self._nodes

    @property
    def vertices(self) -> list[SuperpointLabel]:
        return sorted(self._nodes)

    def __len__(self) -> int:
        return len(self._nodes)

    def neighbours(self, label: SuperpointLabel) -> list[SuperpointLabel]:
        return sorted(self._adjacency.get(label, ()))

    def edges(self) -> Iterator[tuple[EdgeKey, Confidences]]:
        for key in sorted(self._edges):
            yield key, self._edges[key]

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    # Confidences

    def node_confidence(self, label: SuperpointLabel) -> Confidences:
        return dict(self._nodes.get(label, {}))

    def edge_confidence(self, a: SuperpointLabel, b: SuperpointLabel) -> Confidences:
        return dict(self._edges.get(edge_key(a, b), {}))

    def edge_class_confidence(self, a: SuperpointLabel, b: SuperpointLabel, category: ClassId) -> float:
        return self._edges.get(edge_key(a, b), {}).get(category, 0.0)

    def add_node_confidence(self, label: SuperpointLabel, category: ClassId, amount: float) -> None:
        if amount < 0:
            raise ValueError(f"Confidences only accumulate, got {amount}")
        self.add_vertex(label)
        node = self._nodes[label]
        node[category] = node.get(category, 0.0) + amount

    def add_edge_confidence(self, a: SuperpointLabel, b: SuperpointLabel, category: ClassId, amount: float) -> None:
        if a == b:
            raise ValueError(f"Self-edge on superpoint {a}")
        if amount < 0:
            raise ValueError(f"Confidences only accumulate, got {amount}")
        if amount == 0:
            return
        self.add_vertex(a)
        self.add_vertex(b)
        edge = self._edges.setdefault(edge_key(a, b), {})
        edge[category] = edge.get(category, 0.0) + amount
        self._adjacency[a].add(b)
        self._adjacency[b].add(a)

    def accumulate_frame(
        self,
        observations: list[InstanceObservation],
        spatial: Callable[[SuperpointLabel, SuperpointLabel], float],
        max_hits: int = 8,
    ) -> float:
        """
        Add one frame of raycast evidence.

        Every hit superpoint gains P_o * N in the instance class. Every pair among the
        max_hits most hit superpoints gains P_o * P_spatial * min(N1, N2) on its edge.

        Returns:
            Node confidence mass added
        """
        added = 0.0
        for obs in observations:
            for label in sorted(obs.hits):
                amount = obs.confidence * obs.hits[label]
                self.add_node_confidence(label, obs.category, amount)
                added += amount
            top = sorted(obs.hits, key=lambda label: (-obs.hits[label], label))[:max_hits]
            for a, b in combinations(sorted(top), 2):
                p_spatial = spatial(a, b)
                if p_spatial <= 0:
                    continue
                amount = obs.confidence * p_spatial * min(obs.hits[a], obs.hits[b])
                self.add_edge_confidence(a, b, obs.category, amount)
        return added

    def initial_semantic(self, label: SuperpointLabel) -> ClassId:
        """Argmax class of the node confidences, smallest class on ties, C_0 without evidence"""
        node = self._nodes.get(label, {})
        positive = {c: v for c, v in node.items() if v > 0}
        if not positive:
            return BACKGROUND_CLASS
        return min(positive, key=lambda c: (-positive[c], c))

    def fold_vertices(self, survivor: SuperpointLabel, absorbed: SuperpointLabel) -> float:
        """
        Merge `absorbed` into `survivor`.

        Node confidences are summed and incident edges re-keyed with component-wise
        summation. The edge between the two disappears.

        Returns:
            Confidence mass of the deleted self-edge

        Raises:
            MissingVertexError: If either vertex is unknown
        """
        for label in (survivor, absorbed):
            if label not in self._nodes:
                raise MissingVertexError(label)
        if survivor == absorbed:
            return 0.0

        target = self._nodes[survivor]
        for category, value in self._nodes.pop(absorbed).items():
            target[category] = target.get(category, 0.0) + value

        dropped = 0.0
        for other in sorted(self._adjacency.pop(absorbed)):
            conf = self._edges.pop(edge_key(absorbed, other))
            self._adjacency[other].discard(absorbed)
            if other == survivor:
                dropped += sum(conf.values())
                continue
            edge = self._edges.setdefault(edge_key(survivor, other), {})
            for category, value in conf.items():
                edge[category] = edge.get(category, 0.0) + value
            self._adjacency[survivor].add(other)
            self._adjacency[other].add(survivor)
        self.dropped_self_edge_mass += dropped
        logger.debug(f"Folded vertex {absorbed} into {survivor}, self-edge mass {dropped:.3f} dropped")
        return dropped

    def total_node_mass(self) -> float:
        return sum(sum(node.values()) for node in self._nodes.values())

    def total_edge_mass(self) -> float:
        return sum(sum(edge.values()) for edge in self._edges.values())

    def copy(self) -> "SuperpointGraph":
        """Independent deep copy for query-time consumers"""
        return copy.deepcopy(self)

    # Text dump

    def dump(self) -> str:
        """
        Line-oriented text form.

        Vertex lines: `v <label> <class>:<conf> ...`; edge lines: `e <a> <b> <class>:<conf> ...`
        """
        def fmt(conf: Confidences) -> str:
            return " ".join(f"{c}:{conf[c]!r}" for c in sorted(conf))

        lines = [f"v {label} {fmt(self._nodes[label])}".rstrip() for label in sorted(self._nodes)]
        lines += [f"e {a} {b} {fmt(conf)}".rstrip() for (a, b), conf in self.edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "SuperpointGraph":
        """
        Inverse of dump.

        Raises:
            ValueError: If a line is malformed
        """
        graph = cls()
        for number, line in enumerate(text.splitlines(), start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    label = int(parts[1])
                    graph.add_vertex(label)
                    for item in parts[2:]:
                        category, value = item.split(":")
                        graph.add_node_confidence(label, int(category), float(value))
                elif parts[0] == "e":
                    a, b = int(parts[1]), int(parts[2])
                    for item in parts[3:]:
                        category, value = item.split(":")
                        graph.add_edge_confidence(a, b, int(category), float(value))
                else:
                    raise ValueError(f"unknown record '{parts[0]}'")
            except (IndexError, ValueError) as e:
                raise ValueError(f"Invalid graph dump line {number}: {e}") from e
        return graph
