"""
Instance labels for superpoints

Mapping time: each frame's 2D instances are associated with persistent global instances
through the superpoints their surfaces landed on, and every superpoint counts how often
it was seen as part of each global instance.

Query time: superpoints of one class are grouped by their dominant global instance, weakly
attached members are detached, and detached superpoints are re-attached to neighbouring
instances or become instances of their own.
"""

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

from .core import BACKGROUND_CLASS, ClassId, InstanceId, SuperpointLabel
from .graph import SuperpointGraph
from .superpoints import SurfaceAssignment
from .surfaces import Surface

logger = logging.getLogger(__name__)


class InstanceAssociator:
    """
    Persistent instance ids from frame-wise panoptic instances.

    Attributes:
        min_ratio: Pixel share a global instance must collect to absorb a 2D instance
    """

    def __init__(self, min_ratio: float = 0.25):
        if not 0.0 < min_ratio <= 1.0:
            raise ValueError(f"Invalid association ratio {min_ratio}")
        self.min_ratio = min_ratio
        self._counts: dict[SuperpointLabel, dict[InstanceId, int]] = {}
        self._classes: dict[InstanceId, ClassId] = {}
        self._next_id: InstanceId = 1

    def dominant(self, label: SuperpointLabel) -> InstanceId | None:
        """Global instance seen most often on `label`, smallest id on ties"""
        counts = self._counts.get(label)
        if not counts:
            return None
        return min(counts, key=lambda g: (-counts[g], g))

    def observations(self, label: SuperpointLabel) -> dict[InstanceId, int]:
        return dict(self._counts.get(label, {}))

    def instance_class(self, instance: InstanceId) -> ClassId:
        return self._classes[instance]

    def associate_frame(
        self, surfaces: list[Surface], assignments: list[SurfaceAssignment]
    ) -> dict[InstanceId, InstanceId]:
        """
        Map the frame's 2D instances onto global instances and record the observations.

        2D instances are handled in order of decreasing pixel count. Each one is matched to
        the same-class global instance that dominates the superpoints under most of its
        pixels, provided that instance holds at least min_ratio of them and was not already
        claimed in this frame; otherwise a new global instance is created.

        Returns:
            Frame-local instance id -> global instance id
        """
        by_instance: dict[InstanceId, list[tuple[Surface, SurfaceAssignment]]] = {}
        for surface, assignment in zip(surfaces, assignments, strict=True):
            by_instance.setdefault(surface.instance_id, []).append((surface, assignment))

        def pixels(item: tuple[InstanceId, list[tuple[Surface, SurfaceAssignment]]]) -> tuple[int, int]:
            return -sum(s.size for s, _ in item[1]), item[0]

        claimed: set[InstanceId] = set()
        mapping: dict[InstanceId, InstanceId] = {}
        for local_id, members in sorted(by_instance.items(), key=pixels):
            category = members[0][0].category
            total = sum(s.size for s, _ in members)
            support: dict[InstanceId, int] = {}
            for surface, assignment in members:
                g = self.dominant(assignment.label)
                if g is not None and self._classes[g] == category:
                    support[g] = support.get(g, 0) + surface.size
            chosen = None
            for g in sorted(support, key=lambda g: (-support[g], g)):
                if g not in claimed and support[g] >= self.min_ratio * total:
                    chosen = g
                    break
            if chosen is None:
                chosen = self._next_id
                self._next_id += 1
                self._classes[chosen] = category
            claimed.add(chosen)
            mapping[local_id] = chosen
            for _, assignment in members:
                counts = self._counts.setdefault(assignment.label, {})
                counts[chosen] = counts.get(chosen, 0) + 1
        return mapping

    def fold(self, survivor: SuperpointLabel, absorbed: SuperpointLabel) -> None:
        """Sum absorbed's observation counts into survivor"""
        moved = self._counts.pop(absorbed, {})
        target = self._counts.setdefault(survivor, {})
        for g, count in moved.items():
            target[g] = target.get(g, 0) + count

    def dominant_instances(self) -> dict[SuperpointLabel, InstanceId]:
        result: dict[SuperpointLabel, InstanceId] = {}
        for label in sorted(self._counts):
            g = self.dominant(label)
            if g is not None:
                result[label] = g
        return result


@dataclass(frozen=True, slots=True)
class RefinementParams:
    """
    Detach / attach thresholds, with optional per-class overrides.

    Attributes:
        theta_d: Detach a member whose best link into its instance is below theta_d * P_O
        theta_o: Attach only if the link beats theta_o * P_O of the target instance
        theta_l: Attach only if the link beats theta_l * the node's strongest class edge
    """
    theta_d: float = 0.3
    theta_o: float = 0.3
    theta_l: float = 0.5
    theta_d_per_class: Mapping[ClassId, float] = field(default_factory=dict)
    theta_o_per_class: Mapping[ClassId, float] = field(default_factory=dict)
    theta_l_per_class: Mapping[ClassId, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = [self.theta_d, self.theta_o, self.theta_l]
        for overrides in (self.theta_d_per_class, self.theta_o_per_class, self.theta_l_per_class):
            values.extend(overrides.values())
        if any(v < 0 for v in values):
            raise ValueError("Invalid refinement params: thresholds must be non-negative")

    def for_class(self, category: ClassId) -> tuple[float, float, float]:
        return (
            self.theta_d_per_class.get(category, self.theta_d),
            self.theta_o_per_class.get(category, self.theta_o),
            self.theta_l_per_class.get(category, self.theta_l),
        )


@dataclass(frozen=True, slots=True)
class InstanceLabel:
    """
    One predicted instance.

    Attributes:
        instance_id: Global id O
        category: Semantic class shared by all members
        members: Superpoint labels
        confidence: P_O, the strongest class edge between two members
        score: Ranking score in [0, 1], mean class probability of the members
    """
    instance_id: InstanceId
    category: ClassId
    members: frozenset[SuperpointLabel]
    confidence: float = 0.0
    score: float = 0.0


def instance_confidence(members: set[SuperpointLabel] | frozenset[SuperpointLabel], graph: SuperpointGraph,
                        category: ClassId) -> float:
    """P_O: largest class-C edge confidence among edges internal to the instance, 0 for none"""
    best = 0.0
    for a in members:
        for b in graph.neighbours(a):
            if b > a and b in members:
                best = max(best, graph.edge_class_confidence(a, b, category))
    return best


def link_confidence(label: SuperpointLabel, members: set[SuperpointLabel] | frozenset[SuperpointLabel],
                    graph: SuperpointGraph, category: ClassId) -> float:
    """P^C_L(O): largest class-C edge between `label` and the other members of O"""
    best = 0.0
    for b in graph.neighbours(label):
        if b != label and b in members:
            best = max(best, graph.edge_class_confidence(label, b, category))
    return best


def node_confidence(label: SuperpointLabel, graph: SuperpointGraph, category: ClassId) -> float:
    """P^C_L(L_S): largest class-C edge incident to `label`"""
    return max((graph.edge_class_confidence(label, b, category) for b in graph.neighbours(label)), default=0.0)


def initial_instances(
    semantic: Mapping[SuperpointLabel, ClassId],
    association: Mapping[SuperpointLabel, InstanceId],
) -> dict[ClassId, list[set[SuperpointLabel]]]:
    """
    Group superpoints of each class by their mapping-time instance.

    Superpoints without an association become singletons; C_0 superpoints get no instance.

    Returns:
        Class -> member sets, ordered by smallest member
    """
    groups: dict[ClassId, dict[tuple[int, int], set[SuperpointLabel]]] = {}
    for label in sorted(semantic):
        category = semantic[label]
        if category == BACKGROUND_CLASS:
            continue
        g = association.get(label)
        key = (0, g) if g is not None else (1, label)
        groups.setdefault(category, {}).setdefault(key, set()).add(label)
    return {c: sorted(sets.values(), key=min) for c, sets in sorted(groups.items())}


def _components(members: set[SuperpointLabel], graph: SuperpointGraph, category: ClassId) -> list[set[SuperpointLabel]]:
    """Connected components of `members` under positive class-C edges"""
    remaining = set(members)
    parts: list[set[SuperpointLabel]] = []
    while remaining:
        start = min(remaining)
        part = {start}
        stack = [start]
        remaining.discard(start)
        while stack:
            a = stack.pop()
            for b in graph.neighbours(a):
                if b in remaining and graph.edge_class_confidence(a, b, category) > 0:
                    remaining.discard(b)
                    part.add(b)
                    stack.append(b)
        parts.append(part)
    return sorted(parts, key=min)


def refine_class(
    category: ClassId,
    instances: list[set[SuperpointLabel]],
    graph: SuperpointGraph,
    params: RefinementParams | None = None,
) -> list[set[SuperpointLabel]]:
    """
    Detach weakly linked superpoints and re-attach them.

    1. Every member whose best link into its instance is below theta_d * P_O is detached.
    2. Detached superpoints are visited by decreasing strongest class edge, then label.
    3. Each joins the neighbouring instance with the strongest link among those passing
       both attach tests, or starts a new instance. P_O is updated after every attachment.
    Finally every instance is split into its connected components.

    Returns:
        Refined member sets, ordered by smallest member
    """
    theta_d, theta_o, theta_l = (params or RefinementParams()).for_class(category)
    working: dict[int, set[SuperpointLabel]] = {i: set(m) for i, m in enumerate(instances) if m}
    conf = {i: instance_confidence(m, graph, category) for i, m in working.items()}

    detached: list[SuperpointLabel] = []
    for i, members in working.items():
        for label in sorted(members):
            if link_confidence(label, members, graph, category) < theta_d * conf[i]:
                detached.append(label)
    owner: dict[SuperpointLabel, int] = {}
    for i, members in working.items():
        for label in members:
            owner[label] = i
    for label in detached:
        working[owner.pop(label)].discard(label)
    working = {i: m for i, m in working.items() if m}
    conf = {i: instance_confidence(m, graph, category) for i, m in working.items()}

    next_id = max(working, default=-1) + 1
    order = sorted(detached, key=lambda label: (-node_confidence(label, graph, category), label))
    for label in order:
        strongest = node_confidence(label, graph, category)
        best: tuple[float, int] | None = None
        for neighbour in graph.neighbours(label):
            target = owner.get(neighbour)
            if target is None:
                continue
            link = link_confidence(label, working[target], graph, category)
            if link > theta_o * conf[target] and link > theta_l * strongest:
                if best is None or link > best[0] or (link == best[0] and target < best[1]):
                    best = (link, target)
        if best is None:
            working[next_id] = {label}
            conf[next_id] = 0.0
            owner[label] = next_id
            next_id += 1
        else:
            link, target = best
            working[target].add(label)
            conf[target] = max(conf[target], link)
            owner[label] = target

    refined: list[set[SuperpointLabel]] = []
    for members in working.values():
        refined.extend(_components(members, graph, category))
    if detached:
        logger.debug(f"Class {category}: detached {len(detached)} superpoints, {len(refined)} instances after refinement")
    return sorted(refined, key=min)


def instance_score(members: set[SuperpointLabel] | frozenset[SuperpointLabel], category: ClassId,
                   graph: SuperpointGraph) -> float:
    """Mean over members of the normalized node confidence of `category`"""
    probs = []
    for label in members:
        node = graph.node_confidence(label)
        total = sum(node.values())
        probs.append(node.get(category, 0.0) / total if total > 0 else 0.0)
    return sum(probs) / len(probs) if probs else 0.0


@dataclass(frozen=True, slots=True)
class InstanceResult:
    """Final instances and the superpoint -> instance map (0 = no instance)"""
    instances: tuple[InstanceLabel, ...]
    assignment: dict[SuperpointLabel, InstanceId]


def assign_instances(
    semantic: Mapping[SuperpointLabel, ClassId],
    association: Mapping[SuperpointLabel, InstanceId],
    graph: SuperpointGraph,
    params: RefinementParams | None = None,
    refine: bool = True,
) -> InstanceResult:
    """
    Initial instance guess per class, optionally refined, numbered 1..K by (class, smallest member).
    """
    groups = initial_instances(semantic, association)
    labeled: list[tuple[ClassId, set[SuperpointLabel]]] = []
    for category, sets in groups.items():
        final = refine_class(category, sets, graph, params) if refine else sets
        labeled.extend((category, members) for members in final)
    labeled.sort(key=lambda item: (item[0], min(item[1])))

    instances: list[InstanceLabel] = []
    assignment: dict[SuperpointLabel, InstanceId] = {label: 0 for label in semantic}
    for index, (category, members) in enumerate(labeled, start=1):
        instances.append(InstanceLabel(
            instance_id=index,
            category=category,
            members=frozenset(members),
            confidence=instance_confidence(members, graph, category),
            score=instance_score(members, category, graph),
        ))
        for label in members:
            assignment[label] = index
    return InstanceResult(tuple(instances), assignment)
