"""
Semantic regularization over the superpoint graph

The labeling energy is a sum of per-superpoint unaries (negative log of the normalized
node confidences) and per-edge pairwise terms that penalize label changes between
superpoints unless both sides carry strong evidence for their own class relative to
the edge confidence. It is minimized by alpha-beta swap moves, each solved exactly by
one min-cut.
"""

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from itertools import combinations

from .core import BACKGROUND_CLASS, ClassId, SuperpointLabel
from .errors import SemiMetricError, ZeroEvidenceError
from .graph import EdgeKey, SuperpointGraph
from .maxflow import FlowNetwork, max_flow_min_cut

logger = logging.getLogger(__name__)

type Labeling = dict[SuperpointLabel, ClassId]

_SOURCE = "alpha"
_SINK = "beta"
_DECREASE_TOL = 1e-12


@dataclass(frozen=True, slots=True)
class EnergyParams:
    """
    Attributes:
        k_c: Pairwise scale K_C
        theta: Pairwise bandwidth θ
        eps_prob: Probability floor for classes without evidence
    """
    k_c: float = 15.0
    theta: float = 0.5
    eps_prob: float = 1e-6

    def __post_init__(self) -> None:
        if self.k_c <= 0 or self.theta <= 0:
            raise ValueError(f"Invalid energy params: K_C={self.k_c}, theta={self.theta} must be positive")
        if not 0.0 < self.eps_prob < 1.0:
            raise ValueError(f"Invalid energy params: eps_prob={self.eps_prob}")


@dataclass(frozen=True, slots=True)
class EnergyProblem:
    """
    Energy over the superpoints that carry semantic evidence.

    Attributes:
        confidences: Superpoint -> class -> P_ν^C (only superpoints with evidence)
        edge_totals: (a, b) -> Σ_C P_ε^C over edges with a positive total
        candidates: Superpoint -> classes it may take (evidence classes plus C_0)
        pinned: Superpoints without evidence, fixed to C_0
        params: K_C, θ and the probability floor
    """
    confidences: Mapping[SuperpointLabel, Mapping[ClassId, float]]
    edge_totals: Mapping[EdgeKey, float]
    candidates: Mapping[SuperpointLabel, tuple[ClassId, ...]]
    pinned: frozenset[SuperpointLabel] = frozenset()
    params: EnergyParams = field(default_factory=EnergyParams)

    @classmethod
    def from_confidences(
        cls,
        confidences: Mapping[SuperpointLabel, Mapping[ClassId, float]],
        edge_totals: Mapping[EdgeKey, float],
        params: EnergyParams | None = None,
    ) -> "EnergyProblem":
        nodes: dict[SuperpointLabel, dict[ClassId, float]] = {}
        pinned: set[SuperpointLabel] = set()
        for label, conf in confidences.items():
            positive = {c: float(v) for c, v in conf.items() if v > 0}
            if positive:
                nodes[label] = positive
            else:
                pinned.add(label)
        edges = {
            (min(a, b), max(a, b)): float(total)
            for (a, b), total in edge_totals.items()
            if total > 0 and a in nodes and b in nodes and a != b
        }
        candidates = {label: tuple(sorted(set(conf) | {BACKGROUND_CLASS})) for label, conf in nodes.items()}
        return cls(nodes, edges, candidates, frozenset(pinned), params or EnergyParams())

    @classmethod
    def from_graph(cls, graph: SuperpointGraph, params: EnergyParams | None = None) -> "EnergyProblem":
        confidences = {label: graph.node_confidence(label) for label in graph.vertices}
        edges = {key: sum(conf.values()) for key, conf in graph.edges()}
        return cls.from_confidences(confidences, edges, params)

    @property
    def nodes(self) -> list[SuperpointLabel]:
        return sorted(self.confidences)

    @property
    def classes(self) -> list[ClassId]:
        return sorted({c for cands in self.candidates.values() for c in cands})

    def neighbours(self) -> dict[SuperpointLabel, list[SuperpointLabel]]:
        adjacency: dict[SuperpointLabel, list[SuperpointLabel]] = {label: [] for label in self.confidences}
        for a, b in sorted(self.edge_totals):
            adjacency[a].append(b)
            adjacency[b].append(a)
        return adjacency

    def initial_labeling(self) -> Labeling:
        """Argmax guess: most confident class per node, smallest class on ties; pinned nodes at C_0"""
        labeling = {label: min(conf, key=lambda c: (-conf[c], c)) for label, conf in self.confidences.items()}
        labeling.update({label: BACKGROUND_CLASS for label in self.pinned})
        return labeling


def probability(problem: EnergyProblem, label: SuperpointLabel, category: ClassId) -> float:
    """P_ν^c / Σ_C P_ν^C"""
    conf = problem.confidences.get(label)
    total = sum(conf.values()) if conf else 0.0
    if total <= 0:
        raise ZeroEvidenceError(f"Superpoint {label} has no semantic evidence")
    return conf.get(category, 0.0) / total if conf else 0.0


def unary_potential(problem: EnergyProblem, label: SuperpointLabel, category: ClassId) -> float:
    """
    ψ_u = -ln(P_ν^c / Σ_C P_ν^C), or -ln(eps_prob) for a class without evidence.

    Raises:
        ZeroEvidenceError: If the superpoint carries no evidence at all
    """
    p = probability(problem, label, category)
    if p <= 0:
        return -math.log(problem.params.eps_prob)
    return -math.log(p)


def binary_potential(
    problem: EnergyProblem, a: SuperpointLabel, b: SuperpointLabel, class_a: ClassId, class_b: ClassId
) -> float:
    """
    ψ_p = K_C exp(-k / (2θ²)) with k = P_ν^{c_a}(a) P_ν^{c_b}(b) / Σ_C P_ε^C(a, b).

    Zero when both classes agree or the pair has no edge confidence.
    """
    if class_a == class_b:
        return 0.0
    total = problem.edge_totals.get((min(a, b), max(a, b)), 0.0)
    if total <= 0:
        return 0.0
    p_a = problem.confidences.get(a, {}).get(class_a, 0.0)
    p_b = problem.confidences.get(b, {}).get(class_b, 0.0)
    k = p_a * p_b / total
    theta = problem.params.theta
    return problem.params.k_c * math.exp(-k / (2.0 * theta * theta))


def total_energy(problem: EnergyProblem, labeling: Mapping[SuperpointLabel, ClassId]) -> float:
    """
    Sum of unaries over nodes with evidence plus pairwise terms over edges.

    Raises:
        KeyError: If the labeling misses a node
    """
    energy = sum(unary_potential(problem, label, labeling[label]) for label in problem.confidences)
    for a, b in problem.edge_totals:
        energy += binary_potential(problem, a, b, labeling[a], labeling[b])
    return energy


def check_semi_metric(problem: EnergyProblem, tolerance: float = 1e-12) -> None:
    """
    Assert ψ_p(c, c) = 0, ψ_p ≥ 0 and symmetry under swapping the endpoints with
    their classes, for every edge and every pair of candidate classes.

    Raises:
        SemiMetricError: On the first violation
    """
    for a, b in problem.edge_totals:
        for ca in problem.candidates[a]:
            for cb in problem.candidates[b]:
                forward = binary_potential(problem, a, b, ca, cb)
                backward = binary_potential(problem, b, a, cb, ca)
                if forward < 0:
                    raise SemiMetricError(f"Negative pairwise term on edge ({a}, {b}) for ({ca}, {cb})")
                if ca == cb and forward != 0:
                    raise SemiMetricError(f"Pairwise term on edge ({a}, {b}) nonzero for equal classes {ca}")
                if abs(forward - backward) > tolerance * max(1.0, abs(forward)):
                    raise SemiMetricError(f"Pairwise term on edge ({a}, {b}) not symmetric for ({ca}, {cb})")


@dataclass(frozen=True, slots=True)
class SwapResult:
    """
    Attributes:
        labeling: Optimized class per superpoint, pinned nodes included
        energy: Final energy
        initial_energy: Energy of the starting labeling
        sweeps: Full sweeps over class pairs
        moves: Accepted swap moves
        trace: Energy after every accepted move, starting with the initial energy
    """
    labeling: Labeling
    energy: float
    initial_energy: float
    sweeps: int
    moves: int
    trace: tuple[float, ...]


def _swap_move(
    problem: EnergyProblem,
    labeling: Labeling,
    alpha: ClassId,
    beta: ClassId,
    adjacency: dict[SuperpointLabel, list[SuperpointLabel]],
) -> Labeling | None:
    """Optimal relabeling of the α/β nodes by one min-cut; None when no node can move"""
    movable = [
        label for label in sorted(problem.confidences)
        if labeling[label] in (alpha, beta) and alpha in problem.candidates[label] and beta in problem.candidates[label]
    ]
    if not movable:
        return None
    inside = set(movable)
    network = FlowNetwork(_SOURCE, _SINK)
    for p in movable:
        cost_alpha = unary_potential(problem, p, alpha)
        cost_beta = unary_potential(problem, p, beta)
        for q in adjacency[p]:
            if q in inside:
                continue
            cost_alpha += binary_potential(problem, p, q, alpha, labeling[q])
            cost_beta += binary_potential(problem, p, q, beta, labeling[q])
        # Source side takes α: cutting p->t pays the α cost, s->p the β cost
        network.add_edge(_SOURCE, p, cost_beta)
        network.add_edge(p, _SINK, cost_alpha)
    for p in movable:
        for q in adjacency[p]:
            if q in inside and p < q:
                network.add_edge(p, q, binary_potential(problem, p, q, alpha, beta))
                network.add_edge(q, p, binary_potential(problem, p, q, beta, alpha))
    cut = max_flow_min_cut(network)
    proposal = dict(labeling)
    for p in movable:
        proposal[p] = alpha if p in cut.source_side else beta
    return proposal


def alpha_beta_swap(
    problem: EnergyProblem, initial: Labeling | None = None, max_sweeps: int = 100
) -> SwapResult:
    """
    Minimize the energy with α-β swap moves.

    Every class pair is tried in order; a move is kept only when it strictly lowers the
    energy. Sweeps repeat until one full sweep changes nothing.

    Args:
        problem: Energy problem
        initial: Starting labeling, the argmax guess when None
        max_sweeps: Safety bound on full sweeps

    Raises:
        SemiMetricError: If the pairwise term is not semi-metric
    """
    check_semi_metric(problem)
    labeling = dict(problem.initial_labeling() if initial is None else initial)
    for label in problem.pinned:
        labeling[label] = BACKGROUND_CLASS
    energy = total_energy(problem, labeling)
    initial_energy = energy
    trace = [energy]
    adjacency = problem.neighbours()
    pairs = list(combinations(problem.classes, 2))
    sweeps = moves = 0

    while sweeps < max_sweeps:
        sweeps += 1
        improved = False
        for alpha, beta in pairs:
            proposal = _swap_move(problem, labeling, alpha, beta, adjacency)
            if proposal is None:
                continue
            candidate = total_energy(problem, proposal)
            if candidate < energy - _DECREASE_TOL * max(1.0, abs(energy)):
                labeling, energy = proposal, candidate
                trace.append(energy)
                moves += 1
                improved = True
        if not improved:
            break

    logger.debug(
        f"Swap finished: {len(problem.confidences)} nodes, {len(problem.edge_totals)} edges, "
        f"energy {initial_energy:.4f} -> {energy:.4f} in {sweeps} sweeps, {moves} moves"
    )
    return SwapResult(labeling, energy, initial_energy, sweeps, moves, tuple(trace))


def regularize(graph: SuperpointGraph, params: EnergyParams | None = None) -> SwapResult:
    """Build the energy from a graph snapshot and minimize it"""
    return alpha_beta_swap(EnergyProblem.from_graph(graph, params))
