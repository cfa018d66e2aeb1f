"""
Tests for the labeling energy and the alpha-beta swap solver
"""

import math
from itertools import combinations, product

import numpy as np
import pytest

from superpoint_mapper.errors import SemiMetricError, ZeroEvidenceError
from superpoint_mapper.graph import SuperpointGraph
from superpoint_mapper.regularizer import (
    EnergyParams,
    EnergyProblem,
    alpha_beta_swap,
    binary_potential,
    check_semi_metric,
    regularize,
    total_energy,
    unary_potential,
)


def _random_problem(seed: int, nodes: int = 6, classes: tuple[int, ...] = (1, 3, 4)) -> EnergyProblem:
    rng = np.random.default_rng(seed)
    confidences = {}
    for label in range(1, nodes + 1):
        chosen = rng.choice(classes, size=rng.integers(1, len(classes) + 1), replace=False)
        confidences[label] = {int(c): float(rng.uniform(0.1, 3.0)) for c in chosen}
    edges = {
        (a, b): float(rng.uniform(0.1, 4.0))
        for a, b in combinations(range(1, nodes + 1), 2)
        if rng.random() < 0.5
    }
    return EnergyProblem.from_confidences(confidences, edges, EnergyParams(k_c=5.0, theta=0.5))


class TestPotentials:
    """Test unary and pairwise terms"""

    def test_unary_three_quarters(self):
        """Test -ln(0.75) for a class holding three quarters of the evidence"""
        problem = EnergyProblem.from_confidences({1: {3: 3.0, 4: 1.0}}, {})
        assert unary_potential(problem, 1, 3) == pytest.approx(-math.log(0.75), abs=1e-9)
        assert unary_potential(problem, 1, 3) == pytest.approx(0.28768, abs=1e-5)

    def test_unary_floor_for_missing_class(self):
        """Test a class without evidence costs -ln(eps)"""
        problem = EnergyProblem.from_confidences({1: {3: 1.0}}, {}, EnergyParams(eps_prob=1e-6))
        assert unary_potential(problem, 1, 0) == pytest.approx(-math.log(1e-6))
        assert unary_potential(problem, 1, 3) == 0.0

    def test_unary_without_evidence(self):
        """Test a superpoint with no evidence raises ZeroEvidenceError"""
        problem = EnergyProblem.from_confidences({1: {3: 1.0}}, {})
        with pytest.raises(ZeroEvidenceError):
            unary_potential(problem, 2, 3)

    def test_binary_at_documented_point(self):
        """Test K_C = 15, theta = 0.5, k = 0.5 gives 15 / e"""
        problem = EnergyProblem.from_confidences({1: {3: 1.0}, 2: {4: 1.0}}, {(1, 2): 2.0})
        assert binary_potential(problem, 1, 2, 3, 4) == pytest.approx(15.0 * math.exp(-1.0), abs=1e-9)
        assert binary_potential(problem, 1, 2, 3, 4) == pytest.approx(5.51819, abs=1e-5)

    def test_binary_zero_for_equal_classes(self):
        """Test agreeing labels cost nothing"""
        problem = EnergyProblem.from_confidences({1: {3: 1.0}, 2: {3: 1.0}}, {(1, 2): 2.0})
        assert binary_potential(problem, 1, 2, 3, 3) == 0.0

    def test_binary_missing_class_is_full_penalty(self):
        """Test a class without evidence on either side costs K_C"""
        problem = EnergyProblem.from_confidences({1: {3: 1.0}, 2: {4: 1.0}}, {(1, 2): 2.0})
        assert binary_potential(problem, 1, 2, 0, 4) == pytest.approx(15.0)

    def test_semi_metric_holds(self):
        """Test generated problems pass the semi-metric check"""
        for seed in range(5):
            check_semi_metric(_random_problem(seed))

    def test_invalid_params(self):
        """Test non-positive K_C raises ValueError"""
        with pytest.raises(ValueError, match="K_C"):
            EnergyParams(k_c=0.0)


class TestEnergyProblem:
    """Test building the problem from a graph"""

    def test_pinned_and_candidates(self, chain_graph):
        """Test evidence-free superpoints are pinned to C_0"""
        chain_graph.add_vertex(9)
        chain_graph.add_node_confidence(2, 4, 0.5)
        problem = EnergyProblem.from_graph(chain_graph)
        assert problem.pinned == frozenset({9})
        assert problem.nodes == [1, 2, 3, 4]
        assert problem.candidates[2] == (0, 3, 4)
        assert problem.candidates[1] == (0, 3)
        assert problem.edge_totals[(2, 3)] == pytest.approx(0.1)

    def test_initial_labeling(self, chain_graph):
        """Test the argmax guess breaks ties toward the smaller class"""
        chain_graph.add_node_confidence(1, 4, 1.0)
        chain_graph.add_vertex(9)
        labeling = EnergyProblem.from_graph(chain_graph).initial_labeling()
        assert labeling == {1: 3, 2: 3, 3: 3, 4: 3, 9: 0}

    def test_negative_pairwise_rejected(self, mocker):
        """Test the solver refuses a pairwise term below zero"""
        problem = EnergyProblem.from_confidences({1: {3: 1.0}, 2: {4: 1.0}}, {(1, 2): 1.0})
        mocker.patch("superpoint_mapper.regularizer.binary_potential", return_value=-1.0)
        with pytest.raises(SemiMetricError, match="Negative pairwise"):
            alpha_beta_swap(problem)


class TestAlphaBetaSwap:
    """Test the swap solver"""

    def test_isolated_nodes_keep_argmax(self):
        """Test nodes without edges end at their most confident class"""
        problem = EnergyProblem.from_confidences({1: {3: 2.0, 4: 1.0}, 2: {4: 5.0}}, {})
        result = alpha_beta_swap(problem)
        assert result.labeling == {1: 3, 2: 4}
        assert result.moves == 0
        assert result.energy == pytest.approx(result.initial_energy)

    def test_weak_node_follows_strong_neighbours(self):
        """Test a weakly confident node between two confident ones is relabeled"""
        confidences = {1: {3: 10.0}, 2: {4: 1.05, 3: 1.0}, 3: {3: 10.0}}
        problem = EnergyProblem.from_confidences(confidences, {(1, 2): 50.0, (2, 3): 50.0})
        result = alpha_beta_swap(problem)
        assert problem.initial_labeling()[2] == 4
        assert result.labeling == {1: 3, 2: 3, 3: 3}
        assert result.energy < result.initial_energy
        assert result.moves >= 1

    @pytest.mark.parametrize("seed", range(8))
    def test_trace_strictly_decreases(self, seed):
        """Test every accepted move lowers the energy"""
        result = alpha_beta_swap(_random_problem(seed))
        assert all(b < a for a, b in zip(result.trace, result.trace[1:], strict=False))
        assert result.trace[0] == pytest.approx(result.initial_energy)
        assert result.trace[-1] == pytest.approx(result.energy)

    @pytest.mark.parametrize("seed", range(8))
    def test_no_swap_move_improves(self, seed):
        """Test the result is optimal over every alpha-beta relabeling"""
        problem = _random_problem(seed)
        result = alpha_beta_swap(problem)
        assert total_energy(problem, result.labeling) == pytest.approx(result.energy)
        for alpha, beta in combinations(problem.classes, 2):
            movable = [
                label for label in problem.nodes
                if result.labeling[label] in (alpha, beta)
                and alpha in problem.candidates[label] and beta in problem.candidates[label]
            ]
            for choice in product((alpha, beta), repeat=len(movable)):
                labeling = dict(result.labeling)
                labeling.update(zip(movable, choice, strict=True))
                assert total_energy(problem, labeling) >= result.energy - 1e-9

    def test_two_class_global_optimum(self):
        """Test a two-class chain reaches the brute-force minimum"""
        confidences = {1: {3: 2.0, 4: 1.0}, 2: {3: 1.0, 4: 1.2}, 3: {3: 0.9, 4: 1.0}, 4: {4: 3.0}}
        edges = {(1, 2): 3.0, (2, 3): 3.0, (3, 4): 0.5}
        problem = EnergyProblem.from_confidences(confidences, edges)
        result = alpha_beta_swap(problem)
        best = min(
            total_energy(problem, dict(zip(problem.nodes, choice, strict=True)))
            for choice in product((0, 3, 4), repeat=4)
        )
        assert result.energy == pytest.approx(best)

    def test_pinned_nodes_stay_background(self, chain_graph):
        """Test evidence-free superpoints keep C_0"""
        chain_graph.add_vertex(9)
        result = regularize(chain_graph)
        assert result.labeling[9] == 0
        assert all(result.labeling[label] == 3 for label in (1, 2, 3, 4))

    def test_max_sweeps_bound(self):
        """Test the solver stops after max_sweeps"""
        result = alpha_beta_swap(_random_problem(3), max_sweeps=1)
        assert result.sweeps == 1


def _exhaustive_minimum(problem: EnergyProblem) -> tuple[float, int]:
    """Lowest total energy over every candidate labeling, and the number of labelings scored"""
    nodes = problem.nodes
    options = [problem.candidates[label] for label in nodes]
    grid = np.indices([len(o) for o in options]).reshape(len(nodes), -1)
    energy = np.zeros(grid.shape[1])
    for i, label in enumerate(nodes):
        unary = np.array([unary_potential(problem, label, c) for c in options[i]])
        energy += unary[grid[i]]
    index = {label: i for i, label in enumerate(nodes)}
    for a, b in problem.edge_totals:
        i, j = index[a], index[b]
        pairwise = np.array([[binary_potential(problem, a, b, ca, cb) for cb in options[j]] for ca in options[i]])
        energy += pairwise[grid[i], grid[j]]
    return float(energy.min()), int(grid.shape[1])


class TestExhaustiveOracle:
    """Compare the swap solver with brute force on small seeded problems"""

    def test_matches_exhaustive_minimum(self):
        """Test 500 problems: energy never rises, and the global minimum is reached on at least 95%"""
        optimal = 0
        for seed in range(500):
            problem = _random_problem(seed, nodes=2 + seed % 8, classes=(3, 4))
            result = alpha_beta_swap(problem)
            best, evaluations = _exhaustive_minimum(problem)
            assert evaluations <= 3**9
            assert result.energy <= result.initial_energy + 1e-9
            assert all(b < a for a, b in zip(result.trace, result.trace[1:], strict=False))
            assert result.energy >= best - 1e-9
            if result.energy <= best + 1e-9:
                optimal += 1
        assert optimal >= 475
