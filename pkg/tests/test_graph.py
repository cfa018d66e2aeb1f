"""
Tests for the superpoint graph and spatial confidence
"""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from superpoint_mapper.errors import MissingVertexError
from superpoint_mapper.graph import (
    InstanceObservation,
    SuperpointGraph,
    spatial_confidence,
    spatial_confidence_from_distance,
    superpoint_distance,
)
from superpoint_mapper.tsdf import LabelTsdfMap


def _row(x_start: int, count: int) -> np.ndarray:
    """Voxel centers of a row of voxels along x at y = 0, z = 0"""
    return np.column_stack([(np.arange(x_start, x_start + count) + 0.5) * 0.01, np.full(count, 0.005), np.full(count, 0.005)])


class TestSpatialConfidence:
    """Test P_spatial"""

    def test_touching_is_one(self):
        """Test distances up to one voxel give full confidence"""
        assert spatial_confidence_from_distance(0.0, 0.01, 0.05) == 1.0
        assert spatial_confidence_from_distance(0.01, 0.01, 0.05) == 1.0

    def test_decay(self):
        """Test one sigma beyond the voxel gives exp(-1)"""
        assert spatial_confidence_from_distance(0.06, 0.01, 0.05) == pytest.approx(math.exp(-1.0))

    def test_distance_between_superpoints(self):
        """Test the coarse-grid distance of two separated rows"""
        tsdf_map = LabelTsdfMap(voxel_size=0.01)
        tsdf_map.cast_votes(_row(0, 4), 1)
        tsdf_map.cast_votes(_row(40, 4), 2)
        # Coarse cells 0 and 10, 0.04 m each, less one cell
        assert superpoint_distance(1, 2, tsdf_map) == pytest.approx(0.36)
        assert spatial_confidence(1, 2, tsdf_map, sigma=0.05) == pytest.approx(math.exp(-(0.36 - 0.01) / 0.05))

    def test_adjacent_superpoints(self):
        """Test neighbouring rows are fully confident"""
        tsdf_map = LabelTsdfMap(voxel_size=0.01)
        tsdf_map.cast_votes(_row(0, 4), 1)
        tsdf_map.cast_votes(_row(4, 4), 2)
        assert superpoint_distance(1, 2, tsdf_map) == pytest.approx(0.0, abs=1e-12)
        assert spatial_confidence(1, 2, tsdf_map) == 1.0

    def test_unknown_superpoint(self):
        """Test a superpoint without voxels has zero confidence"""
        tsdf_map = LabelTsdfMap()
        tsdf_map.cast_votes(_row(0, 4), 1)
        assert math.isinf(superpoint_distance(1, 9, tsdf_map))
        assert spatial_confidence(1, 9, tsdf_map) == 0.0


class TestAccumulate:
    """Test per-frame accumulation"""

    def test_nodes_and_edge(self):
        """Test node mass P_o * N and edge mass P_o * P_spatial * min(N1, N2)"""
        graph = SuperpointGraph()
        added = graph.accumulate_frame([InstanceObservation(1, 3, 0.8, {1: 10, 2: 5})], lambda a, b: 0.5)
        assert added == pytest.approx(12.0)
        assert graph.node_confidence(1) == {3: pytest.approx(8.0)}
        assert graph.node_confidence(2) == {3: pytest.approx(4.0)}
        assert graph.edge_confidence(2, 1) == {3: pytest.approx(2.0)}
        assert graph.neighbours(1) == [2]

    def test_top_hits_only(self):
        """Test only the max_hits most hit superpoints are linked"""
        graph = SuperpointGraph()
        hits = {label: 20 - label for label in range(1, 10)}
        graph.accumulate_frame([InstanceObservation(1, 3, 0.9, hits)], lambda a, b: 1.0, max_hits=8)
        assert len(graph) == 9
        assert graph.edge_count == 28
        assert graph.neighbours(9) == []

    def test_zero_spatial_skips_edge(self):
        """Test far-apart superpoints gain node mass but no edge"""
        graph = SuperpointGraph()
        graph.accumulate_frame([InstanceObservation(1, 4, 0.7, {1: 3, 2: 3})], lambda a, b: 0.0)
        assert graph.edge_count == 0
        assert graph.total_node_mass() == pytest.approx(4.2)

    def test_rejects_bad_updates(self):
        """Test negative confidences and self-edges raise ValueError"""
        graph = SuperpointGraph()
        with pytest.raises(ValueError, match="only accumulate"):
            graph.add_node_confidence(1, 3, -1.0)
        with pytest.raises(ValueError, match="Self-edge"):
            graph.add_edge_confidence(2, 2, 3, 1.0)


class TestInitialSemantic:
    """Test the per-node argmax class"""

    def test_tie_goes_to_smaller_class(self):
        """Test equal evidence picks the smaller class id"""
        graph = SuperpointGraph()
        graph.add_node_confidence(1, 4, 1.0)
        graph.add_node_confidence(1, 3, 1.0)
        assert graph.initial_semantic(1) == 3

    def test_no_evidence_is_background(self):
        """Test a node without evidence is C_0"""
        graph = SuperpointGraph()
        graph.add_vertex(5)
        assert graph.initial_semantic(5) == 0
        assert graph.initial_semantic(99) == 0

    @given(
        evidence=st.dictionaries(st.integers(1, 6), st.integers(0, 50), min_size=1),
        exponent=st.integers(-4, 6),
    )
    def test_scaling_keeps_argmax(self, evidence, exponent):
        """Test scaling every confidence by the same factor keeps the class"""
        plain, scaled = SuperpointGraph(), SuperpointGraph()
        for category, amount in evidence.items():
            plain.add_node_confidence(1, category, float(amount))
            scaled.add_node_confidence(1, category, float(amount) * 2.0**exponent)
        assert scaled.initial_semantic(1) == plain.initial_semantic(1)


class TestFoldVertices:
    """Test merging two vertices"""

    def test_fold_conserves_mass(self, chain_graph):
        """Test node mass is kept and edge mass only loses the self-edge"""
        nodes, edges = chain_graph.total_node_mass(), chain_graph.total_edge_mass()
        dropped = chain_graph.fold_vertices(1, 2)
        assert dropped == pytest.approx(5.0)
        assert chain_graph.total_node_mass() == pytest.approx(nodes)
        assert chain_graph.total_edge_mass() + dropped == pytest.approx(edges)
        assert chain_graph.vertices == [1, 3, 4]
        assert chain_graph.node_confidence(1) == {3: pytest.approx(2.0)}
        assert chain_graph.edge_confidence(1, 3) == {3: pytest.approx(0.1)}
        assert chain_graph.neighbours(3) == [1, 4]

    def test_fold_sums_parallel_edges(self, chain_graph):
        """Test edges to a shared neighbour are summed per class"""
        chain_graph.add_edge_confidence(1, 3, 3, 0.4)
        chain_graph.fold_vertices(1, 2)
        assert chain_graph.edge_confidence(1, 3) == {3: pytest.approx(0.5)}

    def test_missing_vertex(self, chain_graph):
        """Test folding an unknown vertex raises MissingVertexError"""
        with pytest.raises(MissingVertexError):
            chain_graph.fold_vertices(1, 42)


class TestDump:
    """Test the text dump"""

    def test_parse_restores_graph(self, chain_graph):
        """Test parse(dump) reproduces the same dump"""
        text = chain_graph.dump()
        assert text.splitlines()[0] == "v 1 3:1.0"
        assert SuperpointGraph.parse(text).dump() == text

    def test_malformed_line(self):
        """Test an unknown record reports its line"""
        with pytest.raises(ValueError, match="line 2"):
            SuperpointGraph.parse("v 1 3:1.0\nx 1 2\n")

    def test_copy_is_independent(self, chain_graph):
        """Test mutating a copy leaves the original alone"""
        clone = chain_graph.copy()
        clone.fold_vertices(3, 4)
        assert chain_graph.vertices == [1, 2, 3, 4]
        assert clone.vertices == [1, 2, 3]
