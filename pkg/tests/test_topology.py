import math
import re

import numpy as np
import pytest

from oppnet.errors import (ContractError, GraphmlParseError, IngestError,
                           ParameterError)
from oppnet.topology import (ChannelMatrix, FlowSpec, Topology,
                             channel_from_distance, generate_knn, load_graphml,
                             perturb, save_graphml, topology_from_json,
                             uniform_flows)

from conftest import ZOO_FILES


def line_topology(distance=0.5, capacity=10.0):
    return Topology(positions=np.array([[0.0, 0.0], [distance, 0.0]]),
                    edges=[(0, 1), (1, 0)], capacity=np.full(2, capacity))


class TestGenerateKnn:
    def test_out_degree_at_least_k_after_symmetrization(self):
        topo = generate_knn(10, 4, seed=7)
        out_degree = np.zeros(10, dtype=int)
        for i, _ in topo.edges:
            out_degree[i] += 1
        assert np.all(out_degree >= 4)

    def test_single_node_no_edges(self):
        topo = generate_knn(1, 0, seed=0)
        assert topo.n == 1
        assert topo.edges == ()

    def test_k_equals_n_minus_1_gives_complete_digraph(self):
        topo = generate_knn(5, 4, seed=3)
        assert len(topo.edges) == 20

    def test_k_ge_n_rejected(self):
        with pytest.raises(ParameterError):
            generate_knn(4, 4, seed=0)
        with pytest.raises(ParameterError):
            generate_knn(0, 0, seed=0)

    def test_positions_inside_unit_circle(self):
        topo = generate_knn(50, 4, seed=11)
        assert np.all(np.linalg.norm(topo.positions, axis=1) <= 1.0 + 1e-12)

    def test_symmetry(self):
        topo = generate_knn(20, 3, seed=5)
        edge_set = set(topo.edges)
        assert all((j, i) in edge_set for i, j in edge_set)

    def test_determinism(self):
        a = generate_knn(15, 4, seed=42)
        b = generate_knn(15, 4, seed=42)
        assert np.array_equal(a.positions, b.positions)
        assert a.edges == b.edges
        assert np.array_equal(a.capacity, b.capacity)

    def test_default_capacity(self):
        topo = generate_knn(4, 2, seed=0)
        assert np.all(topo.capacity == 100.0)


class TestChannelFromDistance:
    def test_zero_distance_gives_probability_one(self):
        topo = line_topology(distance=0.0)
        channel = channel_from_distance(topo, d_c=1.0)
        assert channel.probs[0, 1] == 1.0

    def test_cutoff_distance_gives_zero(self):
        topo = line_topology(distance=1.0)
        channel = channel_from_distance(topo, d_c=1.0)
        assert channel.probs[0, 1] == 0.0

    def test_half_cutoff_gives_half(self):
        topo = line_topology(distance=0.5)
        channel = channel_from_distance(topo, d_c=1.0)
        assert channel.probs[0, 1] == pytest.approx(0.5)

    def test_non_edges_are_zero_and_diagonal_zero(self):
        topo = generate_knn(12, 3, seed=1)
        channel = channel_from_distance(topo)
        adj = topo.adjacency()
        assert np.all(channel.probs[~adj] == 0.0)
        assert np.all(np.diag(channel.probs) == 0.0)

    def test_monotone_in_distance(self):
        topo = generate_knn(15, 4, seed=9)
        channel = channel_from_distance(topo, d_c=2.0)
        diff = topo.positions[:, None, :] - topo.positions[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        pairs = [(i, j) for i, j in topo.edges]
        for i, j in pairs:
            for p, q in pairs:
                if dist[i, j] <= dist[p, q]:
                    assert channel.probs[i, j] >= channel.probs[p, q] - 1e-12

    def test_invalid_cutoff_rejected(self):
        topo = line_topology()
        for bad in (0.0, -1.0):
            with pytest.raises(ParameterError):
                channel_from_distance(topo, d_c=bad)


class TestPerturb:
    def test_fraction_zero_identical(self):
        topo = generate_knn(12, 4, seed=2)
        moved = perturb(topo, fraction=0.0, magnitude=0.2, seed=3)
        assert np.array_equal(moved.positions, topo.positions)
        assert moved.edges == topo.edges

    def test_half_fraction_moves_exactly_ceil_half(self):
        topo = generate_knn(11, 4, seed=2)
        moved = perturb(topo, fraction=0.5, magnitude=0.2, seed=3)
        changed = np.any(moved.positions != topo.positions, axis=1)
        assert changed.sum() == math.ceil(11 / 2)

    def test_zero_magnitude_changes_nothing(self):
        topo = generate_knn(10, 4, seed=2)
        moved = perturb(topo, fraction=1.0, magnitude=0.0, seed=3)
        assert np.array_equal(moved.positions, topo.positions)
        assert moved.edges == topo.edges

    def test_displacement_scales_with_radius(self):
        topo = generate_knn(10, 4, seed=4)
        moved = perturb(topo, fraction=1.0, magnitude=0.2, seed=5)
        radius = np.linalg.norm(topo.positions, axis=1)
        shift = np.linalg.norm(moved.positions - topo.positions, axis=1)
        assert shift == pytest.approx(0.2 * radius)

    def test_requires_knn_metadata(self):
        topo = line_topology()
        with pytest.raises(ParameterError):
            perturb(topo, fraction=0.5, magnitude=0.2, seed=0)

    def test_parameter_validation(self):
        topo = generate_knn(5, 2, seed=0)
        with pytest.raises(ParameterError):
            perturb(topo, fraction=1.5, magnitude=0.2, seed=0)
        with pytest.raises(ParameterError):
            perturb(topo, fraction=0.5, magnitude=-0.1, seed=0)


class TestTopologyInvariants:
    def test_self_loop_rejected(self):
        with pytest.raises(ContractError):
            Topology(positions=np.zeros((2, 2)), edges=[(0, 0)],
                     capacity=np.ones(2))

    def test_unknown_endpoint_rejected(self):
        with pytest.raises(ContractError):
            Topology(positions=np.zeros((2, 2)), edges=[(0, 5)],
                     capacity=np.ones(2))

    def test_negative_capacity_rejected(self):
        with pytest.raises(ContractError):
            Topology(positions=np.zeros((2, 2)), edges=[],
                     capacity=np.array([1.0, -1.0]))

    def test_json_round_trip(self):
        topo = generate_knn(8, 3, seed=6)
        back = topology_from_json(topo.to_json())
        assert np.array_equal(back.positions, topo.positions)
        assert back.edges == topo.edges
        assert np.array_equal(back.capacity, topo.capacity)
        assert back.knn_k == topo.knn_k


class TestFlowSpec:
    def test_destination_mean_must_be_zero(self):
        with pytest.raises(ContractError):
            FlowSpec(destination=(0,), arrival_mean=np.ones((3, 1)))

    def test_invalid_destination_rejected(self):
        with pytest.raises(ContractError):
            FlowSpec(destination=(9,), arrival_mean=np.zeros((3, 1)))

    def test_uniform_flows_scalar_and_range(self):
        topo = generate_knn(6, 2, seed=0)
        spec = uniform_flows(topo, 2, 1.5, seed=1)
        assert spec.arrival_mean[~spec.destination_mask()].min() == 1.5
        ranged = uniform_flows(topo, 2, (0.5, 2.5), seed=1)
        body = ranged.arrival_mean[~ranged.destination_mask()]
        assert np.all((body >= 0.5) & (body <= 2.5))
        assert len(np.unique(body)) > 1

    def test_distinct_destinations_by_default(self):
        topo = generate_knn(8, 2, seed=0)
        spec = uniform_flows(topo, 4, 1.0, seed=5)
        assert len(set(spec.destination)) == 4


class TestGraphml:
    def test_node_count_matches_xml_element_count(self, zoo_dir):
        for name in ZOO_FILES:
            path = zoo_dir / f"{name}.graphml"
            text = path.read_text()
            expected_nodes = len(re.findall(r"<node ", text))
            expected_edges = len(re.findall(r"<edge ", text))
            topo, channel = load_graphml(path)
            assert topo.n == expected_nodes
            assert len(topo.edges) == 2 * expected_edges  # symmetrized
            assert channel.n == expected_nodes

    def test_single_node_no_edges(self, tmp_path):
        doc = """<?xml version="1.0"?>
<graphml xmlns="http://graphml.graphdrawing.org/xmlns">
  <key attr.name="Latitude" for="node" id="d0"/>
  <key attr.name="Longitude" for="node" id="d1"/>
  <graph id="one" edgedefault="undirected">
    <node id="a"><data key="d0">1.0</data><data key="d1">2.0</data></node>
  </graph>
</graphml>"""
        path = tmp_path / "one.graphml"
        path.write_text(doc)
        topo, channel = load_graphml(path)
        assert topo.n == 1
        assert topo.edges == ()
        assert channel.probs.shape == (1, 1)
        assert topo.positions[0] == pytest.approx([0.5, 0.5])

    def test_duplicate_edges_deduped(self, tmp_path):
        doc = """<?xml version="1.0"?>
<graphml xmlns="http://graphml.graphdrawing.org/xmlns">
  <key attr.name="x" for="node" id="d0"/>
  <key attr.name="y" for="node" id="d1"/>
  <graph id="dup" edgedefault="undirected">
    <node id="a"><data key="d0">0</data><data key="d1">0</data></node>
    <node id="b"><data key="d0">1</data><data key="d1">1</data></node>
    <edge source="a" target="b"/>
    <edge source="a" target="b"/>
  </graph>
</graphml>"""
        path = tmp_path / "dup.graphml"
        path.write_text(doc)
        topo, _ = load_graphml(path)
        # Dedupe oracle: the set of pairs has one undirected link.
        assert set(topo.edges) == {(0, 1), (1, 0)}

    def test_missing_coordinates_names_the_node(self, tmp_path):
        doc = """<?xml version="1.0"?>
<graphml xmlns="http://graphml.graphdrawing.org/xmlns">
  <key attr.name="Latitude" for="node" id="d0"/>
  <key attr.name="Longitude" for="node" id="d1"/>
  <graph id="bad" edgedefault="undirected">
    <node id="lost"><data key="d0">3.5</data></node>
  </graph>
</graphml>"""
        path = tmp_path / "bad.graphml"
        path.write_text(doc)
        with pytest.raises(IngestError, match="lost"):
            load_graphml(path)

    def test_malformed_xml_reports_line(self, tmp_path):
        path = tmp_path / "broken.graphml"
        path.write_text("<graphml>\n<graph>\n<node id='x'>\n</graphml>")
        with pytest.raises(GraphmlParseError) as err:
            load_graphml(path)
        assert err.value.line is not None
        assert str(err.value.line) in str(err.value)

    def test_save_load_round_trip(self, tmp_path, zoo_dir):
        topo, _ = load_graphml(zoo_dir / "abilene.graphml")
        out = tmp_path / "roundtrip.graphml"
        save_graphml(topo, out)
        back, _ = load_graphml(out)
        assert back.n == topo.n
        assert back.edges == topo.edges
        assert np.allclose(back.positions, topo.positions, atol=1e-9)


class TestChannelMatrixInvariants:
    def test_out_of_range_rejected(self):
        with pytest.raises(ContractError):
            ChannelMatrix(probs=np.array([[0.0, 1.5], [0.2, 0.0]]))

    def test_nonzero_diagonal_rejected(self):
        with pytest.raises(ContractError):
            ChannelMatrix(probs=np.array([[0.5, 0.2], [0.2, 0.0]]))
