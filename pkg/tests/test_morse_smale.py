import itertools

import numpy as np
import pytest

from lipdyn.errors import NodeCountMismatch
from lipdyn.models import cubic_map, planar_gradient_map
from lipdyn.morse_smale import (
    build_connection_graph,
    check_ball_disjointness,
    check_geometric_equivalence,
    delete_edge,
    find_cycle,
    grow_unstable_set,
    hausdorff,
    make_node,
    simple_cycles_bruteforce,
    topological_order,
    transitive_gaps,
)


def _random_digraphs(n_graphs=300, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_graphs):
        n = int(rng.integers(1, 9))
        ids = [f"n{k}" for k in range(n)]
        p = rng.uniform(0.05, 0.4)
        edges = [(i, j) for i, j in itertools.product(ids, ids) if i != j and rng.uniform() < p]
        yield ids, edges


def test_dfs_cycle_detection_agrees_with_bruteforce():
    for ids, edges in _random_digraphs():
        cycle = find_cycle(ids, edges)
        brute = simple_cycles_bruteforce(ids, edges)
        assert (cycle is not None) == bool(brute)
        if cycle is not None:
            assert cycle[0] == cycle[-1]
            assert all((a, b) in set(edges) for a, b in zip(cycle, cycle[1:]))


def test_topological_order_respects_edges():
    for ids, edges in _random_digraphs(seed=1):
        order = topological_order(ids, edges)
        if find_cycle(ids, edges) is not None:
            assert order is None
            continue
        pos = {v: k for k, v in enumerate(order)}
        assert all(pos[i] < pos[j] for i, j in edges)


def test_transitive_gaps():
    assert transitive_gaps([("a", "b"), ("b", "c")]) == [("a", "c")]
    assert transitive_gaps([("a", "b"), ("b", "c"), ("a", "c")]) == []


def test_hausdorff_against_direct_computation():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(50, 2)), rng.normal(size=(70, 2))
    d = np.linalg.norm(a[:, None] - b[None], axis=-1)
    assert hausdorff(a, b) == pytest.approx(max(d.min(1).max(), d.min(0).max()), abs=1e-14)


def test_planar_unstable_cloud_matches_segment():
    model = planar_gradient_map()
    node = make_node(model, "0", [0.0, 0.0], 0.01)
    out = grow_unstable_set(model, node)
    cloud = np.vstack(out["clouds"])
    x = np.linspace(-1.0, 1.0, 20001)
    assert hausdorff(cloud, np.column_stack([x, 0 * x])) <= 1e-3
    assert out["flags"][-1] == "chart"


def test_growth_iterations_capped():
    model = planar_gradient_map()
    node = make_node(model, "0", [0.0, 0.0], 0.01)
    with pytest.raises(ValueError):
        grow_unstable_set(model, node, n_iterations=31)


@pytest.fixture(scope="module")
def cubic_graph():
    model = cubic_map(h=0.4)
    nodes = [make_node(model, i, [x], 0.02) for i, x in (("0", 0.0), ("+1", 1.0), ("-1", -1.0))]
    return model, nodes, build_connection_graph(model, nodes)


def test_cubic_connection_graph(cubic_graph):
    _, nodes, g = cubic_graph
    assert g.edge_set() == {("0", "+1"), ("0", "-1")}
    assert g.dg_flag and g.transitive_closure_ok and g.order_ok
    assert g.topological_order[0] == "0"
    assert all(w.transversal is not None for _, _, w in g.edges)
    assert check_ball_disjointness(nodes) == []


def test_witness_resimulation_is_deterministic(cubic_graph):
    model, _, g = cubic_graph
    for _, _, w in g.edges:
        assert w.residual(model) <= 1e-9
        assert w.entry_index < 200


def test_edge_deleted_equivalence_names_discrepancy(cubic_graph):
    _, _, g = cubic_graph
    same, disc = check_geometric_equivalence(g, g)
    assert same and disc == []
    same, disc = check_geometric_equivalence(g, delete_edge(g, "0", "+1"))
    assert not same and disc == [("0", "+1", "A-only")]


def test_equivalence_needs_equal_node_counts(cubic_graph):
    model, nodes, g = cubic_graph
    small = build_connection_graph(model, nodes[:2])
    with pytest.raises(NodeCountMismatch):
        check_geometric_equivalence(g, small)


def test_dot_output_marks_transversal_edges(cubic_graph):
    _, _, g = cubic_graph
    dot = g.to_dot()
    assert dot.startswith("digraph")
    assert '"0" -> "+1"' in dot
