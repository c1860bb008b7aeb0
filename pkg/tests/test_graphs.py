import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distsa import graphs as G


def pair(*arcs):
    return G.DirectedGraph.from_arcs(2, arcs)


def test_self_arcs_required():
    with pytest.raises(G.GraphError):
        G.DirectedGraph(2, frozenset({(1, 1), (1, 2)}))
    with pytest.raises(G.GraphError):
        G.DirectedGraph.from_arcs(2, [(1, 3)])


def test_adjacency_orientation():
    g = pair((1, 2))
    adj = g.adjacency()
    # arc (j, i) = (1, 2): agent 1 is an in-neighbor of agent 2
    assert adj[1, 0] and not adj[0, 1]
    assert g.in_neighbors(2) == {1, 2}
    assert g.out_neighbors(1) == {1, 2}


def test_graph_at_constant_and_periodic():
    K = G.complete_graph(3)
    assert G.ConstantSchedule(K).graph_at(7) == K
    ga, gb = pair((1, 2)), pair((2, 1))
    seq = G.PeriodicSchedule((ga, gb))
    assert seq.graph_at(3) == gb
    assert seq.graph_at(4) == ga
    with pytest.raises(G.GraphError):
        seq.graph_at(-1)


def test_template_is_deterministic():
    a = G.TemplateSchedule(5, declared_L=2, p_extra=0.3, seed=4)
    b = G.TemplateSchedule(5, declared_L=2, p_extra=0.3, seed=4)
    assert a.graph_at(10) == b.graph_at(10)
    assert a.graph_at(10) == a.graph_at(10)
    # blockwise emission agrees with single-step queries, across a block boundary
    stack = a.adjacency_stack(4090, 4100)
    for k, t in enumerate(range(4090, 4100)):
        assert np.array_equal(stack[k], a.graph_at(t).adjacency())


def test_union_examples():
    u = G.union_graph([pair((1, 2)), pair((2, 1))])
    assert u.arcs == {(1, 1), (2, 2), (1, 2), (2, 1)}
    g = G.ring_graph(4)
    assert G.union_graph([g]) == g
    r1 = G.ring_graph(4)
    r2 = G.DirectedGraph.from_arcs(4, [(1, 3), (3, 2), (2, 4), (4, 1)])
    u = G.union_graph([r1, r2])
    assert u.arcs == r1.arcs | r2.arcs
    with pytest.raises(G.GraphError):
        G.union_graph([G.complete_graph(2), G.complete_graph(3)])


def test_strong_connectivity_examples():
    assert G.is_strongly_connected(G.complete_graph(3))
    assert not G.is_strongly_connected(G.self_loop_graph(2))
    assert G.is_strongly_connected(G.ring_graph(4))
    assert not G.is_strongly_connected(G.path_graph(3, bidirectional=False))


def test_diameter_examples():
    for n in (1, 2, 5):
        assert G.diameter(G.complete_graph(n)) == 1
    assert G.diameter(G.ring_graph(4)) == 3
    assert G.diameter(G.path_graph(3)) == 2
    with pytest.raises(G.GraphError):
        G.diameter(G.self_loop_graph(2))


def test_uniform_connectivity_examples():
    K = G.ConstantSchedule(G.ring_graph(4))
    assert G.verify_uniform_strong_connectivity(K, 1, 10)
    alt = G.PeriodicSchedule((pair((1, 2)), pair((2, 1))))
    assert G.verify_uniform_strong_connectivity(alt, 2, 10)
    assert not G.verify_uniform_strong_connectivity(alt, 1, 10)
    loops = G.ConstantSchedule(G.self_loop_graph(3))
    for L in (1, 3, 7):
        assert not G.verify_uniform_strong_connectivity(loops, L, 20)


def test_delta_max_examples():
    assert G.delta_max(G.ConstantSchedule(G.complete_graph(4)), 1, 5) == 1
    alt = G.PeriodicSchedule((pair((1, 2)), pair((2, 1))))
    assert G.delta_max(alt, 2, 10) == 1
    assert G.delta_max(G.ConstantSchedule(G.ring_graph(4)), 1, 5) == 3
    with pytest.raises(G.GraphError):
        G.delta_max(alt, 1, 10)


def test_switch_schedule_checks_the_transient():
    # a disconnected prefix must be caught even though the tail is fine
    bad = G.SwitchSchedule(G.ConstantSchedule(G.self_loop_graph(3)), G.ConstantSchedule(G.ring_graph(3)), 5)
    assert not G.verify_uniform_strong_connectivity(bad, 1, 100)
    good = G.SwitchSchedule(G.ConstantSchedule(G.ring_graph(3)), G.ConstantSchedule(G.complete_graph(3)), 5)
    assert G.verify_uniform_strong_connectivity(good, 1, 100)
    assert G.delta_max(good, 1, 100) == 2


def test_template_window_union_brute_force():
    seq = G.TemplateSchedule(6, declared_L=3, p_extra=0.05, seed=1)
    adj = seq.adjacency_stack(0, 60)
    for t in range(58):
        u = G.DirectedGraph.from_adjacency(adj[t] | adj[t + 1] | adj[t + 2])
        assert G.is_strongly_connected(u)
    assert G.verify_uniform_strong_connectivity(seq, 3, 60)


def test_dump_edge_list(tmp_path):
    p = G.dump_edge_list(pair((1, 2)), tmp_path / "g.txt")
    assert p.read_text() == "1 1\n1 2\n2 2\n"


def _bfs_oracle(adj):
    n = adj.shape[0]
    for s in range(n):
        seen, frontier = {s}, [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in range(n):
                    if adj[v, u] and v not in seen:
                        seen.add(v)
                        nxt.append(v)
            frontier = nxt
        if len(seen) < n:
            return False
    return True


random_graphs = st.integers(1, 7).flatmap(
    lambda n: st.lists(st.tuples(st.integers(1, n), st.integers(1, n)), max_size=3 * n).map(
        lambda arcs: G.DirectedGraph.from_arcs(n, arcs)
    )
)


@given(random_graphs)
def test_strong_connectivity_matches_bfs(g):
    assert G.is_strongly_connected(g) == _bfs_oracle(g.adjacency())
    if G.is_strongly_connected(g):
        assert 1 <= G.diameter(g) <= max(g.n_agents - 1, 1)


@given(st.lists(random_graphs, min_size=1, max_size=4), st.randoms(use_true_random=False))
def test_union_idempotent_and_order_free(gs, rnd):
    gs = [g for g in gs if g.n_agents == gs[0].n_agents]
    u = G.union_graph(gs)
    shuffled = list(gs)
    rnd.shuffle(shuffled)
    assert G.union_graph(shuffled) == u
    assert G.union_graph([u, u]) == u
    assert G.union_graph(gs + gs) == u


@given(st.integers(2, 6), st.integers(1, 4), st.floats(0, 0.5), st.integers(0, 10_000))
def test_template_self_arcs_and_monotone_window(n, L, p, seed):
    seq = G.TemplateSchedule(n, declared_L=L, p_extra=p, seed=seed)
    adj = seq.adjacency_stack(0, 40)
    assert np.all(np.diagonal(adj, axis1=1, axis2=2))
    assert G.verify_uniform_strong_connectivity(seq, L, 40)
    assert G.verify_uniform_strong_connectivity(seq, L + 1, 40)


def test_self_arcs_on_many_draws():
    seq = G.TemplateSchedule(8, declared_L=2, p_extra=0.4, seed=99)
    adj = seq.adjacency_stack(0, 1000)
    assert np.all(np.diagonal(adj, axis1=1, axis2=2))
