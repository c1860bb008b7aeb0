import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distsa import graphs as G
from distsa import weights as Wt

HALF = np.array([[0.5, 0.5], [0.5, 0.5]])



def test_equal_neighbor_examples():
    assert np.allclose(Wt.equal_neighbor_weights(G.complete_graph(2)), HALF)
    assert np.array_equal(Wt.equal_neighbor_weights(G.self_loop_graph(3)), np.eye(3))
    g = G.DirectedGraph.from_arcs(2, [(1, 2)])
    assert np.allclose(Wt.equal_neighbor_weights(g), [[1, 0], [0.5, 0.5]])


def test_push_weight_examples():
    assert np.allclose(Wt.push_weights(G.complete_graph(2)), HALF)
    assert np.array_equal(Wt.push_weights(G.self_loop_graph(3)), np.eye(3))
    g = G.DirectedGraph.from_arcs(2, [(1, 2)])
    W = Wt.push_weights(g)
    assert np.allclose(W[:, 0], [0.5, 0.5]) and np.allclose(W[:, 1], [0, 1])


def test_check_stochastic_rejects():
    with pytest.raises(Wt.WeightError):
        Wt.check_stochastic([[0.5, 0.6], [0.5, 0.4]])
    with pytest.raises(Wt.WeightError):
        Wt.check_stochastic([[0.0, 1.0], [0.5, 0.5]])
    with pytest.raises(Wt.WeightError):
        Wt.check_stochastic([[1.0, 0.0], [0.5, 0.5]], graph=G.DirectedGraph.from_arcs(2, []))
    Wt.check_stochastic([[0.5, 0.0], [0.5, 1.0]], Wt.COLUMN)


def test_product_window_examples():
    Wa = np.array([[0.75, 0.25], [0.5, 0.5]])
    Wb = np.array([[0.9, 0.1], [0.2, 0.8]])
    sch = Wt.ExplicitWeights([Wa.tolist(), Wb.tolist()])
    assert np.allclose(Wt.product_window(sch, 3, 3), Wb)
    assert np.allclose(Wt.product_window(sch, 0, 1), Wb @ Wa)
    eye = Wt.ExplicitWeights([np.eye(3).tolist()])
    assert np.array_equal(Wt.product_window(eye, 2, 9), np.eye(3))
    with pytest.raises(Wt.WeightError):
        Wt.product_window(sch, 3, 2)


def test_aps_doubly_stochastic_is_uniform():
    sch = Wt.GraphWeights(G.ConstantSchedule(G.bidirectional_ring_graph(4)))
    aps = Wt.absolute_probability_sequence(sch, 50, 200)
    assert np.allclose(aps.vectors, 0.25, atol=1e-12)
    assert np.allclose(Wt.eta_series(aps), 0.0, atol=1e-12)


def test_aps_fixed_left_eigenvector():
    sch = Wt.ExplicitWeights([[[0.75, 0.25], [0.5, 0.5]]])
    aps = Wt.absolute_probability_sequence(sch, 100, 200)
    assert np.max(np.abs(aps.vectors - [2 / 3, 1 / 3])) <= 1e-10
    assert aps.recursion_residual <= 1e-10
    assert np.allclose(aps.pi_infinity, [2 / 3, 1 / 3])


def test_aps_period_two_eigen_oracle():
    Wa = np.array([[0.75, 0.25], [0.5, 0.5]])
    Wb = np.array([[0.9, 0.1], [0.3, 0.7]])
    sch = Wt.ExplicitWeights([Wa.tolist(), Wb.tolist()])
    aps = Wt.absolute_probability_sequence(sch, 40, 400)
    vals, vecs = np.linalg.eig((Wb @ Wa).T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    even = v / v.sum()
    odd = Wb.T @ even
    assert np.allclose(aps.vectors[0::2], even, atol=1e-12)
    assert np.allclose(aps.vectors[1::2], odd, atol=1e-12)
    # alternating vectors: no single limit
    assert not aps.limit_detected
    with pytest.raises(Wt.LimitNotDetected):
        Wt.eta_series(aps)


def test_aps_burn_in_too_short():
    sch = Wt.GraphWeights(G.ConstantSchedule(G.ring_graph(6)))
    with pytest.raises(Wt.BurnInError) as exc:
        Wt.absolute_probability_sequence(sch, 10, 2)
    assert exc.value.suggested > 2


def test_eta_zero_after_switch():
    before = G.PeriodicSchedule((G.DirectedGraph.from_arcs(3, [(1, 2), (2, 3)]), G.ring_graph(3)))
    after = G.ConstantSchedule(G.DirectedGraph.from_arcs(3, [(1, 2), (2, 3), (3, 1), (1, 3)]))
    sch = Wt.GraphWeights(G.SwitchSchedule(before, after, 30))
    aps = Wt.absolute_probability_sequence(sch, 200, 400)
    eta = Wt.eta_series(aps)
    assert np.max(eta[30:]) <= 1e-12
    assert eta[:30].max() > 1e-3


def test_tilde_weight_examples():
    W = np.array([[0.5, 0.0], [0.5, 1.0]])
    assert np.allclose(Wt.tilde_weights(W, [1.0, 1.0]), [[1.0, 0.0], [1 / 3, 2 / 3]])
    assert np.allclose(Wt.tilde_weights(HALF, [1.0, 1.0]), HALF)


def test_epsilon1_examples():
    ds = Wt.GraphWeights(G.ConstantSchedule(G.complete_graph(2)), Wt.COLUMN)
    assert Wt.epsilon1(ds, 100) == 1.0
    ring = Wt.GraphWeights(G.ConstantSchedule(G.bidirectional_ring_graph(5)), Wt.COLUMN)
    assert Wt.epsilon1(ring, 100) == pytest.approx(1.0, abs=1e-12)
    W = np.array([[0.5, 1 / 3], [0.5, 2 / 3]])
    sch = Wt.ExplicitWeights([W.tolist()], Wt.COLUMN)
    y, best = np.ones(2), np.inf
    for _ in range(200):
        y = W @ y
        best = min(best, y.min())
    assert Wt.epsilon1(sch, 200, L=1) == pytest.approx(best, rel=1e-12)
    assert best >= 1 / 16
    # a schedule whose union never connects 2 -> 1 drives the product below 1/N^{NL}
    lost = Wt.ExplicitWeights([[[0.5, 0.0], [0.5, 1.0]]], Wt.COLUMN)
    with pytest.raises(AssertionError):
        Wt.epsilon1(lost, 200, L=1)


def test_push_identities_doubly_stochastic_exact():
    sch = Wt.GraphWeights(G.ConstantSchedule(G.bidirectional_ring_graph(4)), Wt.COLUMN)
    ids = Wt.verify_push_identities(sch, 100)
    assert ids["product"] == 0.0 and ids["mass"] == 0.0
    assert ids["ratio"] <= 1e-15


def test_push_identities_directed_template():
    sch = Wt.GraphWeights(G.TemplateSchedule(4, declared_L=2, p_extra=0.2, seed=3), Wt.COLUMN)
    ids = Wt.verify_push_identities(sch, 400)
    assert ids["product"] <= 1e-8
    assert ids["ratio"] <= 1e-8
    assert ids["limit"] <= 1e-6
    assert ids["mass"] <= 1e-10


def test_push_fixed_matrix_eigen_oracle():
    # with a single irreducible column-stochastic W the APS of W~ equals y / N
    W = np.array([[0.5, 0.2, 0.0], [0.5, 0.3, 0.5], [0.0, 0.5, 0.5]])
    sch = Wt.ExplicitWeights([W.tolist()], Wt.COLUMN)
    ids = Wt.verify_push_identities(sch, 120)
    assert ids["ratio"] <= 1e-10


def test_dump_csvs(tmp_path):
    p = Wt.dump_matrix_csv([[0.5, 0.0], [0.5, 1.0]], tmp_path / "w.csv")
    assert p.read_text().splitlines() == ["i,j,value", "1,1,0.5", "2,1,0.5", "2,2,1.0"]
    sch = Wt.ExplicitWeights([[[0.75, 0.25], [0.5, 0.5]]])
    aps = Wt.absolute_probability_sequence(sch, 3, 100)
    rows = Wt.dump_aps_csv(aps, tmp_path / "aps.csv").read_text().splitlines()
    assert rows[0] == "t,pi_1,pi_2" and len(rows) == 5


def _row_stochastic(draw, n):
    M = np.array(draw(st.lists(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n), min_size=n, max_size=n)))
    M += np.eye(n) * 0.1
    return M / M.sum(axis=1, keepdims=True)


@st.composite
def row_stochastic_list(draw):
    n = draw(st.integers(2, 5))
    k = draw(st.integers(1, 4))
    return [_row_stochastic(draw, n) for _ in range(k)]


@given(row_stochastic_list())
def test_products_preserve_stochasticity(mats):
    sch = Wt.ExplicitWeights([M.tolist() for M in mats])
    P = Wt.product_window(sch, 0, len(mats) + 3)
    assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12
    col = Wt.ExplicitWeights([M.T.tolist() for M in mats], Wt.COLUMN)
    Q = Wt.product_window(col, 0, len(mats) + 3)
    assert np.max(np.abs(Q.sum(axis=0) - 1)) <= 1e-12


@given(row_stochastic_list())
def test_aps_recursion_property(mats):
    sch = Wt.ExplicitWeights([M.tolist() for M in mats])
    aps = Wt.absolute_probability_sequence(sch, 30, 2000)
    assert aps.recursion_residual <= 1e-10
    assert np.max(np.abs(aps.vectors.sum(axis=1) - 1)) <= 1e-12
    assert aps.pi_min > 0 and aps.pi_min <= aps.vectors.min() + 0.0


@given(row_stochastic_list(), st.lists(st.floats(0.05, 3.0), min_size=5, max_size=5))
def test_tilde_weights_rows_and_floor(mats, ys):
    hat = mats[0].T  # column-stochastic
    n = hat.shape[0]
    y = np.asarray(ys[:n])
    y = n * y / y.sum()
    T = Wt.tilde_weights(hat, y)
    assert np.max(np.abs(T.sum(axis=1) - 1)) <= 1e-12
    floor = hat[hat > 0].min() * y.min() / n
    assert T[T > 0].min() >= floor * (1 - 1e-12)
