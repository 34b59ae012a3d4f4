import numpy as np
import pytest

from surgegraph.geo import Station, StationGraph
from surgegraph.layers import (
    GatLayer,
    GcnLayer,
    LstmLayer,
    MlpLayer,
    gcn_message_matrix,
)
from surgegraph.numerics import Tape, Tensor, backward

from conftest import finite_difference_grad, line_graph, max_rel_err, star_graph


def weighted_loss(out, w):
    return (out * Tensor(w)).sum()


def check_layer_gradients(forward, params, rng, tol=1e-4):
    """FD-check every parameter of a layer against a weighted-sum loss."""
    with Tape() as tape:
        out = forward()
        w = rng.uniform(-1, 1, out.shape)
        loss = weighted_loss(out, w)
    grads = backward(loss, tape, params=list(params.values()))

    def f():
        return float((forward().data * w).sum())

    for name, p in params.items():
        fd = finite_difference_grad(f, p.data)
        err = max_rel_err(grads[p], fd)
        assert err < tol, f"{name}: rel err {err}"


class TestMlp:
    def test_identity(self, rng):
        layer = MlpLayer(3, 3, rng, activation="linear")
        layer.weight.data = np.eye(3)
        layer.bias.data = np.zeros(3)
        x = rng.uniform(-1, 1, (4, 3))
        np.testing.assert_array_equal(layer.forward(Tensor(x)).data, x)

    def test_zero_weight_broadcasts_bias(self, rng):
        layer = MlpLayer(2, 3, rng, activation="tanh")
        layer.weight.data = np.zeros((2, 3))
        x = rng.uniform(-1, 1, (5, 2))
        out = layer.forward(Tensor(x)).data
        np.testing.assert_allclose(out, np.broadcast_to(np.tanh(layer.bias.data), (5, 3)))

    def test_gradients(self, rng):
        layer = MlpLayer(3, 4, rng, activation="tanh")
        x = Tensor(rng.uniform(-1, 1, (6, 3)), requires_grad=True)
        params = dict(layer.params())
        params["x"] = x
        check_layer_gradients(lambda: layer.forward(x), params, rng)


class TestGcn:
    def test_message_matrix_two_nodes(self):
        g = line_graph(2, weight=1.0)
        m = gcn_message_matrix(g)
        np.testing.assert_allclose(m, [[0.5, 0.5], [0.5, 0.5]])

    def test_isolated_node_identity(self, rng):
        g = StationGraph(stations=[Station(0, "s0", "T", 29.0, -90.0)], edges=[],
                         rho_min=0.8, d_max_km=500.0)
        layer = GcnLayer(3, 3, rng, activation="linear")
        layer.weight.data = np.eye(3)
        layer.bias.data = np.zeros(3)
        x = rng.uniform(-1, 1, (1, 3))
        np.testing.assert_allclose(layer.forward(Tensor(x), g).data, x)

    def test_two_nodes_average(self, rng):
        g = line_graph(2, weight=1.0)
        layer = GcnLayer(1, 1, rng, activation="linear")
        layer.weight.data = np.eye(1)
        layer.bias.data = np.zeros(1)
        x = np.array([[3.0], [0.0]])
        out = layer.forward(Tensor(x), g).data
        np.testing.assert_allclose(out, [[1.5], [1.5]])

    def test_zero_input_passes_bias_through_activation(self, rng):
        g = line_graph(3)
        layer = GcnLayer(2, 2, rng, activation="tanh")
        out = layer.forward(Tensor(np.zeros((3, 2))), g).data
        np.testing.assert_allclose(out, np.broadcast_to(np.tanh(layer.bias.data), (3, 2)))

    def test_edge_weights_scale_messages(self, rng):
        g = line_graph(2, weight=0.9)
        layer = GcnLayer(1, 1, rng, activation="linear", use_edge_weights=True)
        layer.weight.data = np.eye(1)
        layer.bias.data = np.zeros(1)
        out = layer.forward(Tensor(np.array([[2.0], [0.0]])), g).data
        np.testing.assert_allclose(out, [[1.0], [0.9]])

    def test_normalization_modes(self, rng):
        g = star_graph(4)
        for mode in ("symmetric", "row", "none"):
            m = gcn_message_matrix(g, normalization=mode)
            assert np.isfinite(m).all()
        row = gcn_message_matrix(g, normalization="row")
        np.testing.assert_allclose(row.sum(axis=1), 1.0)

    def test_gradients(self, rng):
        g = line_graph(4, weight=0.85)
        layer = GcnLayer(3, 2, rng, activation="tanh")
        x = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
        params = dict(layer.params())
        params["x"] = x
        check_layer_gradients(lambda: layer.forward(x, g), params, rng)

    def test_batched_input(self, rng):
        g = line_graph(3)
        layer = GcnLayer(2, 2, rng)
        out = layer.forward(Tensor(rng.uniform(-1, 1, (5, 3, 2))), g)
        assert out.shape == (5, 3, 2)

    def test_permutation_equivariance(self, rng):
        g = line_graph(4, weight=0.9)
        layer = GcnLayer(2, 3, rng, activation="tanh")
        x = rng.uniform(-1, 1, (4, 2))
        out = layer.forward(Tensor(x), g).data
        perm = np.array([2, 0, 3, 1])  # new id of each old node
        g2 = permute_graph(g, perm)
        x2 = np.empty_like(x)
        x2[perm] = x
        out2 = layer.forward(Tensor(x2), g2).data
        np.testing.assert_allclose(out2[perm], out, atol=1e-12)

    def test_locality(self, rng):
        g = line_graph(4)
        layer = GcnLayer(2, 2, rng, activation="tanh")
        x = rng.uniform(-1, 1, (4, 2))
        base = layer.forward(Tensor(x), g).data
        x2 = x.copy()
        x2[3] = 0.0  # node 3 is outside N(0) + self
        out = layer.forward(Tensor(x2), g).data
        np.testing.assert_allclose(out[0], base[0], atol=1e-12)


def permute_graph(g, perm):
    n = g.n_nodes
    stations = [None] * n
    for s in g.stations:
        stations[perm[s.node_id]] = Station(int(perm[s.node_id]), s.name, s.agency,
                                            s.lat, s.lon)
    edges = []
    for i, j, w in g.edges:
        a, b = int(perm[i]), int(perm[j])
        if a > b:
            a, b = b, a
        edges.append((a, b, w))
    return StationGraph(stations=stations, edges=edges, rho_min=g.rho_min,
                        d_max_km=g.d_max_km)


class TestGat:
    def test_zero_attention_vector_gives_uniform_alpha(self, rng):
        g = line_graph(3)
        layer = GatLayer(2, 4, heads=1, rng=rng)
        layer.head_attn[0].data = np.zeros(8)
        _, alpha = layer.head_forward(0, Tensor(rng.uniform(-1, 1, (3, 2))), g)
        a = alpha.data
        # node 0 neighborhood {0,1}; node 1 {0,1,2}; node 2 {1,2}
        np.testing.assert_allclose(a[0], [0.5, 0.5, 0.0], atol=1e-12)
        np.testing.assert_allclose(a[1], [1 / 3, 1 / 3, 1 / 3], atol=1e-12)
        np.testing.assert_allclose(a[2], [0.0, 0.5, 0.5], atol=1e-12)

    def test_isolated_node_attends_to_itself(self, rng):
        g = StationGraph(stations=[Station(0, "s0", "T", 29.0, -90.0)], edges=[],
                         rho_min=0.8, d_max_km=500.0)
        layer = GatLayer(2, 3, heads=1, rng=rng, activation="tanh")
        x = rng.uniform(-1, 1, (1, 2))
        out, alpha = layer.head_forward(0, Tensor(x), g)
        assert alpha.data[0, 0] == pytest.approx(1.0)
        np.testing.assert_allclose(out.data, np.tanh(x @ layer.head_weights[0].data))

    def test_alpha_rows_sum_to_one(self, rng):
        g = star_graph(5, weight=0.9)
        layer = GatLayer(3, 4, heads=2, rng=rng)
        _, alphas = layer.forward(Tensor(rng.uniform(-1, 1, (5, 3))), g,
                                  return_attention=True)
        mask = g.neighbor_mask()
        for alpha in alphas:
            np.testing.assert_allclose(alpha.data.sum(axis=-1), 1.0, atol=1e-12)
            assert (alpha.data[~mask] == 0).all()
            assert (alpha.data >= 0).all()

    def test_star_gradients(self, rng):
        g = star_graph(3, weight=0.88)
        layer = GatLayer(2, 3, heads=2, rng=rng, merge="concat", activation="tanh")
        x = Tensor(rng.uniform(-1, 1, (3, 2)), requires_grad=True)
        params = dict(layer.params())
        params["x"] = x
        check_layer_gradients(lambda: layer.forward(x, g), params, rng)

    def test_average_merge_gradients(self, rng):
        g = line_graph(3)
        layer = GatLayer(2, 3, heads=3, rng=rng, merge="average", activation="tanh")
        x = Tensor(rng.uniform(-1, 1, (3, 2)), requires_grad=True)
        params = dict(layer.params())
        params["x"] = x
        check_layer_gradients(lambda: layer.forward(x, g), params, rng)

    def test_single_head_concat_equals_average(self, rng):
        g = line_graph(3)
        x = Tensor(rng.uniform(-1, 1, (3, 2)))
        layer = GatLayer(2, 3, heads=1, rng=rng, merge="concat")
        out_c = layer.forward(x, g).data
        layer.merge = "average"
        out_a = layer.forward(x, g).data
        np.testing.assert_allclose(out_c, out_a, atol=1e-12)

    def test_two_identical_heads_concat_repeats(self, rng):
        g = line_graph(3)
        layer = GatLayer(2, 3, heads=2, rng=rng, merge="concat")
        layer.head_weights[1].data = layer.head_weights[0].data.copy()
        layer.head_attn[1].data = layer.head_attn[0].data.copy()
        out = layer.forward(Tensor(rng.uniform(-1, 1, (3, 2))), g).data
        np.testing.assert_array_equal(out[:, :3], out[:, 3:])

    def test_average_zero_attention_identity_weights_is_neighborhood_mean(self, rng):
        g = line_graph(4)
        layer = GatLayer(3, 3, heads=4, rng=rng, merge="average", activation="linear")
        for k in range(4):
            layer.head_weights[k].data = np.eye(3)
            layer.head_attn[k].data = np.zeros(6)
        x = rng.uniform(-1, 1, (4, 3))
        out = layer.forward(Tensor(x), g).data
        mask = g.neighbor_mask()
        expected = np.stack([x[mask[i]].mean(axis=0) for i in range(4)])
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_permutation_equivariance(self, rng):
        g = star_graph(4, weight=0.95)
        layer = GatLayer(2, 3, heads=2, rng=rng)
        x = rng.uniform(-1, 1, (4, 2))
        out = layer.forward(Tensor(x), g).data
        perm = np.array([1, 3, 0, 2])
        g2 = permute_graph(g, perm)
        x2 = np.empty_like(x)
        x2[perm] = x
        out2 = layer.forward(Tensor(x2), g2).data
        np.testing.assert_allclose(out2[perm], out, atol=1e-12)

    def test_locality(self, rng):
        g = line_graph(4)
        layer = GatLayer(2, 2, heads=2, rng=rng)
        x = rng.uniform(-1, 1, (4, 2))
        base = layer.forward(Tensor(x), g).data
        x2 = x.copy()
        x2[3] = 0.0
        out = layer.forward(Tensor(x2), g).data
        np.testing.assert_allclose(out[0], base[0], atol=1e-12)

    def test_edge_weight_injection_changes_attention(self, rng):
        g = line_graph(3, weight=0.85)
        x = Tensor(rng.uniform(-1, 1, (3, 2)))
        plain = GatLayer(2, 3, heads=1, rng=np.random.default_rng(0))
        weighted = GatLayer(2, 3, heads=1, rng=np.random.default_rng(0),
                            use_edge_weights=True)
        _, a_plain = plain.head_forward(0, x, g)
        _, a_weighted = weighted.head_forward(0, x, g)
        assert not np.allclose(a_plain.data, a_weighted.data)


class TestLstm:
    def test_zero_weights_zero_output(self, rng):
        layer = LstmLayer(2, 3, rng)
        for p in layer.params().values():
            p.data = np.zeros_like(p.data)
        out = layer.forward_sequence(Tensor(rng.uniform(-1, 1, (4, 5, 2)))).data
        np.testing.assert_array_equal(out, np.zeros((4, 5, 3)))

    def test_saturated_forget_gate_preserves_cell(self, rng):
        layer = LstmLayer(2, 3, rng)
        for p in layer.params().values():
            p.data = np.zeros_like(p.data)
        layer.bias.data[3:6] = 50.0   # forget gate ~ 1
        layer.bias.data[0:3] = -50.0  # input gate ~ 0
        c0 = rng.uniform(-1, 1, (2, 3))
        state = (Tensor(np.zeros((2, 3))), Tensor(c0))
        for _ in range(3):
            _, state = layer.step(Tensor(np.zeros((2, 2))), state)
        np.testing.assert_allclose(state[1].data, c0, atol=1e-9)

    def test_sequence_matches_step_composition(self, rng):
        layer = LstmLayer(3, 4, rng)
        x = rng.uniform(-1, 1, (2, 5, 3))
        fused = layer.forward_sequence(Tensor(x)).data
        state = layer.initial_state(2)
        for t in range(5):
            h, state = layer.step(Tensor(x[:, t]), state)
            np.testing.assert_allclose(h.data, fused[:, t], rtol=1e-12, atol=1e-14)

    def test_step_gradients_through_time(self, rng):
        layer = LstmLayer(2, 3, rng)
        x = Tensor(rng.uniform(-1, 1, (2, 2, 2)), requires_grad=True)
        params = dict(layer.params())
        params["x"] = x

        def forward():
            state = layer.initial_state(2)
            outs = []
            for t in range(2):
                h, state = layer.step(x[:, t, :], state)
                outs.append(h)
            return outs[0] + outs[1]

        check_layer_gradients(forward, params, rng)

    def test_fused_sequence_gradients(self, rng):
        layer = LstmLayer(2, 3, rng)
        x = Tensor(rng.uniform(-1, 1, (2, 4, 2)), requires_grad=True)
        params = dict(layer.params())
        params["x"] = x
        check_layer_gradients(lambda: layer.forward_sequence(x), params, rng)

    def test_identical_windows_identical_outputs(self, rng):
        layer = LstmLayer(2, 3, rng)
        x = rng.uniform(-1, 1, (1, 6, 2))
        first = layer.forward_sequence(Tensor(x)).data
        second = layer.forward_sequence(Tensor(x.copy())).data
        np.testing.assert_array_equal(first, second)
