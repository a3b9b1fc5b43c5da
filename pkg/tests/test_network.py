import math
import os

import numpy as np
import pytest

from causalpinn import autodiff as ad
from causalpinn import network as nw


def test_embed_degenerate():
    emb = nw.FourierEmbedding(0, 2.0)
    assert np.array_equal(nw.embed(0.37, emb), [1.0])


def test_embed_first_harmonic():
    emb = nw.FourierEmbedding(1, 2.0)
    x = 0.4321
    out = nw.embed(x, emb)
    assert out == pytest.approx([1.0, math.cos(math.pi * x), math.sin(math.pi * x)])


def test_embed_periodicity():
    emb = nw.FourierEmbedding(5, 2.0)
    rng = np.random.default_rng(1)
    x = rng.uniform(-3, 3, 40)
    for p in (-2, 1, 7):
        assert np.max(np.abs(nw.embed(x, emb) - nw.embed(x + p * emb.L, emb))) < 1e-12


def test_xavier_determinism():
    spec = nw.mlp_spec(3, 16, seed=42)
    n1, n2 = nw.init_xavier(spec), nw.init_xavier(spec)
    assert np.array_equal(n1.params_flat(), n2.params_flat())


def test_xavier_bounds():
    spec = nw.mlp_spec(2, 128, embedding=None, seed=5)
    net = nw.init_xavier(spec)
    w = net.weights[1]  # fan-in 128, fan-out 128
    bound = math.sqrt(6.0 / 256.0)
    assert np.all(np.abs(w) <= bound)
    assert np.max(np.abs(w)) > 0.5 * bound  # actually spread out
    assert all(np.all(b == 0) for b in net.biases)


def test_parameter_count_closed_form():
    # embedded input: t plus 41 embedding features; 4 hidden x 128; 1 output
    spec = nw.mlp_spec(4, 128, embedding=nw.FourierEmbedding(20, 2.0), seed=0)
    net = nw.init_xavier(spec)
    d = 1 + 41
    expected = (d * 128 + 128) + 3 * (128 * 128 + 128) + (128 * 1 + 1)
    assert net.n_params() == expected
    assert net.params_flat().size == expected


def test_zero_width_layer_rejected():
    with pytest.raises(ValueError):
        nw.LayerSpec(0)


def test_constant_network_derivatives():
    spec = nw.mlp_spec(2, 6, seed=0)
    net = nw.init_xavier(spec)
    for w in net.weights:
        w[:] = 0.0
    net.biases[-1][:] = 1.75
    g = ad.Graph()
    s = nw.forward_with_derivs(g, net, [0.3], [0.4], space_order=3)
    assert float(s.u.value[0, 0]) == pytest.approx(1.75)
    for d in (s.u_t, s.u_x, s.u_xx, s.u_xxx):
        assert float(d.value[0, 0]) == 0.0


def test_linear_network_derivatives():
    # single linear neuron chain: u = 2 t + 3 x
    spec = nw.NetworkSpec((nw.LayerSpec(1, (("linear", 1),)),), seed=0)
    net = nw.init_xavier(spec)
    net.weights[0][:] = np.array([[2.0], [3.0]])
    net.biases[0][:] = 0.0
    net.weights[1][:] = 1.0
    net.biases[1][:] = 0.0
    g = ad.Graph()
    s = nw.forward_with_derivs(g, net, [0.7], [-0.2], space_order=3)
    assert float(s.u.value[0, 0]) == pytest.approx(2 * 0.7 + 3 * -0.2)
    assert float(s.u_t.value[0, 0]) == pytest.approx(2.0)
    assert float(s.u_x.value[0, 0]) == pytest.approx(3.0)
    assert float(s.u_xx.value[0, 0]) == pytest.approx(0.0, abs=1e-14)
    assert float(s.u_xxx.value[0, 0]) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("embedding", [None, nw.FourierEmbedding(3, 2.0)])
def test_input_derivatives_match_finite_differences(embedding):
    spec = nw.mlp_spec(2, 10, embedding=embedding, seed=3)
    net = nw.init_xavier(spec)
    t0, x0 = 0.31, -0.42
    g = ad.Graph()
    s = nw.forward_with_derivs(g, net, [t0], [x0], space_order=3)
    # embedded nets have large high-order x-derivatives; keep the FD
    # truncation error below the asserted tolerances
    h = 1e-4 if embedding else 1e-3
    f = lambda xx: net.forward([t0], [xx])[0, 0]
    d1 = (f(x0 + h) - f(x0 - h)) / (2 * h)
    d2 = (f(x0 + h) - 2 * f(x0) + f(x0 - h)) / h ** 2
    h = 1e-3
    d3 = (f(x0 + 2 * h) - 2 * f(x0 + h) + 2 * f(x0 - h) - f(x0 - 2 * h)) / (2 * h ** 3)
    assert float(s.u_x.value[0, 0]) == pytest.approx(d1, rel=1e-5)
    assert float(s.u_xx.value[0, 0]) == pytest.approx(d2, rel=1e-5, abs=1e-8)
    assert float(s.u_xxx.value[0, 0]) == pytest.approx(d3, rel=1e-3, abs=1e-6)
    ht = 1e-6
    dt = (net.forward([t0 + ht], [x0])[0, 0] - net.forward([t0 - ht], [x0])[0, 0]) / (2 * ht)
    assert float(s.u_t.value[0, 0]) == pytest.approx(dt, rel=1e-6)


def test_forward_with_derivs_rejects_other_orders():
    spec = nw.mlp_spec(1, 4, seed=0)
    net = nw.init_xavier(spec)
    with pytest.raises(ValueError):
        nw.forward_with_derivs(ad.Graph(), net, [0.0], [0.0], space_order=2)


def test_embedded_network_exactly_periodic():
    spec = nw.mlp_spec(3, 24, embedding=nw.FourierEmbedding(6, 2.0), seed=9)
    net = nw.init_xavier(spec)
    rng = np.random.default_rng(4)
    t = rng.uniform(0, 1, 30)
    x = rng.uniform(-1, 1, 30)
    u1 = net.forward(t, x)
    u2 = net.forward(t, x + 2.0)
    assert np.max(np.abs(u1 - u2)) < 1e-12


def test_paf_group_reordering_equivalence():
    # swapping activation groups with matched weight columns leaves the
    # network function unchanged
    spec_a = nw.NetworkSpec((nw.LayerSpec(8, (("linear", 3), ("tanh", 5))),
                             nw.LayerSpec(6, (("tanh", 6),))), seed=2)
    net_a = nw.init_xavier(spec_a)
    spec_b = nw.NetworkSpec((nw.LayerSpec(8, (("tanh", 5), ("linear", 3))),
                             nw.LayerSpec(6, (("tanh", 6),))), seed=2)
    net_b = nw.init_xavier(spec_b)
    perm = np.r_[3:8, 0:3]  # tanh block first
    net_b.weights[0] = net_a.weights[0][:, perm]
    net_b.biases[0] = net_a.biases[0][perm]
    net_b.weights[1] = net_a.weights[1][perm, :]
    net_b.biases[1] = net_a.biases[1].copy()
    net_b.weights[2] = net_a.weights[2].copy()
    net_b.biases[2] = net_a.biases[2].copy()
    t = np.linspace(0, 1, 7)
    x = np.linspace(-1, 1, 7)
    assert np.allclose(net_a.forward(t, x), net_b.forward(t, x), atol=1e-12)


def test_jet_value_stream_matches_plain_forward_bitwise():
    spec = nw.mlp_spec(3, 32, embedding=nw.FourierEmbedding(4, 2.0), seed=8)
    net = nw.init_xavier(spec)
    rng = np.random.default_rng(0)
    t = rng.uniform(0, 1, 57)
    x = rng.uniform(-1, 1, 57)
    g = ad.Graph()
    s = nw.forward_with_derivs(g, net, t, x, space_order=3)
    plain = net.forward(t, x)
    assert np.array_equal(s.u.value, plain)


def test_paf_spec_structure():
    spec = nw.paf_kdv_spec(seed=1)
    widths = [l.width for l in spec.layers]
    assert widths == [120, 128, 128, 128, 128]
    assert spec.layers[0].activations == (("linear", 120),)
    assert spec.layers[1].activations == (("linear", 10), ("tanh", 118))
    assert spec.layers[3].activations == (("linear", 10), ("sech2", 118))
    assert spec.layers[4] == spec.layers[1]
    assert spec.output_dim == 1 and spec.embedding is None


def test_checkpoint_roundtrip_bitexact(tmp_path):
    spec = nw.NetworkSpec((nw.LayerSpec(9, (("linear", 2), ("sech2", 7))),),
                          output_dim=2, embedding=nw.FourierEmbedding(2, 2.0),
                          seed=17)
    net = nw.init_xavier(spec)
    path = tmp_path / "ck.txt"
    nw.save_checkpoint(net, path, {"problem": "kdv", "scheme": "dirac_gauss"})
    net2, meta = nw.load_checkpoint(path)
    assert np.array_equal(net.params_flat(), net2.params_flat())
    assert net2.spec == spec
    assert meta == {"problem": "kdv", "scheme": "dirac_gauss"}
    # a second save is byte-identical
    path2 = tmp_path / "ck2.txt"
    nw.save_checkpoint(net2, path2, meta)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("not a checkpoint\n")
    with pytest.raises(ValueError):
        nw.load_checkpoint(p)


def test_nan_in_activations_detected():
    spec = nw.mlp_spec(2, 6, seed=0)
    net = nw.init_xavier(spec)
    net.biases[0][0] = float("nan")
    with pytest.raises(Exception) as exc_info:
        nw.forward_with_derivs(ad.Graph(), net, [0.1], [0.2], space_order=1)
    assert "finite" in str(exc_info.value) or "NaN" in str(exc_info.value)
