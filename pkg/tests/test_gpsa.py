# tests/test_gpsa.py
"""
Tests for Gated Positional Self-Attention layers.
"""
import sys
import os
import copy
import math
import numpy as np
import pytest
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from tcnn.core.exceptions import DimensionError, UsageError
from tcnn.nn.gpsa import (GpsaLayer, alpha_of, alpha_raw_for, attention_distance, attention_map_at,
                          attention_span, gated_attention, gating_values, gpsa_forward, positional_logits)
from tcnn.tensor.tensor import Tensor, set_default_dtype, tensor


def make_layer(d_in=4, d_out=4, n_heads=4, seed=0, **kwargs):
    """Layer with seeded random parameters in double precision"""
    set_default_dtype("f64")
    return GpsaLayer(d_in, d_out, n_heads=n_heads, rng=np.random.default_rng(seed), **kwargs)


def set_heads(layer, alpha, gate, centers):
    layer.alpha_raw.assign(np.full(layer.n_heads, alpha_raw_for(alpha)))
    layer.gate.assign(np.full(layer.n_heads, gate))
    layer.centers.assign(np.asarray(centers, dtype=np.float64))


def test_alpha_rectification_constants():
    """alpha(0) = ln2 / 5, alpha stays positive, inverse at alpha = 1"""
    assert alpha_of(0.0) == pytest.approx(math.log(2.0) / 5.0)
    assert alpha_of(-100.0) > 0.0
    assert alpha_raw_for(1.0) == pytest.approx(0.99866, abs=1e-5)
    assert alpha_of(alpha_raw_for(3.7)) == pytest.approx(3.7)


def test_alpha_inverse_rejects_non_positive():
    """No raw value gives alpha <= 0"""
    with pytest.raises(UsageError):
        alpha_raw_for(0.0)


def test_positional_logit_hand_values():
    """alpha = 2, center (1, 1): offsets (1,1) -> 4, (0,0) -> 0, (-1,-1) -> -12"""
    pl = positional_logits(3, 3, tensor([2.0]), tensor([[1.0, 1.0]]))
    logits = pl.logits.data[0]
    center = 4
    assert logits[center, 8] == pytest.approx(4.0)
    assert logits[center, center] == pytest.approx(0.0)
    assert logits[center, 0] == pytest.approx(-12.0)


def test_positional_argmax_at_center():
    """For any alpha > 0 the positional softmax of an interior query peaks at query + center"""
    rng = np.random.default_rng(1)
    for _ in range(20):
        dr, dc = rng.integers(-2, 3, size=2)
        alpha = rng.uniform(0.1, 5.0)
        pl = positional_logits(7, 7, tensor([alpha]), tensor([[float(dr), float(dc)]]))
        query = 3 * 7 + 3
        assert np.argmax(pl.logits.data[0, query]) == (3 + dr) * 7 + (3 + dc)


def test_positional_logits_shape_checks():
    """Centers must be N_h x 2 and the grid non-empty"""
    with pytest.raises(DimensionError):
        positional_logits(3, 3, tensor([1.0, 1.0]), tensor([[0.0, 0.0]]))
    with pytest.raises(DimensionError):
        positional_logits(0, 3, tensor([1.0]), tensor([[0.0, 0.0]]))


def test_zero_content_is_uniform():
    """W_qry = W_key = 0 with a content-saturated gate gives uniform attention"""
    layer = make_layer()
    layer.w_qry.assign(np.zeros(layer.w_qry.shape))
    layer.w_key.assign(np.zeros(layer.w_key.shape))
    layer.gate.assign(np.full(4, -40.0))
    X = Tensor(np.random.default_rng(2).standard_normal((9, 4)))
    A = gated_attention(X, layer, layer.positional(3, 3)).data
    np.testing.assert_allclose(A, 1.0 / 9.0, atol=1e-12)


def test_saturated_gate_is_positional():
    """lambda = 20 makes A the positional softmax within 1e-8"""
    layer = make_layer()
    layer.gate.assign(np.full(4, 20.0))
    X = Tensor(np.random.default_rng(3).standard_normal((9, 4)))
    pl = layer.positional(3, 3)
    A = gated_attention(X, layer, pl).data
    np.testing.assert_allclose(A, pl.softmax().data, atol=1e-8)


def test_initial_gate_mixture():
    """lambda = 1 with zero content: rows are 0.2689 / L + 0.7311 * positional"""
    layer = make_layer()
    layer.w_qry.assign(np.zeros(layer.w_qry.shape))
    layer.gate.assign(np.ones(4))
    X = Tensor(np.random.default_rng(4).standard_normal((6, 4)))
    pl = layer.positional(2, 3)
    A = gated_attention(X, layer, pl).data
    g = 1.0 / (1.0 + math.exp(-1.0))
    np.testing.assert_allclose(A, (1 - g) / 6.0 + g * pl.softmax().data, atol=1e-12)


def test_attention_rows_are_stochastic():
    """Random parameter draws: every attention row is non-negative and sums to 1"""
    rng = np.random.default_rng(5)
    for seed in range(200):
        layer = make_layer(n_heads=3, seed=seed)
        layer.alpha_raw.assign(rng.normal(0.0, 2.0, 3))
        layer.gate.assign(rng.normal(0.0, 5.0, 3))
        layer.centers.assign(rng.normal(0.0, 2.0, (3, 2)))
        X = Tensor(rng.standard_normal((2, 12, 4)) * 3.0)
        A = gated_attention(X, layer, layer.positional(3, 4)).data
        assert A.min() >= 0.0
        np.testing.assert_allclose(A.sum(axis=-1), 1.0, atol=1e-6)


def test_zero_output_projection_gives_bias():
    """All W_out = 0: the output is the bias everywhere"""
    layer = make_layer(d_out=3, bias=True)
    layer.w_out.assign(np.zeros(layer.w_out.shape))
    layer.bias.assign(np.array([0.5, -1.0, 2.0]))
    out = gpsa_forward(Tensor(np.random.default_rng(6).standard_normal((2, 9, 4))), layer, layer.positional(3, 3))
    np.testing.assert_allclose(out.data, np.broadcast_to([0.5, -1.0, 2.0], (2, 9, 3)))


def test_single_head_identity():
    """Strict locality at offset 0, identity value and output maps reproduce the input"""
    layer = make_layer(d_in=3, d_out=3, n_heads=1)
    set_heads(layer, alpha=20.0, gate=20.0, centers=[[0.0, 0.0]])
    layer.w_out.assign(np.eye(3)[None])
    X = Tensor(np.random.default_rng(7).standard_normal((1, 16, 3)))
    out = gpsa_forward(X, layer, layer.positional(4, 4))
    np.testing.assert_allclose(out.data, X.data, atol=1e-6)


def test_forward_matches_explicit_attention():
    """The fused forward equals sum_h A_h X W_val W_out_h"""
    layer = make_layer(d_out=5, n_heads=3, bias=True)
    X = Tensor(np.random.default_rng(8).standard_normal((2, 6, 4)))
    pl = layer.positional(2, 3)
    A = gated_attention(X, layer, pl).data
    values = X.data @ layer.w_val.data
    expected = np.stack([np.einsum("hij,jd,hde->ie", A[b], values[b], layer.w_out.data) for b in range(2)])
    expected = expected + layer.bias.data
    np.testing.assert_allclose(gpsa_forward(X, layer, pl).data, expected, atol=1e-10)


def test_content_path_is_permutation_equivariant():
    """With the positional path gated off, shuffling the pixels shuffles the output the same way"""
    layer = make_layer(d_out=5, n_heads=3, bias=True)
    layer.gate.assign(np.full(3, -40.0))
    rng = np.random.default_rng(10)
    x = rng.standard_normal((2, 12, 4))
    perm = rng.permutation(12)
    pl = layer.positional(3, 4)
    out = gpsa_forward(Tensor(x), layer, pl).data
    shuffled = gpsa_forward(Tensor(x[:, perm]), layer, pl).data
    np.testing.assert_allclose(shuffled, out[:, perm], atol=1e-10)


def test_positional_logits_depend_on_offsets_only():
    """Query/key pairs shifted by the same amount get the same positional logit"""
    rng = np.random.default_rng(11)
    H, W = 4, 5
    pl = positional_logits(H, W, tensor(rng.uniform(0.2, 3.0, 3)), tensor(rng.uniform(-2.0, 2.0, (3, 2))))
    logits = pl.logits.data
    for _ in range(50):
        qr, qc, kr, kc = rng.integers(0, 3, size=4)
        sr, sc = rng.integers(0, 2, size=2)
        moved = logits[:, (qr + sr) * W + qc + sc, (kr + sr) * W + kc + sc]
        np.testing.assert_allclose(moved, logits[:, qr * W + qc, kr * W + kc], atol=1e-12)


def test_resolution_mismatch():
    """Token count must match the positional grid"""
    layer = make_layer()
    with pytest.raises(DimensionError):
        gpsa_forward(Tensor(np.ones((1, 8, 4))), layer, layer.positional(3, 3))


def test_image_forward_shape():
    """B x D_in x H x W in, B x D_out x H x W out"""
    layer = make_layer(d_out=6)
    out = layer(Tensor(np.random.default_rng(9).standard_normal((2, 4, 3, 5))))
    assert out.shape == (2, 6, 3, 5)


def test_span_and_gate_values():
    """Span is 1 / alpha and gates are sigmoid(lambda)"""
    layer = make_layer(n_heads=3)
    layer.alpha_raw.assign(alpha_raw_for(np.array([1.0, 20.0, 0.5])))
    layer.gate.assign(np.array([0.0, 1.0, -20.0]))
    np.testing.assert_allclose(attention_span(layer), [1.0, 0.05, 2.0], rtol=1e-6)
    gates = gating_values(layer)
    assert gates[0] == pytest.approx(0.5)
    assert gates[1] == pytest.approx(0.7311, abs=1e-4)
    assert gates[2] < 1e-8


def test_strict_maps_are_one_hot():
    """Saturated init: an interior query attends only to query + center"""
    layer = make_layer(n_heads=9)
    centers = [(r, c) for r in (-1, 0, 1) for c in (-1, 0, 1)]
    set_heads(layer, alpha=25.0, gate=25.0, centers=centers)
    x = np.random.default_rng(10).standard_normal((4, 5, 5))
    maps = attention_map_at(layer, x, (2, 2))
    for h, (dr, dc) in enumerate(centers):
        assert maps[h, 2 + dr, 2 + dc] == pytest.approx(1.0, abs=1e-8)
        off_peak = maps[h].sum() - maps[h, 2 + dr, 2 + dc]
        assert off_peak <= 1e-8


def test_attention_map_query_range():
    """Query pixel must lie on the grid"""
    layer = make_layer()
    with pytest.raises(UsageError):
        attention_map_at(layer, np.ones((4, 3, 3)), (3, 0))


def test_attention_distance_of_local_heads():
    """A sharply local head at offset (0, 1) has mean distance close to 1"""
    layer = make_layer(n_heads=1)
    set_heads(layer, alpha=25.0, gate=25.0, centers=[[0.0, 1.0]])
    x = np.random.default_rng(11).standard_normal((1, 4, 4, 4))
    # queries in the last column cannot move right and attend to themselves
    distance = attention_distance(layer, x)[0]
    assert 0.5 < distance <= 1.0 + 1e-6


def test_positional_cache_follows_versions():
    """Cache hits while alpha and centers are unchanged, recomputes after an update"""
    layer = make_layer()
    first = layer.positional(3, 3)
    assert layer.positional(3, 3) is first
    layer.centers.assign(np.zeros((4, 2)))
    assert layer.positional(3, 3) is not first


def test_deepcopy_drops_cache():
    """Copies start without cached logits or captured inputs"""
    layer = make_layer()
    layer.positional(3, 3)
    layer.captured = np.ones(3)
    clone = copy.deepcopy(layer)
    assert clone._cache == {}
    assert clone.captured is None
