import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundnav.aggregate import (
    EncoderParams,
    Mode,
    ShapeError,
    aggregate_views,
    attention_weights,
    encoder_forward,
    read_header,
)
from groundnav.core import StateError

from reference import encoder_reference, softmax_reference


def random_params(rng, d=8, heads=1):
    """Seeded weights plus nonzero norm and bias terms, so every path is exercised."""
    p = EncoderParams.seeded(int(rng.integers(1 << 30)), d, heads)
    return replace(
        p,
        b1=rng.normal(0, 0.1, 4 * d),
        b2=rng.normal(0, 0.1, d),
        norm1_gain=rng.uniform(0.5, 1.5, d),
        norm1_bias=rng.normal(0, 0.1, d),
        norm2_gain=rng.uniform(0.5, 1.5, d),
        norm2_bias=rng.normal(0, 0.1, d),
        fusion_w=rng.normal(0, 1, d),
        fusion_b=float(rng.normal()),
    )


def test_zero_weights_pass_through():
    rng = np.random.default_rng(0)
    p = EncoderParams.zeros(8)
    for _ in range(20):
        V = rng.normal(size=(int(rng.integers(1, 7)), 8))
        assert np.array_equal(encoder_forward(V, p), V)


def test_zero_weights_attention_is_plain_mean():
    a, b = np.arange(8.0), -np.arange(8.0) * 0.5
    out = aggregate_views([a, b], Mode.ATTENTION, EncoderParams.zeros(8))
    assert np.allclose(out, (a + b) / 2, atol=1e-15)


def test_encoder_matches_scalar_reference():
    rng = np.random.default_rng(1)
    for case in range(100):
        p = random_params(rng, 8, heads=1 if case % 2 else 2)
        V = rng.normal(size=(int(rng.integers(1, 7)), 8))
        got = encoder_forward(V, p)
        assert np.max(np.abs(got - np.array(encoder_reference(V, p)))) <= 1e-9


def test_encoder_is_row_equivariant():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p = random_params(rng)
        V = rng.normal(size=(5, 8))
        perm = rng.permutation(5)
        assert np.allclose(encoder_forward(V[perm], p), encoder_forward(V, p)[perm], atol=1e-12)


def test_aggregate_is_order_free():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = random_params(rng)
        V = rng.normal(size=(int(rng.integers(1, 13)), 8))
        perm = rng.permutation(len(V))
        for mode in Mode:
            assert np.allclose(aggregate_views(list(V[perm]), mode, p), aggregate_views(list(V), mode, p), atol=1e-6)


def test_softmax_cases():
    p = EncoderParams.zeros(8).with_fusion(np.ones(8))
    assert attention_weights(np.ones((1, 8)), p).tolist() == [1.0]
    w = attention_weights(np.tile(np.arange(8.0), (4, 1)), p)
    assert np.allclose(w, 0.25, atol=1e-15)


def test_softmax_matches_direct_evaluation():
    rng = np.random.default_rng(4)
    for _ in range(200):
        p = EncoderParams.zeros(8).with_fusion(rng.normal(size=8), float(rng.normal()))
        V = rng.normal(size=(int(rng.integers(1, 13)), 8))
        w = attention_weights(V, p)
        ref = softmax_reference((V @ p.fusion_w + p.fusion_b).tolist())
        assert np.max(np.abs(w - ref)) <= 1e-12
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(w >= 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_softmax_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(6, 8))
    p = EncoderParams.zeros(8).with_fusion(rng.normal(size=8), 0.0)
    # a bias moves every score by the same constant
    assert np.allclose(attention_weights(V, p), attention_weights(V, replace(p, fusion_b=shift)), atol=1e-9)


def test_softmax_large_scores_stay_finite():
    p = EncoderParams.zeros(8).with_fusion(np.full(8, 1000.0))
    w = attention_weights(np.vstack([np.ones(8), np.ones(8) * 2]), p)
    assert np.all(np.isfinite(w)) and w.tolist() == [0.0, 1.0]


def test_single_view_attention_is_encoder_row():
    rng = np.random.default_rng(5)
    p = random_params(rng)
    f = rng.normal(size=8)
    assert np.allclose(aggregate_views([f], Mode.ATTENTION, p), encoder_forward([f], p)[0], atol=1e-15)


def test_attention_output_inside_row_envelope():
    rng = np.random.default_rng(6)
    for _ in range(200):
        p = random_params(rng)
        V = rng.normal(size=(int(rng.integers(1, 13)), 8))
        T = encoder_forward(V, p)
        out = aggregate_views(list(V), Mode.ATTENTION, p)
        assert np.all(out >= T.min(axis=0) - 1e-12) and np.all(out <= T.max(axis=0) + 1e-12)


def test_average_mode_is_mean():
    V = [np.ones(4), np.zeros(4), np.full(4, 2.0)]
    assert aggregate_views(V, "average").tolist() == [1.0] * 4


def test_errors():
    p = EncoderParams.zeros(8)
    with pytest.raises(StateError):
        aggregate_views([], Mode.ATTENTION, p)
    with pytest.raises(ShapeError):
        encoder_forward(np.ones((2, 6)), p)
    with pytest.raises(ShapeError):
        EncoderParams.zeros(8, heads=3)
    with pytest.raises(ShapeError):
        replace(p, wq=np.zeros((8, 7)))


def test_binary_round_trip(tmp_path):
    p = random_params(np.random.default_rng(7), d=8, heads=2)
    path = tmp_path / "p.bin"
    EncoderParams.seeded(3, 8, 2).save(path)
    q = EncoderParams.load(path)
    assert q.to_bytes() == path.read_bytes()
    for name in ("wq", "w1", "fusion_w"):
        assert np.array_equal(getattr(q, name), getattr(EncoderParams.seeded(3, 8, 2), name))
    head = read_header(p.to_bytes())
    assert head["magic"] == "GVAG" and (head["version"], head["d"], head["heads"]) == (1, 8, 2)
    assert head["bytes"] == 16 + 4 * (4 * 64 + 2 * 8 * 32 + 32 + 8 + 4 * 8 + 8 + 1)


def test_binary_rejects_garbage():
    data = EncoderParams.zeros(8).to_bytes()
    with pytest.raises(ValueError):
        EncoderParams.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        EncoderParams.from_bytes(data + b"\0\0\0\0")
