import math

import numpy as np
import pytest

from mammopipe.uncertainty import (
    TtaTransform,
    align,
    read_float_map,
    render_hot,
    uncertainty_map,
    validate_probmap,
    write_float_map,
)


def one_hot(cls, h=4, w=5, c=5):
    p = np.zeros((h, w, c))
    p[..., cls] = 1
    return p


def random_probs(rng, h=6, w=7, c=5):
    x = rng.random((h, w, c))
    return x / x.sum(axis=2, keepdims=True)


def test_entropy_bounds():
    assert not uncertainty_map([one_hot(2)] * 3).any()
    assert np.allclose(uncertainty_map([np.full((3, 3, 5), 0.2)]), 1.0, atol=1e-12)
    u = uncertainty_map([one_hot(1), one_hot(3)])
    assert np.max(np.abs(u - math.log(2) / math.log(5))) <= 1e-9


def test_permutation_invariance_and_range():
    rng = np.random.default_rng(0)
    for _ in range(20):
        maps = [random_probs(rng) for _ in range(int(rng.integers(2, 6)))]
        ref = uncertainty_map(maps)
        assert ref.min() >= 0 and ref.max() <= 1
        order = rng.permutation(len(maps))
        assert np.allclose(uncertainty_map([maps[i] for i in order]), ref, rtol=0, atol=1e-12)


def test_duplicate_map_weights_the_mean():
    rng = np.random.default_rng(1)
    a, b = random_probs(rng), random_probs(rng)
    mean = (2 * a + b) / 3
    expect = -(mean * np.log(mean)).sum(axis=2) / math.log(5)
    assert np.allclose(uncertainty_map([a, b, a]), expect, atol=1e-12)


def test_std_maxprob_alternative():
    u = uncertainty_map([one_hot(1), one_hot(1)], statistic="std_maxprob")
    assert not u.any()
    half = np.full((2, 2, 5), 0.0)
    half[..., 0] = half[..., 1] = 0.5
    u = uncertainty_map([one_hot(0, 2, 2), half], statistic="std_maxprob")
    assert np.allclose(u, 0.5)
    with pytest.raises(ValueError):
        uncertainty_map([one_hot(0)], statistic="variance")


def test_shape_mismatch_and_empty():
    with pytest.raises(ValueError):
        uncertainty_map([one_hot(0), one_hot(0, 3, 3)])
    with pytest.raises(ValueError):
        uncertainty_map([])


def test_align_flips():
    rng = np.random.default_rng(2)
    p = random_probs(rng)
    assert np.array_equal(align(p, TtaTransform.parse("identity")), p)
    hf = TtaTransform.parse("hflip")
    flipped = align(p, hf)
    h, w, _ = p.shape
    for y in range(h):
        for x in range(w):
            assert np.array_equal(flipped[y, x], p[y, w - 1 - x])
    assert np.array_equal(align(flipped, hf), p)
    assert np.array_equal(align(align(p, TtaTransform("vflip")), TtaTransform("vflip")), p)
    shift = TtaTransform.parse("intensity_shift:0.1")
    assert shift.delta == 0.1 and np.array_equal(align(p, shift), p)
    with pytest.raises(ValueError):
        TtaTransform.parse("rotate")


def test_validate_probmap():
    validate_probmap(one_hot(0))
    with pytest.raises(ValueError):
        validate_probmap(np.full((2, 2, 5), 0.3))


def test_hot_colormap():
    assert render_hot(np.zeros((1, 1)))[0, 0].tolist() == [0, 0, 0]
    assert render_hot(np.ones((1, 1)))[0, 0].tolist() == [255, 255, 255]
    levels = render_hot(np.linspace(0, 1, 256)[None, :])[0].astype(int)
    assert np.all(np.diff(levels, axis=0) >= 0)
    lum = levels @ np.array([0.299, 0.587, 0.114])
    assert np.all(np.diff(lum) >= 0)
    with pytest.warns(RuntimeWarning):
        out = render_hot(np.array([[1.5, -0.2]]))
    assert out[0].tolist() == [[255, 255, 255], [0, 0, 0]]


def test_float_map_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    p = random_probs(rng).astype(np.float32)
    write_float_map(tmp_path / "p.bin", p)
    back = read_float_map(tmp_path / "p.bin")
    assert back.shape == p.shape and np.array_equal(back, p.astype(np.float64))
    (tmp_path / "bad.bin").write_bytes(b'{"format": "other"}\n')
    with pytest.raises(ValueError):
        read_float_map(tmp_path / "bad.bin")
