import numpy as np
import pytest

from mammopipe.core_types import ClassId
from mammopipe.style_proxy import (
    StyleBank,
    foreground_histogram,
    histogram_match,
    matching_lut,
    postprocess_stylized,
)


def test_single_channel_384_is_unchanged():
    img = np.random.default_rng(0).integers(0, 256, size=(384, 384)).astype(np.uint8)
    labels = np.full((384, 384), ClassId.FATTY, np.uint8)
    assert np.array_equal(postprocess_stylized(img, labels), img)


def test_channel_average_and_resize():
    rgb = np.zeros((512, 512, 3), np.uint8)
    rgb[..., 0], rgb[..., 1], rgb[..., 2] = 30, 60, 90
    labels = np.full((384, 384), ClassId.FATTY, np.uint8)
    out = postprocess_stylized(rgb, labels)
    assert out.shape == (384, 384) and np.all(out == 60)


def test_background_is_zeroed_and_idempotent():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(300, 280, 3)).astype(np.uint8)
    labels = rng.integers(0, 5, size=(384, 384)).astype(np.uint8)
    out = postprocess_stylized(img, labels)
    assert not out[labels == ClassId.BACKGROUND].any()
    assert np.array_equal(postprocess_stylized(out, labels), out)


def test_postprocess_label_mismatch():
    with pytest.raises(ValueError):
        postprocess_stylized(np.zeros((40, 40)), np.zeros((40, 40), np.uint8))


def test_own_histogram_is_a_fixed_point():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, size=(64, 64)).astype(np.uint8)
    fg = rng.random((64, 64)) < 0.7
    out = histogram_match(img, foreground_histogram(img, fg), fg)
    assert np.max(np.abs(out.astype(int) - img.astype(int))) <= 1
    assert np.array_equal(out[~fg], img[~fg])


def test_delta_reference_collapses_foreground():
    img = np.tile(np.arange(256, dtype=np.uint8), (4, 1))
    ref = np.zeros(256)
    ref[128] = 1
    fg = np.ones(img.shape, bool)
    assert np.all(histogram_match(img, ref, fg) == 128)


def test_random_source_cdf_tracks_reference():
    rng = np.random.default_rng(3)
    for _ in range(5):
        src = rng.integers(0, 256, size=(256, 256)).astype(np.uint8)
        ref = rng.random(256) ** 3
        ref /= ref.sum()
        fg = np.ones(src.shape, bool)
        out = histogram_match(src, ref, fg)
        counts = np.zeros(256)
        for v, c in zip(*np.unique(out, return_counts=True)):
            counts[v] = c
        cdf_out = np.cumsum(counts) / out.size
        assert np.max(np.abs(cdf_out - np.cumsum(ref))) <= 2 / 256


def test_lut_is_monotone():
    rng = np.random.default_rng(4)
    for _ in range(20):
        lut = matching_lut(rng.random(256), rng.random(256))
        assert np.all(np.diff(lut.astype(int)) >= 0)


def test_empty_foreground_raises():
    with pytest.raises(ValueError):
        histogram_match(np.zeros((4, 4), np.uint8), np.ones(256), np.zeros((4, 4), bool))


def test_bank_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    refs = {s: [(rng.integers(0, 256, (32, 32)).astype(np.uint8), rng.integers(0, 5, (32, 32)))]
            for s in ("IMS", "PLANMED", "HOLOGIC")}
    bank = StyleBank.from_references(refs)
    for s in refs:
        assert bank[s].shape == (256,) and bank[s].sum() == pytest.approx(1.0)
    bank.save(tmp_path / "bank.json")
    back = StyleBank.load(tmp_path / "bank.json")
    for s in refs:
        assert np.array_equal(back[s], bank[s])
    with pytest.raises(KeyError):
        back["GE"]
