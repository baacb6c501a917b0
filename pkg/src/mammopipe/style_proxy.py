"""Post-processing of stylized images and a histogram-matching style proxy.

The proxy is a cheap deterministic stand-in for neural style transfer so the
mixing pipeline can run end to end. It only reshapes the grey-level
distribution of the breast region and is not equivalent to a learned
stylizer.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

from .core_types import ClassId, to_uint8

__all__ = [
    "MODEL_SIZE",
    "StyleBank",
    "foreground_histogram",
    "postprocess_stylized",
    "histogram_match",
    "matching_lut",
]

MODEL_SIZE = 384
STYLES = ("IMS", "PLANMED", "HOLOGIC")


def _resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape == (size, size):
        return img.astype(np.float64)
    pil = Image.fromarray(img.astype(np.float32), mode="F")
    return np.asarray(pil.resize((size, size), Image.Resampling.BILINEAR), dtype=np.float64)


def postprocess_stylized(stylized: np.ndarray, labels: np.ndarray, size: int = MODEL_SIZE) -> np.ndarray:
    """Collapse to one channel, resize to ``size`` x ``size`` and blank the background."""
    arr = np.asarray(stylized, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    elif arr.ndim != 2:
        raise ValueError(f"expected an HxW or HxWxC image, got shape {arr.shape}")
    arr = _resize_bilinear(arr, size)
    labels = np.asarray(labels)
    if labels.shape != arr.shape:
        raise ValueError(f"labels {labels.shape} do not match resized image {arr.shape}")
    out = to_uint8(arr)
    out[labels == ClassId.BACKGROUND] = 0
    return out


def foreground_histogram(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    vals = np.asarray(img)[np.asarray(mask, dtype=bool)]
    if vals.size == 0:
        raise ValueError("histogram over an empty foreground")
    hist = np.bincount(vals.astype(np.intp), minlength=256)[:256].astype(np.float64)
    return hist / hist.sum()


def matching_lut(src_hist: np.ndarray, ref_hist: np.ndarray) -> np.ndarray:
    """Monotone 256-entry lookup table sending source CDF levels onto the reference.

    Each source level goes to the smallest reference level whose CDF reaches
    the source CDF at that level.
    """
    cdf_s = np.cumsum(src_hist / src_hist.sum())
    cdf_r = np.cumsum(ref_hist / ref_hist.sum())
    # guard against the reference CDF stopping a hair below 1
    cdf_r[-1] = max(cdf_r[-1], 1.0)
    lut = np.searchsorted(cdf_r, cdf_s - 1e-12, side="left")
    return np.clip(lut, 0, 255).astype(np.uint8)


def histogram_match(src: np.ndarray, ref_hist: np.ndarray, foreground: np.ndarray) -> np.ndarray:
    """Remap foreground intensities so their CDF follows ``ref_hist``; background untouched."""
    src = np.asarray(src)
    if src.dtype != np.uint8:
        src = to_uint8(src)
    fg = np.asarray(foreground, dtype=bool)
    ref = np.asarray(ref_hist, dtype=np.float64)
    if ref.shape != (256,) or ref.sum() <= 0:
        raise ValueError("reference histogram must have 256 bins with positive mass")
    lut = matching_lut(foreground_histogram(src, fg), ref)
    out = src.copy()
    out[fg] = lut[src[fg]]
    return out


class StyleBank:
    """Named 256-bin reference histograms, one per target vendor style."""

    def __init__(self, histograms: Mapping[str, Iterable[float]] | None = None):
        self.histograms: dict[str, np.ndarray] = {}
        for name, h in (histograms or {}).items():
            self.add(name, h)

    def add(self, name: str, hist) -> None:
        h = np.asarray(list(hist), dtype=np.float64)
        if h.shape != (256,) or np.any(h < 0) or h.sum() <= 0:
            raise ValueError(f"style {name!r}: need 256 non-negative bins with positive mass")
        # already-normalized input is kept verbatim so save/load round-trips exactly
        total = h.sum()
        self.histograms[name] = h if abs(total - 1.0) <= 1e-12 else h / total

    @classmethod
    def from_references(cls, refs: Mapping[str, Iterable[tuple[np.ndarray, np.ndarray]]]) -> "StyleBank":
        """Pool foreground pixels of each style's (image, labels) reference pairs."""
        bank = cls()
        for name, pairs in refs.items():
            total = np.zeros(256)
            for img, labels in pairs:
                fg = np.asarray(labels) != ClassId.BACKGROUND
                total += np.bincount(np.asarray(img)[fg].astype(np.intp), minlength=256)[:256]
            bank.add(name, total)
        return bank

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.histograms[name]
        except KeyError:
            raise KeyError(f"style {name!r} not in bank (have {sorted(self.histograms)})") from None

    def __contains__(self, name):
        return name in self.histograms

    def save(self, path) -> None:
        payload = {"format": "mammopipe.stylebank", "version": 1,
                   "styles": {k: v.tolist() for k, v in sorted(self.histograms.items())}}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "StyleBank":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        # also accept a bare {style: [256 floats]} mapping
        return cls(data["styles"] if "styles" in data else data)
