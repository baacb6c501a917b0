"""Test-time-augmentation uncertainty maps from externally produced softmax maps."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "TtaTransform",
    "align",
    "uncertainty_map",
    "render_hot",
    "validate_probmap",
    "read_float_map",
    "write_float_map",
]

PROBMAP_FORMAT = "mammopipe.floatmap"
PROBMAP_VERSION = 1


@dataclass(frozen=True)
class TtaTransform:
    kind: str  # identity | hflip | vflip | intensity_shift
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "hflip", "vflip", "intensity_shift"):
            raise ValueError(f"unknown TTA transform {self.kind!r}")

    @classmethod
    def parse(cls, tag: str) -> "TtaTransform":
        """``identity``, ``hflip``, ``vflip`` or ``intensity_shift:<delta>``."""
        name, _, arg = tag.strip().partition(":")
        if name == "intensity_shift":
            return cls(name, float(arg or 0.0))
        if arg:
            raise ValueError(f"transform {name!r} takes no argument")
        return cls(name)

    @property
    def tag(self) -> str:
        return f"intensity_shift:{self.delta!r}" if self.kind == "intensity_shift" else self.kind

    def apply(self, arr: np.ndarray) -> np.ndarray:
        """Forward transform of an image (or map) in (H, W, ...) layout."""
        if self.kind == "hflip":
            return arr[:, ::-1]
        if self.kind == "vflip":
            return arr[::-1]
        if self.kind == "intensity_shift":
            return arr + self.delta
        return arr

    def invert_spatial(self, arr: np.ndarray) -> np.ndarray:
        # flips are their own inverse; intensity shifts do not move pixels
        if self.kind in ("hflip", "vflip"):
            return self.apply(arr)
        return arr


def validate_probmap(prob: np.ndarray, atol: float = 1e-6) -> np.ndarray:
    prob = np.asarray(prob, dtype=np.float64)
    if prob.ndim != 3:
        raise ValueError(f"probability map must be (H, W, C), got {prob.shape}")
    if np.any(prob < 0) or not np.allclose(prob.sum(axis=2), 1.0, atol=atol):
        raise ValueError("probability vectors must be non-negative and sum to 1")
    return prob


def align(prob: np.ndarray, t: TtaTransform) -> np.ndarray:
    """Bring a map predicted on a transformed input back to the reference frame."""
    return np.ascontiguousarray(t.invert_spatial(np.asarray(prob)))


def uncertainty_map(aligned: Sequence[np.ndarray], statistic: str = "entropy") -> np.ndarray:
    """Per-pixel uncertainty in [0, 1].

    ``entropy``: entropy of the mean probability vector divided by ln(C).
    ``std_maxprob``: twice the standard deviation, across maps, of each
    map's top-class probability (the factor 2 makes the bound 1).
    """
    if not aligned:
        raise ValueError("need at least one probability map")
    shape = np.shape(aligned[0])
    for k, p in enumerate(aligned):
        if np.shape(p) != shape:
            raise ValueError(f"map #{k} has shape {np.shape(p)}, expected {shape}")
    stack = np.stack([np.asarray(p, dtype=np.float64) for p in aligned])
    n_classes = shape[-1]
    if statistic == "entropy":
        mean = stack.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(mean > 0, mean * np.log(mean), 0.0)
        u = -plogp.sum(axis=-1) / math.log(n_classes)
    elif statistic == "std_maxprob":
        u = 2.0 * stack.max(axis=-1).std(axis=0)
    else:
        raise ValueError(f"unknown uncertainty statistic {statistic!r}")
    # adding 0.0 turns the -0.0 of zero-entropy pixels into +0.0
    return np.clip(u, 0.0, 1.0) + 0.0


def render_hot(u: np.ndarray) -> np.ndarray:
    """Black-red-yellow-white colour map as (H, W, 3) uint8."""
    u = np.asarray(u, dtype=np.float64)
    if np.any((u < 0) | (u > 1)):
        warnings.warn("uncertainty values outside [0, 1] were clipped", RuntimeWarning, stacklevel=2)
        u = np.clip(u, 0.0, 1.0)
    rgb = np.stack([np.clip(3 * u - k, 0.0, 1.0) for k in range(3)], axis=-1)
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def write_float_map(path, arr: np.ndarray) -> None:
    """JSON header line, then little-endian float32 planes (C, H, W)."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    header = {"format": PROBMAP_FORMAT, "version": PROBMAP_VERSION, "height": h, "width": w,
              "channels": c, "dtype": "float32-le", "layout": "planar"}
    planar = np.ascontiguousarray(np.moveaxis(arr, 2, 0)).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(planar.tobytes())


def read_float_map(path) -> np.ndarray:
    """Inverse of :func:`write_float_map`; returns (H, W, C) float64."""
    raw = Path(path).read_bytes()
    head, sep, body = raw.partition(b"\n")
    if not sep:
        raise ValueError(f"{path}: missing header line")
    header = json.loads(head)
    if header.get("format") != PROBMAP_FORMAT:
        raise ValueError(f"{path}: not a {PROBMAP_FORMAT} file")
    if header.get("version") != PROBMAP_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')}")
    h, w, c = header["height"], header["width"], header["channels"]
    data = np.frombuffer(body, dtype="<f4")
    if data.size != h * w * c:
        raise ValueError(f"{path}: expected {h * w * c} floats, found {data.size}")
    return np.moveaxis(data.reshape(c, h, w), 0, 2).astype(np.float64)
