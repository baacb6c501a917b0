"""Shared domain types: class taxonomy, annotated samples, masks and RNG streams.

Images are plain 2-D numpy arrays in row-major ``(height, width)`` order.
8-bit images use ``uint8``; label maps use ``uint8`` class indices.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ClassId",
    "FOREGROUND",
    "STRUCTURE_NAMES",
    "VENDORS",
    "AnnotatedSample",
    "SeededRng",
    "ScriptedRng",
    "mask_of",
    "class_masks",
    "rand_uniform",
    "round_half_away",
    "to_uint8",
    "to_model_input",
    "validate_labels",
]


class ClassId(IntEnum):
    BACKGROUND = 0
    NIPPLE = 1
    PECTORAL = 2
    FIBROGLANDULAR = 3
    FATTY = 4


N_CLASSES = len(ClassId)
FOREGROUND: tuple[ClassId, ...] = (
    ClassId.NIPPLE,
    ClassId.PECTORAL,
    ClassId.FIBROGLANDULAR,
    ClassId.FATTY,
)
# column headers used by every tabular output
STRUCTURE_NAMES = {
    ClassId.BACKGROUND: "Background",
    ClassId.NIPPLE: "Nipple",
    ClassId.PECTORAL: "Pectoral",
    ClassId.FIBROGLANDULAR: "Fib. Tissue",
    ClassId.FATTY: "Fat. Tissue",
}
VENDORS = ("GE", "IMS", "PLANMED", "HOLOGIC", "OTHER")
LATERALITIES = ("left", "right")
VIEWS = ("MLO", "CC")


def round_half_away(x):
    """Round to nearest integer, ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(x) -> np.ndarray:
    """Clip a real-valued array to [0, 255] and quantize it."""
    return round_half_away(np.clip(x, 0.0, 255.0)).astype(np.uint8)


def to_model_input(img: np.ndarray) -> np.ndarray:
    """Float variant in [0, 1] fed to the segmentation network."""
    return np.asarray(img, dtype=np.float32) / np.float32(255.0)


def validate_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise ValueError("label map contains values outside the class set 0..4")
    return labels.astype(np.uint8, copy=False)


def mask_of(labels: np.ndarray, cls: int) -> np.ndarray:
    """Binary mask of the pixels labelled ``cls``."""
    return np.asarray(labels) == int(cls)


def class_masks(labels: np.ndarray) -> dict[ClassId, np.ndarray]:
    return {c: mask_of(labels, c) for c in ClassId}


@dataclass(frozen=True)
class AnnotatedSample:
    image: np.ndarray
    labels: np.ndarray | None = None
    vendor: str = "GE"
    laterality: str = "right"
    view: str = "MLO"
    spacing: float | None = None
    sample_id: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.image.ndim != 2:
            raise ValueError(f"image must be single-channel 2-D, got shape {self.image.shape}")
        if self.labels is not None:
            validate_labels(self.labels)
            if self.labels.shape != self.image.shape:
                raise ValueError(
                    f"image {self.image.shape} and labels {self.labels.shape} differ in size"
                )
        if self.vendor not in VENDORS:
            raise ValueError(f"unknown vendor {self.vendor!r}")
        if self.laterality not in LATERALITIES:
            raise ValueError(f"unknown laterality {self.laterality!r}")
        if self.view not in VIEWS:
            raise ValueError(f"unknown view {self.view!r}")

    def replace(self, **changes) -> "AnnotatedSample":
        return replace(self, **changes)


def _id_key(sample_id) -> int:
    digest = hashlib.blake2b(str(sample_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SeededRng:
    """Reproducible random stream.

    Backed by numpy's counter-based Philox generator keyed through a
    ``SeedSequence``. :meth:`for_sample` derives an independent stream from
    ``(seed, blake2b(sample_id))`` so a sample's draws never depend on the
    order in which samples are processed.
    """

    def __init__(self, seed: int, *, key: Sequence[int] = ()):
        self.seed = int(seed)
        self._entropy = (self.seed & 0xFFFFFFFFFFFFFFFF, *key)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(self._entropy)))

    @classmethod
    def for_sample(cls, seed: int, sample_id) -> "SeededRng":
        return cls(seed, key=(_id_key(sample_id),))

    def random(self) -> float:
        return float(self._gen.random())

    def uniform(self, lo: float, hi: float) -> float:
        return rand_uniform(self, lo, hi)

    def randint(self, n: int) -> int:
        """Integer in ``[0, n)``."""
        return int(self._gen.integers(0, n))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, entropy={self._entropy!r})"


class ScriptedRng:
    """Replays a fixed transcript of draws.

    Every call to :meth:`uniform` or :meth:`random` consumes the next value
    verbatim; this pins the branches of stochastic procedures in tests.
    """

    def __init__(self, values: Iterable[float]):
        self._values = list(values)
        self._pos = 0

    def _next(self) -> float:
        if self._pos >= len(self._values):
            raise IndexError("scripted RNG transcript exhausted")
        v = self._values[self._pos]
        self._pos += 1
        return float(v)

    def random(self) -> float:
        return self._next()

    def uniform(self, lo: float, hi: float) -> float:
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi})")
        return self._next()

    def randint(self, n: int) -> int:
        return int(self._next()) % n

    @property
    def consumed(self) -> int:
        return self._pos


def rand_uniform(rng, lo: float, hi: float) -> float:
    """Uniform draw in ``[lo, hi)``; degenerate intervals return ``lo``."""
    if lo > hi:
        raise ValueError(f"empty interval: lo={lo} > hi={hi}")
    if lo == hi:
        return float(lo)
    u = rng.random()
    v = lo + (hi - lo) * u
    # lo + (hi-lo)*u can round up to hi for u close to 1
    return float(v) if v < hi else float(np.nextafter(hi, lo))
