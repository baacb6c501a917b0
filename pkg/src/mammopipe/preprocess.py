"""Vendor-specific preprocessing of raw mammograms into 8-bit images."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core_types import AnnotatedSample, to_uint8

__all__ = [
    "RawImage",
    "PipelineSpec",
    "PipelineResult",
    "pipeline_for",
    "window_bounds",
    "inverted_window_bounds",
    "window_rescale",
    "invert_window_rescale",
    "percentile_normalize",
    "clahe",
    "clahe_tile_mappings",
    "rescale_0_255",
    "mirror",
    "flip_if_left",
    "run_pipeline",
    "DEFAULT_CLIP_LIMIT",
    "TILE_GRID",
]

TILE_GRID = 8
DEFAULT_CLIP_LIMIT = 0.01
N_BINS = 256

STEPS = (
    "window_rescale",
    "invert_window_rescale",
    "percentile_normalize",
    "clahe",
    "rescale_0_255",
    "flip_if_left",
)


@dataclass(frozen=True)
class RawImage:
    """Intensities of arbitrary range plus the acquisition metadata we need."""

    data: np.ndarray
    window_center: float | None = None
    window_width: float | None = None
    laterality: str = "right"
    view: str = "MLO"
    spacing: float | None = None
    degenerate: bool = False

    def __post_init__(self):
        if np.asarray(self.data).ndim != 2:
            raise ValueError("raw image must be 2-D")
        if self.window_width is not None and self.window_width <= 0:
            raise ValueError(f"window width must be positive, got {self.window_width}")

    def with_data(self, data, **changes) -> "RawImage":
        return replace(self, data=data, **changes)


@dataclass(frozen=True)
class PipelineSpec:
    vendor: str
    steps: tuple[str, ...]
    clip_limit: float = DEFAULT_CLIP_LIMIT
    percentile_method: str = "linear"

    def __post_init__(self):
        unknown = [s for s in self.steps if s not in STEPS]
        if unknown:
            raise ValueError(f"unknown pipeline steps: {unknown}")


_BASE_STEPS = ("percentile_normalize", "clahe", "rescale_0_255", "flip_if_left")


def pipeline_for(
    vendor: str, clip_limit: float = DEFAULT_CLIP_LIMIT, percentile_method: str = "linear"
) -> PipelineSpec:
    vendor = vendor.upper()
    if vendor == "IMS":
        steps = ("window_rescale",) + _BASE_STEPS
    elif vendor == "PLANMED":
        steps = ("invert_window_rescale",) + _BASE_STEPS
    else:
        steps = _BASE_STEPS
    return PipelineSpec(vendor, steps, clip_limit, percentile_method)


def _linear_rescale(data: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip((np.asarray(data, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def _require_window(img: RawImage) -> tuple[float, float]:
    if img.window_center is None or img.window_width is None:
        raise ValueError("windowing requires both window_center and window_width")
    return float(img.window_center), float(img.window_width)


def window_bounds(c: float, w: float) -> tuple[float, float]:
    """Display bounds for IMS images; the lower bound is extended by a quarter width."""
    return c - math.floor(w / 2) - math.floor(0.25 * w), c + math.floor(w / 2)


def inverted_window_bounds(c: float, w: float) -> tuple[float, float]:
    """Bounds applied to the negated PLANMED image."""
    return -(c + math.floor(w / 2) + math.floor(0.25 * w)), -(c - math.floor(w / 2))


def window_rescale(img: RawImage) -> RawImage:
    c, w = _require_window(img)
    lo, hi = window_bounds(c, w)
    return img.with_data(_linear_rescale(img.data, lo, hi))


def invert_window_rescale(img: RawImage) -> RawImage:
    c, w = _require_window(img)
    lo, hi = inverted_window_bounds(c, w)
    return img.with_data(_linear_rescale(-np.asarray(img.data, dtype=np.float64), lo, hi))


def percentile_normalize(
    img: RawImage, lower: float = 2.0, upper: float = 98.0, method: str = "linear"
) -> RawImage:
    """Map the 2nd/98th percentiles to 0/1 and clip.

    Percentiles use linear interpolation between order statistics. A
    zero-width window yields all zeros with ``degenerate`` set.
    """
    data = np.asarray(img.data, dtype=np.float64)
    if data.size == 0:
        raise ValueError("cannot normalize an empty image")
    p_lo, p_hi = np.percentile(data, [lower, upper], method=method)
    if not p_hi > p_lo:
        return img.with_data(np.zeros_like(data), degenerate=True)
    return img.with_data(_linear_rescale(data, p_lo, p_hi))


def _tile_shape(h: int, w: int) -> tuple[int, int]:
    return math.ceil(h / TILE_GRID), math.ceil(w / TILE_GRID)


def _clip_histogram(hist: np.ndarray, limit: float) -> np.ndarray:
    excess = np.maximum(hist - limit, 0.0).sum()
    return np.minimum(hist, limit) + excess / hist.size


def clahe_tile_mappings(img: np.ndarray, clip_limit: float = DEFAULT_CLIP_LIMIT) -> np.ndarray:
    """Per-tile grey-level mappings, shape ``(8, 8, 256)`` with values in [0, 255].

    The image is edge-padded to a multiple of the tile size for histogram
    purposes only. ``clip_limit`` is the fraction of a tile's pixel count
    allowed in any single bin; the clipped excess is spread uniformly.
    """
    img = np.asarray(img)
    h, w = img.shape
    th, tw = _tile_shape(h, w)
    padded = np.pad(img, ((0, th * TILE_GRID - h), (0, tw * TILE_GRID - w)), mode="edge")
    tiles = padded.reshape(TILE_GRID, th, TILE_GRID, tw).swapaxes(1, 2).reshape(TILE_GRID, TILE_GRID, -1)
    n = th * tw
    limit = max(clip_limit * n, 1.0)
    maps = np.empty((TILE_GRID, TILE_GRID, N_BINS))
    for i in range(TILE_GRID):
        for j in range(TILE_GRID):
            hist = np.bincount(tiles[i, j], minlength=N_BINS).astype(np.float64)
            hist = _clip_histogram(hist, limit)
            maps[i, j] = np.cumsum(hist) * (255.0 / n)
    return np.clip(maps, 0.0, 255.0)


def _interp_weights(n_px: int, tile: int):
    # tile centres in pixel-index coordinates; clamp outside the outer centres
    pos = (np.arange(n_px) + 0.5) / tile - 0.5
    pos = np.clip(pos, 0.0, TILE_GRID - 1.0)
    i0 = np.minimum(np.floor(pos).astype(int), TILE_GRID - 2)
    return i0, pos - i0


def clahe(img: np.ndarray, clip_limit: float = DEFAULT_CLIP_LIMIT) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization on an 8x8 tile grid.

    Tile size is ``ceil(H/8) x ceil(W/8)``; mappings of the four nearest tile
    centres are blended bilinearly.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("CLAHE expects a single-channel image")
    h, w = img.shape
    if h < TILE_GRID or w < TILE_GRID:
        raise ValueError(f"CLAHE needs at least {TILE_GRID}x{TILE_GRID} pixels, got {w}x{h}")
    if img.dtype != np.uint8:
        img = to_uint8(img)
    maps = clahe_tile_mappings(img, clip_limit)
    th, tw = _tile_shape(h, w)
    r0, fr = _interp_weights(h, th)
    c0, fc = _interp_weights(w, tw)
    R0, C0 = r0[:, None], c0[None, :]
    FR, FC = fr[:, None], fc[None, :]
    v = img.astype(np.intp)
    out = (
        (1 - FR) * (1 - FC) * maps[R0, C0, v]
        + (1 - FR) * FC * maps[R0, C0 + 1, v]
        + FR * (1 - FC) * maps[R0 + 1, C0, v]
        + FR * FC * maps[R0 + 1, C0 + 1, v]
    )
    return to_uint8(out)


def rescale_0_255(img: np.ndarray) -> np.ndarray:
    """Min-max stretch to the full 8-bit range; constant images map to zero."""
    data = np.asarray(img, dtype=np.float64)
    lo, hi = data.min(), data.max()
    if hi <= lo:
        return np.zeros(data.shape, dtype=np.uint8)
    return to_uint8((data - lo) * (255.0 / (hi - lo)))


def mirror(sample: AnnotatedSample) -> AnnotatedSample:
    """Mirror about the vertical axis and swap the laterality tag."""
    labels = None if sample.labels is None else sample.labels[:, ::-1].copy()
    lat = "right" if sample.laterality == "left" else "left"
    return sample.replace(image=sample.image[:, ::-1].copy(), labels=labels, laterality=lat)


def flip_if_left(sample: AnnotatedSample) -> AnnotatedSample:
    return mirror(sample) if sample.laterality == "left" else sample


@dataclass(frozen=True)
class PipelineResult:
    sample: AnnotatedSample
    degenerate: bool = False
    flipped: bool = False
    trace: tuple[str, ...] = field(default=())


def run_pipeline(
    raw: RawImage,
    spec: PipelineSpec,
    labels: np.ndarray | None = None,
    *,
    sample_id: str = "",
) -> PipelineResult:
    """Apply ``spec.steps`` in order and return the 8-bit annotated sample."""
    cur: RawImage = raw
    image: np.ndarray | None = None
    sample: AnnotatedSample | None = None
    flipped = False
    for step in spec.steps:
        if step == "window_rescale":
            cur = window_rescale(cur)
        elif step == "invert_window_rescale":
            cur = invert_window_rescale(cur)
        elif step == "percentile_normalize":
            cur = percentile_normalize(cur, method=spec.percentile_method)
        elif step == "clahe":
            src = image if image is not None else to_uint8(np.asarray(cur.data) * 255.0)
            image = clahe(src, spec.clip_limit)
        elif step == "rescale_0_255":
            image = rescale_0_255(image if image is not None else np.asarray(cur.data) * 255.0)
        elif step == "flip_if_left":
            if image is None:
                image = to_uint8(np.asarray(cur.data) * 255.0)
            sample = _as_sample(image, labels, spec, cur, sample_id)
            flipped = sample.laterality == "left"
            sample = flip_if_left(sample)
            image = sample.image
            labels = sample.labels
    if image is None:
        image = to_uint8(np.asarray(cur.data) * 255.0)
    if sample is None:
        sample = _as_sample(image, labels, spec, cur, sample_id)
    return PipelineResult(sample=sample, degenerate=cur.degenerate, flipped=flipped, trace=spec.steps)


def _as_sample(image, labels, spec, raw: RawImage, sample_id) -> AnnotatedSample:
    vendor = spec.vendor if spec.vendor in ("GE", "IMS", "PLANMED", "HOLOGIC") else "OTHER"
    return AnnotatedSample(
        image=image,
        labels=labels,
        vendor=vendor,
        laterality=raw.laterality,
        view=raw.view,
        spacing=raw.spacing,
        sample_id=sample_id,
    )
