"""Annotation-guided intensity manipulation and balanced training-stream mixing."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

from .core_types import ClassId, mask_of, rand_uniform, to_uint8

__all__ = [
    "ManipulationOutcome",
    "MixPolicy",
    "CATEGORIES",
    "STYLE25",
    "COMBO20",
    "ConfigError",
    "masked_mean",
    "masked_percentile",
    "rescale_intensity",
    "add_synthetic_label",
    "render_text",
    "manipulate",
    "manipulate_sample",
    "mix_stream",
]

CATEGORIES = ("original", "manipulated", "style_IMS", "style_PLANMED", "style_HOLOGIC")
LABEL_TEXTS = ("LMLO", "RMLO", "LCC", "RCC")


class ConfigError(ValueError):
    pass


def masked_mean(img: np.ndarray, mask: np.ndarray) -> float:
    vals = np.asarray(img, dtype=np.float64)[mask]
    if vals.size == 0:
        raise ValueError("mean over an empty mask")
    return float(vals.mean())


def masked_percentile(img: np.ndarray, mask: np.ndarray, q: float) -> float:
    if not 0 <= q <= 100:
        raise ValueError(f"percentile must lie in [0, 100], got {q}")
    vals = np.asarray(img, dtype=np.float64)[mask]
    if vals.size == 0:
        raise ValueError("percentile over an empty mask")
    return float(np.percentile(vals, q, method="linear"))


def rescale_intensity(img, in_range, out_range=(0.0, 255.0), *, quantize: bool = True):
    """Linear map of ``in_range`` onto ``out_range`` with clipping.

    With ``quantize`` the result is rounded (ties away from zero) to uint8,
    otherwise the real-valued image is returned.
    """
    x_min, x_max = map(float, in_range)
    y_min, y_max = map(float, out_range)
    if not x_min < x_max:
        raise ValueError(f"input range must satisfy x_min < x_max, got {in_range}")
    if y_min > y_max:
        raise ValueError(f"output range must satisfy y_min <= y_max, got {out_range}")
    t = np.clip((np.asarray(img, dtype=np.float64) - x_min) / (x_max - x_min), 0.0, 1.0)
    out = t * (y_max - y_min) + y_min
    return to_uint8(out) if quantize else out


# 5x7 bitmaps, one string per row, '#' = lit
_FONT = {
    "L": ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
    "M": ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
    "O": [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "R": ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
    "C": [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."],
}


def render_text(text: str, scale: int = 1) -> np.ndarray:
    """Boolean glyph block for ``text``: 5x7 cells separated by one blank column."""
    cols = []
    for k, ch in enumerate(text):
        if k:
            cols.append(np.zeros((7, 1), dtype=bool))
        cols.append(np.array([[c == "#" for c in row] for row in _FONT[ch]]))
    block = np.concatenate(cols, axis=1)
    return np.kron(block, np.ones((scale, scale), dtype=bool)).astype(bool)


@dataclass(frozen=True)
class LabelStamp:
    text: str
    x: int
    y: int
    scale: int
    shape: tuple[int, int]

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1), exclusive upper bounds."""
        return self.x, self.y, self.x + self.shape[1], self.y + self.shape[0]


def add_synthetic_label(img: np.ndarray, rng, *, return_stamp: bool = False):
    """Stamp a white laterality/view label near the top-left corner.

    The glyph scale grows with image size (one font pixel per 128 image
    pixels of the shorter side). The top-left corner is uniform over
    ``[0, 0.15 W] x [0, 0.15 H]``.
    """
    img = np.asarray(img)
    h, w = img.shape
    if h < 64 or w < 64:
        raise ValueError(f"synthetic label needs an image of at least 64x64, got {w}x{h}")
    text = LABEL_TEXTS[rng.randint(len(LABEL_TEXTS))]
    scale = max(1, min(h, w) // 128)
    glyph = render_text(text, scale)
    x = int(rand_uniform(rng, 0.0, 0.15 * w))
    y = int(rand_uniform(rng, 0.0, 0.15 * h))
    gh = min(glyph.shape[0], h - y)
    gw = min(glyph.shape[1], w - x)
    out = img.copy()
    region = out[y : y + gh, x : x + gw]
    region[glyph[:gh, :gw]] = 255
    stamp = LabelStamp(text, x, y, scale, (gh, gw))
    return (out, stamp) if return_stamp else out


@dataclass
class ManipulationOutcome:
    image: np.ndarray
    applied: bool
    scale: float
    a_min: float | None = None
    a_max: float | None = None
    background_zeroed: bool = False
    label_added: bool = False
    degraded: str | None = None
    stats: dict = field(default_factory=dict)
    stamp: LabelStamp | None = None

    def summary(self) -> dict:
        """JSON-ready record without the pixel data."""
        d = {
            "applied": self.applied,
            "scale": self.scale,
            "a_min": self.a_min,
            "a_max": self.a_max,
            "background_zeroed": self.background_zeroed,
            "label_added": self.label_added,
            "degraded": self.degraded,
            "stats": self.stats,
        }
        if self.stamp is not None:
            d["stamp"] = asdict(self.stamp)
        return d


def manipulate(img, m_nip, m_fib, m_fat, m_b, rng) -> ManipulationOutcome:
    """Randomized intensity remapping guided by the annotated structures.

    ``rng`` needs ``random()``, ``uniform(lo, hi)`` and ``randint(n)``;
    draws are consumed in a fixed order so a pinned transcript replays
    the same output. Intensities stay real-valued until the final
    quantization.
    """
    scale = rng.uniform(0.8, 1.2)
    work = np.clip(np.asarray(img, dtype=np.float64) * scale, 0.0, 255.0)

    def early(**kw):
        return ManipulationOutcome(image=to_uint8(work), scale=scale, **kw)

    if rng.uniform(0.0, 1.0) < 0.5:
        return early(applied=False)

    for name, m in (("nipple", m_nip), ("fibroglandular", m_fib), ("fatty", m_fat)):
        if not np.any(m):
            return early(applied=False, degraded=f"empty {name} mask")

    mu_nip = masked_mean(work, m_nip)
    mu_fat = masked_mean(work, m_fat)
    mu_fib = masked_mean(work, m_fib)
    p_fat = masked_percentile(work, m_fat, 5)
    a_min = float(np.clip(rng.uniform(p_fat - 20, p_fat + 20), 0, 255))
    b = 0.7 * mu_fat + 0.3 * mu_fib
    if a_min > mu_nip - 5:
        a_min = max(0.0, mu_nip - 5)
    elif rng.uniform(0.0, 1.0) < 0.5 and (mu_nip - 5) < b:
        a_min = rng.uniform(max(0.0, mu_nip - 5), mu_nip)
    a_max = float(np.percentile(work, 98, method="linear"))
    stats = {"mu_nip": mu_nip, "mu_fat": mu_fat, "mu_fib": mu_fib, "p_fat": p_fat, "b": b}
    if not a_max > a_min:
        return early(applied=False, a_min=a_min, a_max=a_max, stats=stats,
                     degraded="a_max <= a_min")

    out = rescale_intensity(work, (a_min, a_max), (0, 255), quantize=False)
    zeroed = rng.uniform(0.0, 1.0) < 0.5
    if zeroed:
        out[np.asarray(m_b, dtype=bool)] = 0.0
    out = to_uint8(out)
    stamp = None
    labelled = rng.uniform(0.0, 1.0) < 0.5
    if labelled:
        out, stamp = add_synthetic_label(out, rng, return_stamp=True)
    return ManipulationOutcome(
        image=out,
        applied=True,
        scale=scale,
        a_min=a_min,
        a_max=a_max,
        background_zeroed=zeroed,
        label_added=labelled,
        stats=stats,
        stamp=stamp,
    )


def manipulate_sample(image: np.ndarray, labels: np.ndarray, rng) -> ManipulationOutcome:
    return manipulate(
        image,
        mask_of(labels, ClassId.NIPPLE),
        mask_of(labels, ClassId.FIBROGLANDULAR),
        mask_of(labels, ClassId.FATTY),
        mask_of(labels, ClassId.BACKGROUND),
        rng,
    )


@dataclass(frozen=True)
class MixPolicy:
    weights: Mapping[str, float]

    def __post_init__(self):
        unknown = set(self.weights) - set(CATEGORIES)
        if unknown:
            raise ConfigError(f"unknown mix categories: {sorted(unknown)}")
        if any(v < 0 for v in self.weights.values()):
            raise ConfigError("mix weights must be non-negative")
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"mix weights must sum to 1, got {total}")
        # canonical category order, zero-filled
        object.__setattr__(self, "weights", {c: float(self.weights.get(c, 0.0)) for c in CATEGORIES})

    @classmethod
    def from_json(cls, path) -> "MixPolicy":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data.get("weights", data))

    @classmethod
    def named(cls, name: str) -> "MixPolicy":
        presets = {"style25": STYLE25, "combo20": COMBO20}
        if name in presets:
            return presets[name]
        return cls.from_json(name)

    def to_dict(self) -> dict:
        return dict(self.weights)

    def draw(self, rng) -> str:
        u = rng.random()
        acc = 0.0
        last = None
        for cat, wt in self.weights.items():
            if wt <= 0:
                continue
            acc += wt
            last = cat
            if u < acc:
                return cat
        return last


STYLE25 = MixPolicy({"original": 0.25, "style_IMS": 0.25, "style_PLANMED": 0.25, "style_HOLOGIC": 0.25})
COMBO20 = MixPolicy({c: 0.2 for c in CATEGORIES})


def mix_stream(
    sources: Mapping[str, Iterable | Callable[[], object]],
    policy: MixPolicy,
    rng,
    n: int | None = None,
) -> Iterator[tuple[str, object]]:
    """Yield ``(category, sample)`` pairs with categories drawn from ``policy``.

    A source is an iterable (consumed lazily) or a zero-argument callable.
    """
    missing = [c for c, w in policy.weights.items() if w > 0 and c not in sources]
    if missing:
        raise ConfigError(f"no provider for categories with positive weight: {missing}")
    iters = {}
    for cat, src in sources.items():
        iters[cat] = src if callable(src) else iter(src).__next__
    k = 0
    while n is None or k < n:
        cat = policy.draw(rng)
        try:
            item = iters[cat]()
        except StopIteration:
            return
        yield cat, item
        k += 1
