"""Polygon annotations to label maps, and label maps to structure contours."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core_types import ClassId, mask_of

__all__ = [
    "Polygon",
    "ContourSet",
    "Z_ORDER",
    "rasterize_polygons",
    "fill_polygon",
    "extract_contour",
    "load_polygons",
    "dump_polygons",
]

# drawn first to last; later structures overwrite earlier ones
Z_ORDER = (ClassId.FATTY, ClassId.FIBROGLANDULAR, ClassId.PECTORAL, ClassId.NIPPLE)


@dataclass(frozen=True)
class Polygon:
    cls: ClassId
    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError(f"polygon needs at least 3 vertices, got {len(self.vertices)}")
        if int(self.cls) == ClassId.BACKGROUND or int(self.cls) not in ClassId._value2member_map_:
            raise ValueError(f"polygon class must be a foreground structure, got {self.cls!r}")
        object.__setattr__(self, "cls", ClassId(int(self.cls)))

    @classmethod
    def of(cls, class_id: int, points: Iterable[Sequence[float]]) -> "Polygon":
        return cls(ClassId(int(class_id)), tuple((float(x), float(y)) for x, y in points))


@dataclass(frozen=True)
class ContourSet:
    cls: ClassId
    points: np.ndarray  # (N, 2) integer (x, y), sorted by (y, x)

    def __len__(self):
        return len(self.points)

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(x), int(y)) for x, y in self.points}


def fill_polygon(vertices, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centres ``(x + 0.5, y + 0.5)``."""
    v = np.asarray(vertices, dtype=np.float64)
    xi, yi = v[:, 0], v[:, 1]
    xj, yj = np.roll(xi, -1), np.roll(yi, -1)
    out = np.zeros((height, width), dtype=bool)
    y_lo = max(int(np.floor(yi.min())) - 1, 0)
    y_hi = min(int(np.ceil(yi.max())) + 1, height)
    for y in range(y_lo, y_hi):
        yc = y + 0.5
        crosses = (yi > yc) != (yj > yc)
        if not crosses.any():
            continue
        a_x, a_y, b_x, b_y = xi[crosses], yi[crosses], xj[crosses], yj[crosses]
        xs = np.sort((b_x - a_x) * (yc - a_y) / (b_y - a_y) + a_x)
        for x0, x1 in zip(xs[0::2], xs[1::2]):
            # centres c with x0 <= c < x1
            start = max(int(np.ceil(x0 - 0.5)), 0)
            stop = min(int(np.ceil(x1 - 0.5)), width)
            if stop > start:
                out[y, start:stop] ^= True
    return out


def rasterize_polygons(polys: Sequence[Polygon], width: int, height: int) -> np.ndarray:
    if width <= 0 or height <= 0:
        raise ValueError(f"raster size must be positive, got {width}x{height}")
    labels = np.zeros((height, width), dtype=np.uint8)
    rank = {c: i for i, c in enumerate(Z_ORDER)}
    # stable sort keeps input order among polygons of the same class
    for poly in sorted(polys, key=lambda p: rank[p.cls]):
        labels[fill_polygon(poly.vertices, width, height)] = int(poly.cls)
    return labels


def extract_contour(labels: np.ndarray, cls: int) -> ContourSet:
    """Pixels of ``cls`` that touch (4-adjacency) another class or the border."""
    m = mask_of(labels, cls)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    ys, xs = np.nonzero(m & ~interior)
    return ContourSet(ClassId(int(cls)), np.stack([xs, ys], axis=1).astype(np.int64))


def load_polygons(path) -> list[Polygon]:
    """Read ``[{"class": int, "points": [[x, y], ...]}, ...]``."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        raw = raw.get("polygons", [])
    polys = []
    for k, item in enumerate(raw):
        try:
            polys.append(Polygon.of(item["class"], item["points"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{Path(path)}: polygon #{k}: {exc}") from exc
    return polys


def dump_polygons(polys: Sequence[Polygon], path) -> None:
    data = [{"class": int(p.cls), "points": [list(v) for v in p.vertices]} for p in polys]
    Path(path).write_text(json.dumps(data, indent=1), encoding="utf-8")
