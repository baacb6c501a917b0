"""File formats: images, label maps, manifests, metric and statistics CSVs, run config."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .core_types import FOREGROUND, N_CLASSES, ClassId, STRUCTURE_NAMES, validate_labels
from .metrics import METRICS, MetricRecord, Summary
from .preprocess import RawImage

__all__ = [
    "FormatError",
    "ManifestRow",
    "RunConfig",
    "STRUCTURE_KEYS",
    "atomic_write_bytes",
    "atomic_write_text",
    "read_gray",
    "write_gray",
    "read_labels",
    "write_labels",
    "write_rgb",
    "read_raw",
    "read_manifest",
    "write_manifest",
    "write_metrics_csv",
    "read_metrics_csv",
    "write_summary_csv",
    "write_significance_csv",
]

STRUCTURE_KEYS = {
    ClassId.BACKGROUND: "background",
    ClassId.NIPPLE: "nipple",
    ClassId.PECTORAL: "pectoral",
    ClassId.FIBROGLANDULAR: "fibroglandular",
    ClassId.FATTY: "fatty",
}
KEY_TO_CLASS = {v: k for k, v in STRUCTURE_KEYS.items()}
# label palette: background black, nipple green, pectoral blue, fibroglandular magenta, fatty yellow
LABEL_PALETTE = [0, 0, 0, 0, 255, 0, 0, 0, 255, 255, 0, 255, 255, 255, 0]

METRICS_HEADER = "# mammopipe.metrics v1"
SUMMARY_HEADER = "# mammopipe.summary v1"
SIGNIFICANCE_HEADER = "# mammopipe.significance v1"
MANIFEST_HEADER = "# mammopipe.manifest v1"
MANIFEST_COLUMNS = (
    "id", "image_path", "label_path", "vendor", "laterality", "view",
    "spacing_m", "window_center", "window_width",
)


class FormatError(ValueError):
    """Malformed input file; ``path`` and ``row`` locate the problem."""

    def __init__(self, message: str, path=None, row: int | None = None):
        self.path = None if path is None else str(path)
        self.row = row
        where = self.path or "<input>"
        if row is not None:
            where += f" row {row}"
        super().__init__(f"{where}: {message}")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _png_bytes(im: Image.Image) -> bytes:
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def read_gray(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read image: {exc}", path) from exc
    if arr.ndim == 3:
        arr = arr[..., :3].mean(axis=2)
    return arr


def write_gray(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError("only 8-bit images are written")
    atomic_write_bytes(path, _png_bytes(Image.fromarray(img, mode="L")))


def write_rgb(path, img: np.ndarray) -> None:
    atomic_write_bytes(path, _png_bytes(Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB")))


def read_labels(path) -> np.ndarray:
    arr = read_gray(path)
    try:
        return validate_labels(arr)
    except ValueError as exc:
        raise FormatError(str(exc), path) from exc


def write_labels(path, labels: np.ndarray) -> None:
    im = Image.fromarray(validate_labels(labels), mode="P")
    im.putpalette(LABEL_PALETTE)
    atomic_write_bytes(path, _png_bytes(im))


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def read_sidecar(path) -> dict:
    p = _sidecar_path(Path(path))
    if not p.exists():
        return {}
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid sidecar JSON: {exc}", p) from exc


def read_raw(path, overrides: Mapping | None = None) -> tuple[RawImage, dict]:
    """Load a raw mammogram (8/16-bit PNG or headerless binary) and its sidecar.

    The sidecar lives next to the image as ``<name>.json``; keys in
    ``overrides`` (typically manifest columns) win over the sidecar.
    """
    path = Path(path)
    meta = read_sidecar(path)
    meta.update({k: v for k, v in (overrides or {}).items() if v not in (None, "")})
    if path.suffix.lower() == ".png":
        data = read_gray(path).astype(np.float64)
    else:
        try:
            h, w = int(meta["height"]), int(meta["width"])
            dtype = np.dtype(meta.get("dtype", "<u2"))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"binary image needs width/height/dtype in its sidecar ({exc})", path) from exc
        try:
            buf = np.fromfile(path, dtype=dtype)
        except OSError as exc:
            raise FormatError(f"cannot read binary image: {exc}", path) from exc
        if buf.size != h * w:
            raise FormatError(f"expected {h * w} samples, found {buf.size}", path)
        data = buf.reshape(h, w).astype(np.float64)

    def num(key):
        v = meta.get(key)
        return None if v in (None, "") else float(v)

    raw = RawImage(
        data=data,
        window_center=num("window_center"),
        window_width=num("window_width"),
        laterality=str(meta.get("laterality") or "right"),
        view=str(meta.get("view") or "MLO"),
        spacing=num("spacing_m"),
    )
    return raw, meta


@dataclass(frozen=True)
class ManifestRow:
    id: str
    image_path: Path | None
    label_path: Path | None = None
    vendor: str = "GE"
    laterality: str | None = None
    view: str | None = None
    spacing_m: float | None = None
    window_center: float | None = None
    window_width: float | None = None
    extra: tuple[tuple[str, str], ...] = ()

    def get(self, key: str, default=None):
        return dict(self.extra).get(key, default)


def read_manifest(path, *, check_paths: bool = True, required: Sequence[str] = ("id",)) -> list[ManifestRow]:
    """Parse a manifest CSV; relative paths resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read manifest: {exc}", path) from exc
    reader = csv.DictReader(line for line in text.splitlines() if not line.startswith("#"))
    cols = reader.fieldnames or []
    missing = [c for c in required if c not in cols]
    if missing:
        raise FormatError(f"missing column(s) {missing}", path)
    rows, seen = [], set()
    for n, rec in enumerate(reader, start=2):
        sid = (rec.get("id") or "").strip()
        if not sid:
            raise FormatError("empty id", path, n)
        if sid in seen:
            raise FormatError(f"duplicate id {sid!r}", path, n)
        seen.add(sid)

        def p(key):
            v = (rec.get(key) or "").strip()
            if not v:
                return None
            q = Path(v)
            q = q if q.is_absolute() else base / q
            if check_paths and not q.exists():
                raise FormatError(f"{key} does not exist: {q}", path, n)
            return q

        def f(key):
            v = (rec.get(key) or "").strip()
            if not v:
                return None
            try:
                return float(v)
            except ValueError:
                raise FormatError(f"{key} is not a number: {v!r}", path, n) from None

        extra = tuple(sorted((k, v) for k, v in rec.items() if k not in MANIFEST_COLUMNS and k is not None))
        rows.append(ManifestRow(
            id=sid,
            image_path=p("image_path"),
            label_path=p("label_path"),
            vendor=(rec.get("vendor") or "GE").strip().upper(),
            laterality=(rec.get("laterality") or "").strip().lower() or None,
            view=(rec.get("view") or "").strip().upper() or None,
            spacing_m=f("spacing_m"),
            window_center=f("window_center"),
            window_width=f("window_width"),
            extra=extra,
        ))
    return rows


def write_manifest(path, rows: Iterable[Mapping], columns: Sequence[str] = MANIFEST_COLUMNS) -> None:
    buf = io.StringIO()
    buf.write(MANIFEST_HEADER + "\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    atomic_write_text(path, buf.getvalue())


def fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _parse_float(v: str) -> float:
    return math.nan if v in ("", None) else float(v)


METRIC_COLUMNS = ["method", "image_id", "structure", "class_id"] + [
    "hausdorff_m" if m == "hausdorff" else m for m in METRICS
] + ["vacuous", "spacing_m", "spacing_assumed"]


def write_metrics_csv(path, records: Sequence[MetricRecord]) -> None:
    """One row per image and class, plus a ``mean`` row over the foreground classes."""
    buf = io.StringIO()
    buf.write(METRICS_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in sorted(records, key=lambda r: (r.method, r.image_id)):
        for c in range(N_CLASSES):
            w.writerow([r.method, r.image_id, STRUCTURE_KEYS[ClassId(c)], c]
                       + [fmt(r.values[m][c]) for m in METRICS]
                       + [int(bool(r.vacuous[c])), fmt(r.spacing), int(r.spacing_assumed)])
        w.writerow([r.method, r.image_id, "mean", ""]
                   + [fmt(r.foreground_mean(m)) for m in METRICS]
                   + ["", fmt(r.spacing), int(r.spacing_assumed)])
    atomic_write_text(path, buf.getvalue())


def read_metrics_csv(path, method: str | None = None) -> dict[str, dict[tuple[str, str], dict[str, float]]]:
    """``{method: {(metric, structure): {image_id: value}}}``; vacuous entries become NaN.

    ``method`` overrides the method column (defaults to the column, or the
    file stem when the column is blank).
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read metrics file: {exc}", path) from exc
    if not lines or lines[0].strip() != METRICS_HEADER:
        raise FormatError(f"missing header {METRICS_HEADER!r}", path, 1)
    reader = csv.DictReader(lines[1:])
    out: dict = {}
    for n, rec in enumerate(reader, start=3):
        struct = rec.get("structure")
        if struct == "background":
            continue
        if struct not in KEY_TO_CLASS and struct != "mean":
            raise FormatError(f"unknown structure {struct!r}", path, n)
        meth = method or rec.get("method") or path.stem
        vac = rec.get("vacuous") == "1"
        for m in METRICS:
            col = "hausdorff_m" if m == "hausdorff" else m
            try:
                val = math.nan if vac else _parse_float(rec[col])
            except (KeyError, ValueError) as exc:
                raise FormatError(f"bad value in column {col!r}: {exc}", path, n) from None
            out.setdefault(meth, {}).setdefault((m, struct), {})[rec["image_id"]] = val
    return out


SUMMARY_COLUMNS = ["Metric", "Method"] + [STRUCTURE_NAMES[c] for c in FOREGROUND] + ["Mean", "n_images"] + [
    f"excluded_{STRUCTURE_KEYS[c]}" for c in FOREGROUND
]


def summary_rows(summaries: Sequence[Summary]) -> list[list[str]]:
    from .metrics import DISPLAY

    rows = []
    for m in METRICS:
        for s in summaries:
            rows.append([DISPLAY[m], s.method] + [fmt(v) for v in s.row(m)] + [str(s.n_images)]
                        + [str(s.excluded[m][c]) for c in FOREGROUND])
    return rows


def write_summary_csv(path, summaries: Sequence[Summary]) -> None:
    buf = io.StringIO()
    buf.write(SUMMARY_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerows(summary_rows(summaries))
    atomic_write_text(path, buf.getvalue())


def read_summary_csv(path) -> list[dict[str, str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != SUMMARY_HEADER:
        raise FormatError(f"missing header {SUMMARY_HEADER!r}", path, 1)
    return list(csv.DictReader(lines[1:]))


SIGNIFICANCE_COLUMNS = ["metric", "structure", "method_a", "method_b", "z", "p_adj", "H", "p_kw"]


def write_significance_csv(path, report) -> None:
    buf = io.StringIO()
    buf.write(SIGNIFICANCE_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SIGNIFICANCE_COLUMNS)
    for e in report.entries:
        for p in e.pairs:
            w.writerow([e.metric, e.structure, p.a, p.b, fmt(p.z), fmt(p.p_adjusted), fmt(e.h), fmt(e.p_kw)])
    atomic_write_text(path, buf.getvalue())


@dataclass
class RunConfig:
    seed: int = 0
    policy: dict | str = "combo20"
    clip_limit: float = 0.01
    percentile_method: str = "linear"
    alpha: float = 0.05
    tta_statistic: str = "entropy"
    spacing_default: float = 1e-4
    out_dir: str = "out"

    def to_json(self) -> str:
        return json.dumps({"format": "mammopipe.config", "version": 1, **asdict(self)},
                          sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"format", "version"}
        if unknown:
            raise FormatError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})

    def save(self, path) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read config: {exc}", path) from exc
