"""Command-line entry point: ``mammopipe <command> ...``."""
from __future__ import annotations

import argparse
import csv
import io as _io
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import io
from .augment import COMBO20, STYLE25, MixPolicy, manipulate_sample, mix_stream
from .core_types import SeededRng
from .metrics import aggregate, evaluate_pair
from .preprocess import DEFAULT_CLIP_LIMIT, pipeline_for, run_pipeline
from .rasterize import load_polygons, rasterize_polygons
from .report import render_csv, render_text, rows_from_summary_csv
from .stats import significance_table
from .style_proxy import MODEL_SIZE, StyleBank, histogram_match, postprocess_stylized
from .uncertainty import TtaTransform, align, read_float_map, render_hot, uncertainty_map, write_float_map

log = logging.getLogger("mammopipe")

COMMANDS = (
    "preprocess", "rasterize", "augment", "stylize-post", "style-proxy",
    "mix", "evaluate", "compare-stats", "uncertainty", "report",
)


def _threads() -> int:
    try:
        n = int(os.environ.get("MAMMOPIPE_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else min(8, os.cpu_count() or 1)


def _pmap(fn, items):
    """Ordered parallel map capped by MAMMOPIPE_THREADS."""
    items = list(items)
    n = _threads()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _config(args) -> io.RunConfig:
    cfg = io.RunConfig.load(args.config) if getattr(args, "config", None) else io.RunConfig()
    for key in ("seed", "alpha", "clip_limit", "spacing_default", "statistic"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, "tta_statistic" if key == "statistic" else key, val)
    if getattr(args, "policy", None):
        cfg.policy = args.policy
    return cfg


def _rel(path: Path, base: Path) -> str:
    return os.path.relpath(path, base).replace(os.sep, "/")


# --- commands -------------------------------------------------------------

def cmd_preprocess(args) -> int:
    cfg = _config(args)
    rows = io.read_manifest(args.manifest, required=("id", "image_path"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(row: io.ManifestRow):
        overrides = {"window_center": row.window_center, "window_width": row.window_width,
                     "laterality": row.laterality, "view": row.view, "spacing_m": row.spacing_m}
        raw, meta = io.read_raw(row.image_path, overrides)
        labels = io.read_labels(row.label_path) if row.label_path else None
        spec = pipeline_for(row.vendor, cfg.clip_limit, cfg.percentile_method)
        try:
            res = run_pipeline(raw, spec, labels, sample_id=row.id)
        except ValueError as exc:
            raise io.FormatError(f"sample {row.id!r}: {exc}", args.manifest) from exc
        s = res.sample
        img_path = out / f"{row.id}.png"
        io.write_gray(img_path, s.image)
        lab_path = None
        if s.labels is not None:
            lab_path = out / f"{row.id}_labels.png"
            io.write_labels(lab_path, s.labels)
        side = {k: v for k, v in meta.items() if k not in ("width", "height", "dtype")}
        side.update({"id": row.id, "vendor": spec.vendor, "steps": list(spec.steps),
                     "degenerate": res.degenerate, "flipped": res.flipped,
                     "laterality": s.laterality, "view": s.view, "spacing_m": s.spacing,
                     "source": str(row.image_path.name)})
        io.atomic_write_text(out / f"{row.id}.png.json", _json(side))
        return {"id": row.id, "image_path": _rel(img_path, out),
                "label_path": _rel(lab_path, out) if lab_path else None,
                "vendor": spec.vendor, "laterality": s.laterality, "view": s.view,
                "spacing_m": io.fmt(s.spacing)}

    results = _pmap(one, rows)
    io.write_manifest(out / "manifest.csv", sorted(results, key=lambda r: r["id"]))
    log.info("preprocessed %d images into %s", len(results), out)
    return 0


def cmd_rasterize(args) -> int:
    if args.manifest:
        rows = io.read_manifest(args.manifest, check_paths=False)
        out = Path(args.out)
        base = Path(args.manifest).parent
        for row in rows:
            src = row.get("polygons_path")
            if not src:
                raise io.FormatError(f"row {row.id!r} has no polygons_path", args.manifest)
            try:
                w, h = int(row.get("width")), int(row.get("height"))
            except (TypeError, ValueError):
                raise io.FormatError(f"row {row.id!r}: width/height missing or invalid", args.manifest) from None
            polys = load_polygons(base / src)
            io.write_labels(out / f"{row.id}.png", rasterize_polygons(polys, w, h))
        return 0
    if not (args.polygons and args.width and args.height):
        raise io.FormatError("need --manifest or --polygons with --width and --height")
    labels = rasterize_polygons(load_polygons(args.polygons), args.width, args.height)
    io.write_labels(args.out, labels)
    return 0


def cmd_augment(args) -> int:
    cfg = _config(args)
    rows = io.read_manifest(args.manifest, required=("id", "image_path", "label_path"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(row):
        img = io.read_gray(row.image_path)
        if img.dtype != np.uint8:
            raise io.FormatError("augmentation expects 8-bit preprocessed images", row.image_path)
        labels = io.read_labels(row.label_path)
        rng = SeededRng.for_sample(cfg.seed, row.id)
        res = manipulate_sample(img, labels, rng)
        img_path = out / f"{row.id}.png"
        lab_path = out / f"{row.id}_labels.png"
        io.write_gray(img_path, res.image)
        io.write_labels(lab_path, labels)
        io.atomic_write_text(out / f"{row.id}.json", _json({"id": row.id, "seed": cfg.seed, **res.summary()}))
        return {"id": row.id, "image_path": _rel(img_path, out), "label_path": _rel(lab_path, out),
                "vendor": row.vendor, "laterality": row.laterality, "view": row.view,
                "spacing_m": io.fmt(row.spacing_m)}

    results = _pmap(one, rows)
    io.write_manifest(out / "manifest.csv", sorted(results, key=lambda r: r["id"]))
    return 0


def cmd_stylize_post(args) -> int:
    rows = io.read_manifest(args.manifest, required=("id", "image_path", "label_path"))
    out = Path(args.out)

    def one(row):
        with Image.open(row.image_path) as im:
            arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "I;16", "I", "F") else im)
        labels = io.read_labels(row.label_path)
        try:
            res = postprocess_stylized(arr, labels, args.size)
        except ValueError as exc:
            raise io.FormatError(f"sample {row.id!r}: {exc}", args.manifest) from exc
        io.write_gray(out / f"{row.id}.png", res)

    _pmap(one, rows)
    return 0


def cmd_style_proxy(args) -> int:
    bank = None
    if args.reference:
        refs: dict[str, list] = {}
        for style, img, lab in args.reference:
            refs.setdefault(style, []).append((io.read_gray(img), io.read_labels(lab)))
        bank = StyleBank.from_references(refs)
        if args.bank_out:
            bank.save(args.bank_out)
    if args.bank:
        bank = StyleBank.load(args.bank)
    if args.manifest is None:
        if bank is None:
            raise io.FormatError("nothing to do: give --reference and/or --manifest")
        return 0
    if bank is None or args.style is None:
        raise io.FormatError("applying the proxy needs --bank (or --reference) and --style")
    ref = bank[args.style]
    rows = io.read_manifest(args.manifest, required=("id", "image_path", "label_path"))
    out = Path(args.out)

    def one(row):
        img = io.read_gray(row.image_path)
        fg = io.read_labels(row.label_path) != 0
        io.write_gray(out / f"{row.id}.png", histogram_match(img, ref, fg))

    _pmap(one, rows)
    return 0


def _policy(name: str) -> MixPolicy:
    if name == "style25":
        return STYLE25
    if name == "combo20":
        return COMBO20
    return MixPolicy.from_json(name)


def cmd_mix(args) -> int:
    cfg = _config(args)
    policy = MixPolicy(cfg.policy) if isinstance(cfg.policy, dict) else _policy(cfg.policy)
    sources = {}
    for spec in args.source:
        cat, sep, path = spec.partition("=")
        if not sep:
            raise io.FormatError(f"--source expects CATEGORY=MANIFEST, got {spec!r}")
        rows = io.read_manifest(path, check_paths=False)
        if not rows:
            raise io.FormatError("empty source manifest", path)
        sources[cat] = itertools.cycle([(r, Path(path)) for r in rows])
    rng = SeededRng(cfg.seed, key=(0x6D6978,))
    buf = _io.StringIO()
    buf.write("# mammopipe.mix v1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "category", "sample_id", "image_path", "label_path"])
    for k, (cat, (row, _)) in enumerate(mix_stream(sources, policy, rng, args.count)):
        w.writerow([k, cat, row.id, row.image_path or "", row.label_path or ""])
    io.atomic_write_text(args.out, buf.getvalue())
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    man = Path(args.manifest)
    rows = io.read_manifest(man, check_paths=False)
    method = args.method or Path(args.out).stem

    def resolve(value, base):
        q = Path(value)
        return q if q.is_absolute() else base / q

    def one(row):
        gt = row.get("gt_path") or (str(row.label_path) if row.label_path else None)
        if not gt:
            raise io.FormatError(f"row {row.id!r}: no gt_path/label_path", man)
        pred = row.get("pred_path")
        if args.pred_dir:
            pred = resolve(pred, Path(args.pred_dir)) if pred else Path(args.pred_dir) / f"{row.id}.png"
        elif pred:
            pred = resolve(pred, man.parent)
        else:
            raise io.FormatError(f"row {row.id!r}: no pred_path and no --pred-dir", man)
        gt = resolve(gt, man.parent)
        for p in (pred, gt):
            if not Path(p).exists():
                raise io.FormatError(f"row {row.id!r}: file not found: {p}", man)
        try:
            return evaluate_pair(io.read_labels(pred), io.read_labels(gt), image_id=row.id,
                                 spacing=row.spacing_m, method=method,
                                 default_spacing=cfg.spacing_default)
        except ValueError as exc:
            raise io.FormatError(f"row {row.id!r}: {exc}", man) from exc

    records = sorted(_pmap(one, rows), key=lambda r: r.image_id)
    io.write_metrics_csv(args.out, records)
    summary_path = args.summary or str(Path(args.out).with_name(Path(args.out).stem + "_summary.csv"))
    io.write_summary_csv(summary_path, [aggregate(records, method)])
    assumed = sum(r.spacing_assumed for r in records)
    if assumed:
        log.warning("%d image(s) used the default spacing %.6g m/px", assumed, cfg.spacing_default)
    return 0


def cmd_compare_stats(args) -> int:
    cfg = _config(args)
    data: dict = {}
    for path in args.metrics:
        for meth, table in io.read_metrics_csv(path).items():
            if meth in data:
                raise io.FormatError(f"method {meth!r} appears in more than one metrics file", path)
            data[meth] = table
    try:
        report = significance_table(data, cfg.alpha)
    except ValueError as exc:
        raise io.FormatError(str(exc), args.metrics[0]) from exc
    io.write_significance_csv(args.out, report)
    return 0


def cmd_uncertainty(args) -> int:
    cfg = _config(args)
    man = Path(args.manifest)
    rows = io.read_manifest(man, check_paths=False)
    maps = []
    for row in rows:
        path = row.get("path") or (str(row.image_path) if row.image_path else None)
        if not path:
            raise io.FormatError(f"row {row.id!r}: missing path", man)
        p = Path(path) if Path(path).is_absolute() else man.parent / path
        try:
            t = TtaTransform.parse(row.get("transform") or "identity")
            maps.append(align(read_float_map(p), t))
        except (OSError, ValueError) as exc:
            raise io.FormatError(f"row {row.id!r}: {exc}", man) from exc
    try:
        u = uncertainty_map(maps, cfg.tta_statistic)
    except ValueError as exc:
        raise io.FormatError(str(exc), man) from exc
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_float_map(args.out, u)
    if args.png:
        io.write_rgb(args.png, render_hot(u))
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.summary:
        try:
            rows.extend(rows_from_summary_csv(path))
        except (KeyError, ValueError, OSError) as exc:
            raise io.FormatError(f"cannot read summary: {exc}", path) from exc
    order = {"Precision": 0, "Recall": 1, "Accuracy": 2, "Dice": 3, "IoU": 4, "Hausdorff": 5}
    rows.sort(key=lambda r: order.get(r.metric, 99))
    text = render_text(rows)
    if args.out:
        io.atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    if args.csv:
        io.atomic_write_text(args.csv, render_csv(rows))
    return 0


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mammopipe", description="Mammography segmentation data pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="RunConfig JSON file")
        return sp

    sp = add("preprocess", cmd_preprocess, "vendor preprocessing of raw images")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--clip-limit", dest="clip_limit", type=float, default=None,
                    help=f"CLAHE clip limit (default {DEFAULT_CLIP_LIMIT})")

    sp = add("rasterize", cmd_rasterize, "polygons JSON to label-map PNG")
    sp.add_argument("--polygons")
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("--manifest", help="CSV with id,polygons_path,width,height")
    sp.add_argument("--out", required=True)

    sp = add("augment", cmd_augment, "annotation-guided intensity manipulation")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)

    sp = add("stylize-post", cmd_stylize_post, "post-process externally stylized images")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=MODEL_SIZE)

    sp = add("style-proxy", cmd_style_proxy, "histogram-matching stand-in for style transfer")
    sp.add_argument("--reference", nargs=3, action="append", metavar=("STYLE", "IMAGE", "LABELS"))
    sp.add_argument("--bank-out")
    sp.add_argument("--bank")
    sp.add_argument("--style")
    sp.add_argument("--manifest")
    sp.add_argument("--out")

    sp = add("mix", cmd_mix, "draw a balanced training stream")
    sp.add_argument("--source", action="append", required=True, metavar="CATEGORY=MANIFEST")
    sp.add_argument("--policy", default=None, help="style25, combo20 or a JSON file")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "per-image metrics and summary table")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--pred-dir")
    sp.add_argument("--out", required=True)
    sp.add_argument("--summary")
    sp.add_argument("--method")
    sp.add_argument("--spacing-default", dest="spacing_default", type=float, default=None)

    sp = add("compare-stats", cmd_compare_stats, "Kruskal-Wallis + Dunn significance table")
    sp.add_argument("--metrics", nargs="+", required=True)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--out", required=True)

    sp = add("uncertainty", cmd_uncertainty, "TTA uncertainty map")
    sp.add_argument("--manifest", required=True, help="CSV with id,path,transform")
    sp.add_argument("--out", required=True)
    sp.add_argument("--png")
    sp.add_argument("--statistic", choices=("entropy", "std_maxprob"), default=None)

    sp = add("report", cmd_report, "render summary tables")
    sp.add_argument("--summary", nargs="+", required=True)
    sp.add_argument("--out")
    sp.add_argument("--csv")
    return p


def _error(kind: str, exc: Exception) -> None:
    payload = {"error": kind, "message": str(exc)}
    for attr in ("path", "row"):
        v = getattr(exc, attr, None)
        if v is not None:
            payload[attr] = v
    if isinstance(exc, OSError) and exc.filename:
        payload["path"] = str(exc.filename)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except io.FormatError as exc:
        _error("format", exc)
    except OSError as exc:
        _error("io", exc)
    except (ValueError, KeyError) as exc:
        _error("invalid", exc)
    return 1


if __name__ == "__main__":
    sys.exit(main())
