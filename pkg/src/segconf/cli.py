"""Command-line entry point: ``segconf {synth,assess,eval-seg,eval-pixel,report}``.

Exit codes: 0 success, 1 I/O, 2 validation, 3 degenerate data. Errors are
also written to stderr as one JSON object. Every command writes a
``run.log.json`` sidecar holding the only non-deterministic content
(timestamp, argv); all other outputs are byte-stable for identical inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import evaluation as ev
from .components import SegmentMap, connected_components, inner_boundary_split, save_segments
from .config import RunConfig
from .errors import InvalidSpec, MissingFile, SegConfError
from .fusion import NormalizationSpec
from .pipeline import (
    PIXEL_METRICS,
    REPORT_SCHEMA_VERSION,
    assess,
    build_report,
    pixel_counts,
    pixel_report,
    segment_report,
)
from .raster import (
    LabelRaster,
    StatRaster,
    load_cube,
    load_features,
    load_labels,
    load_stat,
    save_cube,
    save_features,
    save_labels,
    save_stat,
)
from .synth import SceneSpec, generate

EXIT_CODES = {"io": 1, "validation": 2, "degenerate": 3}

CONFIG_FILE = "config.json"
RUN_LOG = "run.log.json"


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(obj))
    return path


def _write_run_log(out: Path, command: str, argv: Sequence[str], outputs: list[Path]) -> None:
    log = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "outputs": sorted(p.name for p in outputs),
    }
    _write_json(out / RUN_LOG, log)


# --------------------------------------------------------------------------
# argument groups


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """One kebab-case flag per RunConfig field; unset flags keep the base config."""
    g = p.add_argument_group("run configuration")
    g.add_argument("--eta", type=float, help="coverage threshold on the top probability (default 0.9)")
    g.add_argument("--tau", type=float, help="confidence below which a segment is flagged (default 0.2)")
    g.add_argument("--connectivity", type=int, choices=(4, 8), help="pixel adjacency for segments (default 4)")
    g.add_argument("--agg", choices=("mean", "median"), help="segment aggregate (default mean)")
    g.add_argument("--region", choices=("inner", "whole"), help="segment region to aggregate (default inner)")
    g.add_argument("--refine-mode", choices=("segment", "pixel", "off"), help="abstention granularity (default segment)")
    g.add_argument("--bins", type=int, help="histogram bins on [0, 1] (default 100)")
    g.add_argument("--baseline", choices=("cas", "softmax"), help="confidence source (default cas)")
    g.add_argument("--seg-iou", choices=("adjusted", "accuracy"), help="per-segment IoU construction (default adjusted)")
    g.add_argument("--correlation", choices=("pearson", "spearman"), help="correlation type (default pearson)")


def _config_from(args: argparse.Namespace, base: Optional[RunConfig] = None) -> RunConfig:
    base = base or RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name, None) is not None}
    return replace(base, **overrides)


def _add_raw_inputs(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--cube", type=Path, required=required, help="probability cube manifest (f32 [H, W, q])")
    p.add_argument("--features", type=Path, help="feature cube manifest (f32 [H, W, d]); omit to drop the gradient term")
    p.add_argument("--norm", type=Path, help="fitted normalization JSON; default: fit on the input itself")


def _excluded(path: Optional[Path], cube) -> Optional[np.ndarray]:
    if path is None:
        return None
    return load_labels(path, cube.classes).nodata_mask


# --------------------------------------------------------------------------
# synth


def cmd_synth(args: argparse.Namespace) -> list[Path]:
    spec = SceneSpec(
        seed=args.seed,
        height=args.height,
        width=args.width,
        q=args.classes,
        n_seeds=args.n_seeds,
        error_rate=args.error_rate,
        sharpness=args.sharpness,
        informative_confidence=not args.uninformative,
        feature_depth=args.feature_depth,
        nodata_rate=args.nodata_rate,
    )
    scene = generate(spec)
    out = args.out
    written = [
        save_cube(scene.cube, out / "cube.json"),
        save_labels(scene.gt, out / "gt.json"),
        _write_json(out / "scene.json", spec.to_dict()),
    ]
    if not args.no_features:
        written.append(save_features(scene.features, out / "features.json"))
    return written


# --------------------------------------------------------------------------
# assess


def _run_assess(args: argparse.Namespace, config: RunConfig, gt_nodata: Optional[Path] = None):
    cube = load_cube(args.cube)
    features = load_features(args.features) if args.features else None
    norm = NormalizationSpec.load(_existing(args.norm)) if args.norm else None
    mask_from = getattr(args, "nodata_from", None) or gt_nodata
    return assess(cube, features, _excluded(mask_from, cube), config, norm)


def _existing(path: Path) -> Path:
    if not path.is_file():
        raise MissingFile(f"file not found: {path}")
    return path


def cmd_assess(args: argparse.Namespace) -> list[Path]:
    config = _config_from(args)
    a = _run_assess(args, config)
    out = args.out
    seg_path, seg_table = save_segments(a.segmap, out / "segment_ids.json")
    written = [
        save_stat(a.confidence, out / "confidence.json"),
        save_labels(a.pred, out / "pred.json"),
        save_labels(a.refined, out / "refined.json"),
        seg_path,
        seg_table,
        a.table.to_csv(out / "segments.csv"),
        _write_json(out / CONFIG_FILE, config.to_dict()),
    ]
    if a.norm is not None:
        written.append(a.norm.save(out / "norm.json"))
    return written


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True, eq=False)
class _Loaded:
    """What the evaluation commands need, read from an assess directory or computed."""

    pred: LabelRaster
    refined: LabelRaster
    segmap: SegmentMap
    segment_conf: np.ndarray
    conf: StatRaster
    config: RunConfig


def _read_segment_conf(path: Path, n: int) -> np.ndarray:
    with _existing(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != n:
        raise InvalidSpec(f"{path.name} lists {len(rows)} segments, the prediction has {n}")
    return np.array([float(r["segment_confidence"]) for r in rows])


def _load_for_eval(args: argparse.Namespace, gt: LabelRaster) -> _Loaded:
    if args.assessed is not None:
        d = args.assessed
        saved = json.loads(_existing(d / CONFIG_FILE).read_text())
        config = _config_from(args, RunConfig(**saved))
        pred = load_labels(d / "pred.json", gt.classes)
        refined = load_labels(d / "refined.json", gt.classes)
        segmap = inner_boundary_split(connected_components(pred, config.connectivity))
        seg_conf = _read_segment_conf(d / "segments.csv", segmap.n_segments)
        return _Loaded(pred, refined, segmap, seg_conf, load_stat(d / "confidence.json"), config)
    if args.cube is None:
        raise InvalidSpec("give either --assessed DIR or --cube (with --gt)")
    config = _config_from(args)
    # ground-truth nodata pixels are excluded from assessment as well
    a = _run_assess(args, config, gt_nodata=args.gt)
    return _Loaded(a.pred, a.refined, a.segmap, a.result.segment_conf, a.confidence, config)


def _segment_doc(loaded: _Loaded, gt: LabelRaster) -> dict:
    seg = segment_report(loaded.pred, loaded.refined, loaded.segmap, loaded.segment_conf, gt, loaded.config)
    seg["per_class_iou"] = {str(k): v for k, v in seg["per_class_iou"].items()}
    undefined = ["pearson_r"] if seg["pearson_r"] is None else []
    return {**seg, "config": loaded.config.to_dict(), "schema_version": REPORT_SCHEMA_VERSION, "undefined": undefined}


def _pixel_doc(loaded: _Loaded, gt: LabelRaster):
    pix, hist = pixel_report(loaded.conf, loaded.pred, gt, loaded.config)
    doc = {
        **pix,
        "counts": pixel_counts(loaded.pred, loaded.refined, gt),
        "config": loaded.config.to_dict(),
        "schema_version": REPORT_SCHEMA_VERSION,
        "undefined": [k for k in PIXEL_METRICS if pix[k] is None],
    }
    return doc, hist


def _write_histogram(hist: ev.Histogram, out: Path, config: RunConfig) -> list[Path]:
    svg = out / "histogram.svg"
    svg.write_text(ev.histogram_svg(hist, title=f"{config.baseline} confidence"))
    return [hist.to_csv(out / "histogram.csv"), svg]


def _load_gt(args: argparse.Namespace) -> LabelRaster:
    return load_labels(args.gt)


def cmd_eval_seg(args: argparse.Namespace) -> list[Path]:
    gt = _load_gt(args)
    doc = _segment_doc(_load_for_eval(args, gt), gt)
    return [_write_json(args.out / "report_seg.json", doc)]


def cmd_eval_pixel(args: argparse.Namespace) -> list[Path]:
    gt = _load_gt(args)
    loaded = _load_for_eval(args, gt)
    doc, hist = _pixel_doc(loaded, gt)
    args.out.mkdir(parents=True, exist_ok=True)
    return [_write_json(args.out / "report_pixel.json", doc), *_write_histogram(hist, args.out, loaded.config)]


# class colours for the overlay; abstained pixels magenta, nodata black
PALETTE = np.array(
    [
        [0, 100, 0], [255, 187, 34], [255, 255, 76], [240, 150, 255], [250, 0, 0], [180, 180, 180],
        [240, 240, 240], [0, 100, 200], [0, 150, 160], [0, 207, 117], [250, 230, 160],
    ],
    dtype=np.uint8,
)
ABSTAIN_RGB = (255, 0, 255)


def overlay_rgb(refined: LabelRaster) -> np.ndarray:
    """RGB image of the refined map: class colours, abstentions magenta, nodata black."""
    v = refined.values
    rgb = np.zeros(v.shape + (3,), dtype=np.uint8)
    cls = refined.class_mask
    rgb[cls] = PALETTE[v[cls].astype(np.int64) % len(PALETTE)]
    rgb[refined.abstain_mask] = ABSTAIN_RGB
    return rgb


def cmd_report(args: argparse.Namespace) -> list[Path]:
    from PIL import Image

    gt = _load_gt(args)
    loaded = _load_for_eval(args, gt)
    seg = segment_report(loaded.pred, loaded.refined, loaded.segmap, loaded.segment_conf, gt, loaded.config)
    pix, hist = pixel_report(loaded.conf, loaded.pred, gt, loaded.config)
    report = build_report(seg, pix, pixel_counts(loaded.pred, loaded.refined, gt), loaded.config)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    png = out / "overlay.png"
    Image.fromarray(overlay_rgb(loaded.refined), "RGB").save(png, format="PNG", optimize=False)
    return [_write_json(out / "report.json", report.to_dict()), *_write_histogram(hist, out, loaded.config), png]


# --------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segconf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene (cube, gt, features)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--classes", type=int, default=11, help="number of classes q")
    p.add_argument("--n-seeds", type=int, default=48, help="Voronoi sites")
    p.add_argument("--error-rate", type=float, default=0.2)
    p.add_argument("--sharpness", type=float, default=1.0)
    p.add_argument("--uninformative", action="store_true", help="confidence carries no error signal")
    p.add_argument("--feature-depth", type=int, default=8)
    p.add_argument("--nodata-rate", type=float, default=0.0)
    p.add_argument("--no-features", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("assess", help="score a probability cube and refine its prediction")
    _add_raw_inputs(p, required=True)
    p.add_argument("--nodata-from", type=Path, help="label raster whose nodata pixels are excluded")
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_assess)

    for name, func, what in (
        ("eval-seg", cmd_eval_seg, "segment-level IoU and confidence/IoU correlation"),
        ("eval-pixel", cmd_eval_pixel, "pixel-level separability, histogram CSV and SVG"),
        ("report", cmd_report, "full report, histograms and abstention overlay PNG"),
    ):
        p = sub.add_parser(name, help=what)
        p.add_argument("--gt", type=Path, required=True, help="ground-truth label manifest")
        p.add_argument("--assessed", type=Path, help="output directory of a previous assess run")
        _add_raw_inputs(p, required=False)
        p.add_argument("--out", type=Path, required=True)
        _add_config_flags(p)
        p.set_defaults(func=func)
    return parser


def _fail(category: str, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "category": category, "message": str(exc)}
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return EXIT_CODES[category]


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        outputs = args.func(args)
        _write_run_log(args.out, args.command, argv, outputs)
    except SegConfError as exc:
        return _fail(exc.category, exc)
    except OSError as exc:
        return _fail("io", exc)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail("validation", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
