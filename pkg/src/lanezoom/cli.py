"""``lanezoom`` command line.

Subcommands chain through versioned JSON files::

    lanezoom synth-scene --seed 7 --out scene.json
    lanezoom detect --scene scene.json --out result.json
    lanezoom cluster --points result.json --out clusters.json
    lanezoom fit --clusters clusters.json --out lanes.json
    lanezoom eval --gt scene.json --pred lanes.json --metric line-match

Exit status: 0 on success, 1 for usage errors, 2 for bad input data.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import schemas
from .clustering import ClusterParams, dbscan
from .config import ConfigError, PipelineConfig
from .detector import SyntheticDetector
from .fitting import DetectedLane, FitParams, clusters_to_lanes
from .geometry import GeometryError
from .hdmap import (CaptureNoise, MergeParams, fit_gsp, map_error, merge_lanes,
                    shot_ground_points, simulate_road)
from .metrics import LineMatchParams, iou_f1, line_match_f1, pixel_f1
from .scene import NoiseModel, Scene, dashed_gap_scene, double_line_scene, random_scene
from .svg import map_svg, pipeline_svg, scene_svg
from .zoom import run

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise UsageError(message)


# flag dest -> path inside PipelineConfig
FLAG_PATHS = {
    "seed": ("seed",),
    "stride": ("field", "stride"),
    "stroke_width": ("field", "stroke_width"),
    "confidence_separation": ("field", "confidence_separation"),
    "ratios": ("schedule", "ratios"),
    "crop_size": ("schedule", "crop_size"),
    "max_crops": ("schedule", "max_crops_per_stage"),
    "conf_thr": ("thresholds", "conf"),
    "mask_thr": ("thresholds", "mask"),
    "eps": ("cluster", "eps"),
    "min_pts": ("cluster", "min_pts"),
    "axis": ("fit", "axis"),
    "thickness": ("metrics", "pixel_thickness"),
    "iou_width": ("metrics", "iou_width"),
    "iou_threshold": ("metrics", "iou_threshold"),
    "dis_thresh": ("metrics", "dis_thresh"),
    "area_factor": ("metrics", "area_thresh_factor"),
    "position_sigma": ("noise", "position_sigma"),
    "map_eps": ("map", "eps"),
    "map_min_pts": ("map", "min_pts"),
    "map_dis_thresh": ("map", "dis_thresh"),
}


def _ratios(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from exc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags take precedence")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--manifest", help="write a run manifest (hashes, timings) here")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lanezoom", description="Lane detection post-processing and HD-map tools")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-scene", help="generate a synthetic scene or road capture")
    _common(p)
    p.add_argument("--kind", choices=("random", "double", "gap", "road"), default="random")
    p.add_argument("--out", required=True)
    p.add_argument("--gt-out", help="ground-truth map output (road kind)")
    p.add_argument("--separation", type=float, default=20.0, help="double/gap: line spacing, px")
    p.add_argument("--gap-px", type=float, default=200.0)
    p.add_argument("--shots", type=int, default=3, help="road: number of shots, 10 m apart")
    p.add_argument("--pose-sigma", type=float, default=0.3, help="road: pose noise, m")

    p = sub.add_parser("detect", help="run the zoom pipeline on a scene with the synthetic detector")
    _common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", type=_ratios, default=None, help="comma-separated zoom ratios")
    p.add_argument("--crop-size", type=float, default=None)
    p.add_argument("--max-crops", type=int, default=None)
    p.add_argument("--conf-thr", type=float, default=None)
    p.add_argument("--mask-thr", type=float, default=None)
    p.add_argument("--stride", type=float, default=None)
    p.add_argument("--stroke-width", type=float, default=None)
    p.add_argument("--confidence-separation", type=float, default=None)
    p.add_argument("--position-sigma", type=float, default=None)
    p.add_argument("--noiseless", action="store_true", help="exact detector output")
    p.add_argument("--no-context", action="store_true", help="hide thumbnail context from crops")

    p = sub.add_parser("cluster", help="cluster decoded points")
    _common(p)
    p.add_argument("--points", required=True, help="pipeline_result file")
    p.add_argument("--out", required=True)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--min-pts", type=int, default=None)

    p = sub.add_parser("fit", help="fit cubic lanes to clusters")
    _common(p)
    p.add_argument("--clusters", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", choices=("x", "y", "auto", "pca"), default=None)

    p = sub.add_parser("eval", help="score predicted lanes against ground truth")
    _common(p)
    p.add_argument("--gt", required=True, help="scene, lanes or gt_map file")
    p.add_argument("--pred", required=True, help="lanes file")
    p.add_argument("--metric", choices=("pixel", "iou", "line-match"), default="line-match")
    p.add_argument("--thickness", type=float, default=None)
    p.add_argument("--iou-width", type=float, default=None)
    p.add_argument("--iou-threshold", type=float, default=None)
    p.add_argument("--dis-thresh", type=float, default=None)
    p.add_argument("--area-factor", type=float, default=None)
    p.add_argument("--out", help="report file (default: stdout)")

    p = sub.add_parser("gsp-fit", help="fit per-shot ground surface parameters")
    _common(p)
    p.add_argument("--ingest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=float, default=30.0,
                   help="metres around a shot for ground points without observers")

    p = sub.add_parser("map-merge", help="merge detections of all shots into world lanes")
    _common(p)
    p.add_argument("--ingest", required=True)
    p.add_argument("--gsp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--map-eps", type=float, default=None)
    p.add_argument("--map-min-pts", type=int, default=None)

    p = sub.add_parser("map-eval", help="score merged lanes against a ground-truth map")
    _common(p)
    p.add_argument("--merged", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--map-dis-thresh", type=float, default=None)
    p.add_argument("--out", help="report file (default: stdout)")

    p = sub.add_parser("plot", help="render a scene, pipeline result or lane map as SVG")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--lanes", help="lanes file drawn on top")
    p.add_argument("--gt", help="gt_map file drawn under world lanes")
    p.add_argument("--out", required=True)
    return ap


def load_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: not valid JSON ({exc})") from exc
        cfg = cfg.merged(overrides)
    flags: dict = {}
    for dest, path in FLAG_PATHS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = flags
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    if getattr(args, "noiseless", False):
        flags["noise"] = {k: 0.0 for k in NoiseModel().__dataclass_fields__}
    if getattr(args, "no_context", False):
        flags["use_context"] = False
    return cfg.merged(flags) if flags else cfg


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Run:
    def __init__(self, args, cfg: PipelineConfig):
        self.args, self.cfg = args, cfg
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.stages: dict[str, float] = {}

    def read(self, path: str, kind) -> dict:
        doc = schemas.read(path, kind)
        self.inputs[str(path)] = _sha256(path)
        return doc

    def write(self, path: str, doc: dict) -> None:
        schemas.write(path, doc)
        self.outputs.append(str(path))

    def write_text(self, path: str, text: str) -> None:
        Path(path).write_text(text, encoding="utf-8")
        self.outputs.append(str(path))

    def timed(self, name: str):
        run_ = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run_.stages[name] = time.perf_counter() - self.t
        return _T()

    def finish(self) -> None:
        if not self.args.manifest:
            return
        schemas.write(self.args.manifest, schemas.envelope("manifest", {
            "command": self.args.command, "tool_version": __version__,
            "config_digest": self.cfg.digest(), "config": self.cfg.to_dict(),
            "inputs": self.inputs, "outputs": {p: _sha256(p) for p in self.outputs},
            "stage_seconds": self.stages,
        }))


def _emit_report(r: _Run, doc: dict) -> None:
    if r.args.out:
        r.write(r.args.out, doc)
    else:
        sys.stdout.write(schemas.dumps(doc))


def cmd_synth_scene(r: _Run) -> None:
    a, seed = r.args, r.cfg.seed
    if a.kind == "road":
        if not a.gt_out:
            raise UsageError("--gt-out is required for --kind road")
        if a.shots < 1:
            raise UsageError("--shots must be at least 1")
        cap = simulate_road([10.0 * k for k in range(a.shots)], seed,
                            noise=CaptureNoise(pose_sigma=a.pose_sigma))
        pts, ground, observers = [], [], []
        for sid, xyz in cap.ground_points.items():
            pts.append(xyz)
            ground.extend([True] * len(xyz))
            observers.extend([[sid]] * len(xyz))
        r.write(a.out, schemas.ingest_to_doc(cap.shots, np.vstack(pts), np.array(ground), observers))
        r.write(a.gt_out, schemas.gt_map_to_doc(cap.gt_map))
        return
    if a.kind == "double":
        scene = double_line_scene(a.separation, seed=seed)
    elif a.kind == "gap":
        scene = dashed_gap_scene(a.gap_px, a.separation, seed=seed)
    else:
        scene = random_scene(seed)
    r.write(a.out, schemas.scene_to_doc(scene))


def cmd_detect(r: _Run) -> None:
    scene = schemas.scene_from_doc(r.read(r.args.scene, "scene"))
    cfg = r.cfg
    det = SyntheticDetector(scene, cfg.noise, cfg.fov_rule, cfg.field)
    with r.timed("detect"):
        result = run(det, scene.image_size, cfg.schedule, cfg.thresholds,
                     use_context=cfg.use_context, supersede=cfg.supersede)
    for st in result.stage_stats:
        log.info("stage %d z=%g crops=%d points=%d regions=%d", st.stage, st.zoom_ratio,
                 st.crops, st.confident_cells, st.uncertain_regions)
    r.write(r.args.out, schemas.result_to_doc(result))


def cmd_cluster(r: _Run) -> None:
    result = schemas.result_from_doc(r.read(r.args.points, "pipeline_result"))
    with r.timed("cluster"):
        labels = dbscan(result.points, r.cfg.cluster)
    r.write(r.args.out, schemas.clusters_to_doc(result.points, labels, result.image_size))


def cmd_fit(r: _Run) -> None:
    points, labels, size = schemas.clusters_from_doc(r.read(r.args.clusters, "clusters"))
    with r.timed("fit"):
        lanes = clusters_to_lanes(points, labels, r.cfg.fit)
    r.write(r.args.out, schemas.lanes_to_doc(lanes, "image", size))


def _gt_items(doc: dict) -> tuple[list, tuple | None]:
    if doc["kind"] == "scene":
        scene = schemas.scene_from_doc(doc)
        return list(scene.lanes), scene.image_size
    if doc["kind"] == "gt_map":
        return [lane.polyline for lane in schemas.gt_map_from_doc(doc).lanes], None
    size = doc.get("image_size")
    return schemas.lanes_from_doc(doc), tuple(size) if size else None


def cmd_eval(r: _Run) -> None:
    gt, size = _gt_items(r.read(r.args.gt, ("scene", "lanes", "gt_map")))
    pred_doc = r.read(r.args.pred, "lanes")
    pred = schemas.lanes_from_doc(pred_doc)
    if size is None and pred_doc.get("image_size"):
        size = tuple(pred_doc["image_size"])
    m = r.cfg.metrics
    if r.args.metric == "line-match":
        params = {"dis_thresh": m.dis_thresh, "area_thresh_factor": m.area_thresh_factor}
        res = line_match_f1(gt, pred, LineMatchParams(m.dis_thresh, m.area_thresh_factor))
    else:
        if size is None:
            raise ValueError("pixel metrics need an image size from the gt or pred file")
        if r.args.metric == "pixel":
            params = {"thickness": m.pixel_thickness}
            res = pixel_f1(gt, pred, m.pixel_thickness, size)
        else:
            params = {"width": m.iou_width, "iou_threshold": m.iou_threshold}
            res = iou_f1(gt, pred, m.iou_width, m.iou_threshold, size)
    _emit_report(r, schemas.match_to_doc(r.args.metric, res, params))


def _load_ingest(r: _Run, path: str):
    doc = r.read(path, "sfm_ingest")
    return schemas.ingest_from_doc(doc, Path(path).parent)


def cmd_gsp_fit(r: _Run) -> None:
    shots, points = _load_ingest(r, r.args.ingest)
    estimates, errors = {}, {}
    with r.timed("gsp"):
        for shot in shots:
            try:
                estimates[shot.id] = fit_gsp(shot_ground_points(shot, points, r.args.radius))
            except GeometryError as exc:
                log.warning("shot %s: %s", shot.id, exc)
                estimates[shot.id] = None
                errors[shot.id] = str(exc)
    r.write(r.args.out, schemas.gsp_to_doc(estimates, errors))


def cmd_map_merge(r: _Run) -> None:
    shots, _ = _load_ingest(r, r.args.ingest)
    gsps = schemas.gsp_from_doc(r.read(r.args.gsp, "gsp"))
    for shot in shots:
        shot.gsp = gsps.get(shot.id)
    mp = r.cfg.map
    params = MergeParams(ClusterParams(mp.eps, mp.min_pts), FitParams("pca", r.cfg.fit.weighted, 0),
                         mp.image_step, mp.world_step, mp.hdis_step, mp.max_range)
    skipped: list[str] = []
    with r.timed("merge"):
        lanes = merge_lanes(shots, params, skipped)
    r.write(r.args.out, schemas.lanes_to_doc(lanes, "world", skipped=skipped))


def cmd_map_eval(r: _Run) -> None:
    merged = schemas.lanes_from_doc(r.read(r.args.merged, "lanes"))
    gt = schemas.gt_map_from_doc(r.read(r.args.gt, "gt_map"))
    m = r.cfg.metrics
    report = map_error(merged, gt, LineMatchParams(r.cfg.map.dis_thresh, m.area_thresh_factor))
    _emit_report(r, schemas.map_error_to_doc(report))


def cmd_plot(r: _Run) -> None:
    doc = r.read(r.args.input, ("scene", "pipeline_result", "lanes", "gt_map"))
    overlay: list[DetectedLane] = []
    if r.args.lanes:
        overlay = schemas.lanes_from_doc(r.read(r.args.lanes, "lanes"))
    gt = schemas.gt_map_from_doc(r.read(r.args.gt, "gt_map")) if r.args.gt else None
    kind = doc["kind"]
    if kind == "scene":
        text = scene_svg(schemas.scene_from_doc(doc), overlay)
    elif kind == "pipeline_result":
        text = pipeline_svg(schemas.result_from_doc(doc), overlay)
    elif kind == "gt_map":
        text = map_svg(overlay, schemas.gt_map_from_doc(doc))
    elif doc.get("space") == "world":
        text = map_svg(schemas.lanes_from_doc(doc) + overlay, gt)
    else:
        size = doc.get("image_size") or [2048, 1536]
        text = scene_svg(Scene(tuple(size)), schemas.lanes_from_doc(doc) + overlay)
    r.write_text(r.args.out, text)


COMMANDS = {
    "synth-scene": cmd_synth_scene, "detect": cmd_detect, "cluster": cmd_cluster,
    "fit": cmd_fit, "eval": cmd_eval, "gsp-fit": cmd_gsp_fit, "map-merge": cmd_map_merge,
    "map-eval": cmd_map_eval, "plot": cmd_plot,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"lanezoom: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        r = _Run(args, cfg)
        COMMANDS[args.command](r)
        r.finish()
    except UsageError as exc:
        print(f"lanezoom: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, schemas.SchemaError, GeometryError, ValueError, KeyError, TypeError,
            OSError) as exc:
        print(f"lanezoom: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
