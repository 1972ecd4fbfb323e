"""Command-line entry point wiring the pipeline stages together.

Subcommands: align, fuse-early, train-late, fuse-late, evaluate, split,
tile, simulate, report.  Exit codes: 0 success, 1 validation error, 2 I/O
error.  Every output directory receives a run_record.json with the command,
config hash, input digests, tool version and wall time.  Verbosity follows
the THERMOFUSE_LOG environment variable (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .alignment import AlignedPair, align_pair
from .config import PipelineConfig, config_hash, load_config
from .detections import (
    AnnotationSet,
    ManifestEntry,
    TAXONOMIES,
    TirClass,
    VisClass,
    detection_path_for,
    read_detection_file,
    read_manifest,
    stratified_split,
    tile as tile_set,
    write_detections,
    write_manifest,
)
from .early_fusion import PcaAccumulator, fuse as fuse_early_pair
from .errors import ConfigError, ThermofuseError
from .evaluation import evaluate_sets, render_csv, render_text, report_to_dict
from .geometry import load_matches
from .late_fusion import CartTree, fuse as fuse_late_sets, label_samples, match_modalities, train_cart
from .raster import read_image, write_image
from .synth import generate, tir_ground_truth

log = logging.getLogger("thermofuse.cli")


def _setup_logging() -> None:
    level = os.environ.get("THERMOFUSE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_record(
    out_dir: Path, command: str, raw_config: Dict, inputs: List[Path], started: float
) -> None:
    record = {
        "command": command,
        "config_hash": config_hash(raw_config),
        "input_digests": {
            str(p): _sha256_file(p) for p in inputs if p and Path(p).is_file()
        },
        "tool_version": __version__,
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_record.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_config(args) -> PipelineConfig:
    values: Dict[str, object] = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    # flag overrides mirror config keys
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        values["threads"] = args.threads
    if getattr(args, "manifest", None):
        values["paths.manifest"] = args.manifest
    if getattr(args, "out", None):
        values["paths.out"] = str(args.out)
    return PipelineConfig.from_mapping(values)


def _resolve_path(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def _det_file(base: Path, declared: str) -> Path:
    """Detection file for a manifest path: the path itself if .txt, else sibling."""
    p = _resolve_path(base, declared)
    return p if p.suffix == ".txt" else detection_path_for(p)


def _entries_for_split(manifest_path: Path, split: str) -> List[ManifestEntry]:
    entries = read_manifest(manifest_path)
    if split:
        entries = [e for e in entries if e.split == split]
    if not entries:
        raise ConfigError(f"no manifest entries for split {split!r}")
    return entries


def cmd_align(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    manifest_path = Path(args.manifest)
    base = manifest_path.parent
    entries = read_manifest(manifest_path)
    records = []
    for entry in entries:
        if not entry.matches_path:
            raise ConfigError(f"manifest entry {entry.image_id} has no matches_path")
        matches = load_matches(_resolve_path(base, entry.matches_path))
        vis = read_image(_resolve_path(base, entry.vis_path))
        tir = read_image(_resolve_path(base, entry.tir_path))
        result = align_pair(
            vis, tir, matches, cfg.gate, pair_id=entry.image_id,
            strict_dims=cfg.strict_dims,
        )
        if isinstance(result, AlignedPair):
            records.append(
                {
                    "pair_id": entry.image_id,
                    "verdict": "accepted",
                    "n_matches": result.provenance["stats"]["n_matches"],
                    "n_inliers": result.provenance["stats"]["n_inliers"],
                    "mean_sq_residual": result.provenance["stats"]["mean_sq_residual"],
                    "transform": result.provenance["transform"],
                }
            )
            write_image(result.vis_aligned, out_dir / f"{entry.image_id}_vis.png")
            write_image(result.tir_aligned, out_dir / f"{entry.image_id}_tir.tif")
        else:
            records.append(result.to_record(entry.image_id))
    with open(out_dir / "gate_report.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _write_run_record(out_dir, "align", cfg.raw, [manifest_path], started)
    return 0


def cmd_fuse_early(args) -> int:
    cfg = _resolve_config(args)
    started = time.monotonic()
    report_path = Path(args.pairs)
    pair_dir = report_path.parent
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rescale = args.rescale or cfg.rescale
    use_global = args.global_pca or cfg.global_pca

    accepted = []
    with open(report_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("verdict") == "accepted":
                accepted.append(rec)

    def load_pair(rec) -> AlignedPair:
        pid = rec["pair_id"]
        return AlignedPair(
            vis_aligned=read_image(pair_dir / f"{pid}_vis.png"),
            tir_aligned=read_image(pair_dir / f"{pid}_tir.tif"),
            provenance={"pair_id": pid, "transform": rec.get("transform")},
        )

    model = None
    if use_global:
        acc = PcaAccumulator()
        for rec in accepted:
            acc.update(load_pair(rec))
        model = acc.finalize()
    for rec in accepted:
        pair = load_pair(rec)
        fused = fuse_early_pair(pair, model=model, rescale=rescale)
        pid = rec["pair_id"]
        write_image(fused.image, out_dir / f"{pid}_fused.png")
        with open(out_dir / f"{pid}_fused.json", "w", encoding="utf-8") as fh:
            json.dump(fused.model.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    _write_run_record(out_dir, "fuse-early", cfg.raw, [report_path], started)
    return 0


def cmd_train_late(args) -> int:
    cfg = _resolve_config(args)
    started = time.monotonic()
    manifest_path = Path(args.manifest)
    base = manifest_path.parent
    entries = _entries_for_split(manifest_path, args.split)
    dims = (float(cfg.canvas[0]), float(cfg.canvas[1]))
    policy = args.policy or cfg.policy
    if policy == "passthrough":
        policy = "passthrough_singletons"

    samples = []
    for entry in entries:
        vis = read_detection_file(_det_file(base, entry.vis_path), VisClass, dims)
        tir = read_detection_file(_det_file(base, entry.tir_path), TirClass, dims)
        gt = read_detection_file(
            _det_file(base, entry.gt_vis_path), VisClass, dims, kind="groundtruth"
        )
        ms = match_modalities(vis, tir)
        samples.extend(label_samples(ms, gt, cfg.iou_label_thresh))
    if policy == "passthrough_singletons":
        # singletons bypass the tree at inference, so train on pairs only
        samples = [s for s in samples if s.provenance[1] == "pair"]
    tree = train_cart(samples, cfg.cart)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(tree.to_json())
    _write_run_record(out_path.parent, "train-late", cfg.raw, [manifest_path], started)
    log.info("trained CART on %d samples from %d images", len(samples), len(entries))
    return 0


def cmd_fuse_late(args) -> int:
    cfg = _resolve_config(args)
    started = time.monotonic()
    manifest_path = Path(args.manifest)
    base = manifest_path.parent
    with open(args.tree, "r", encoding="utf-8") as fh:
        tree = CartTree.from_json(fh.read())
    entries = _entries_for_split(manifest_path, args.split)
    dims = (float(cfg.canvas[0]), float(cfg.canvas[1]))
    policy = args.policy or cfg.policy
    if policy == "passthrough":
        policy = "passthrough_singletons"

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in entries:
        vis = read_detection_file(_det_file(base, entry.vis_path), VisClass, dims)
        tir = read_detection_file(_det_file(base, entry.tir_path), TirClass, dims)
        fused = fuse_late_sets(vis, tir, tree, policy=policy)
        with open(out_dir / f"{entry.image_id}.txt", "w", encoding="utf-8") as fh:
            fh.write(write_detections(fused))
    _write_run_record(
        out_dir, "fuse-late", cfg.raw, [manifest_path, Path(args.tree)], started
    )
    return 0


def _parse_canvas(spec: str) -> tuple:
    try:
        w, h = spec.lower().split("x")
        return (float(int(w)), float(int(h)))
    except ValueError:
        raise ConfigError(f"canvas must look like 1792x1433, got {spec!r}") from None


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    started = time.monotonic()
    taxonomy = TAXONOMIES[args.taxonomy]
    dims = _parse_canvas(args.canvas) if args.canvas else (
        float(cfg.canvas[0]), float(cfg.canvas[1])
    )
    eval_cfg = cfg.eval_cfg
    if args.iou is not None or args.score is not None:
        from .evaluation import EvalConfig

        eval_cfg = EvalConfig(
            iou_match_thresh=args.iou if args.iou is not None else cfg.eval_cfg.iou_match_thresh,
            score_thresh=args.score if args.score is not None else cfg.eval_cfg.score_thresh,
        )

    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    pred_files = sorted(pred_dir.glob("*.txt"))
    if not pred_files:
        raise ConfigError(f"no .txt detection files in {pred_dir}")
    gt_taxonomy = VisClass if args.taxonomy in ("vis", "fused") else TirClass
    classes = tuple(c.name for c in gt_taxonomy)

    preds, gts = [], []
    for pf in pred_files:
        gf = gt_dir / pf.name
        if not gf.is_file():
            raise ConfigError(f"missing ground-truth file {gf}")
        pred = read_detection_file(pf, taxonomy, dims)
        if args.taxonomy == "fused":
            # FalsePositive entries mean "discard"; drop them before matching
            pred.detections = [
                d for d in pred.detections if d.cls.name != "FALSE_POSITIVE"
            ]
        preds.append(pred)
        gts.append(read_detection_file(gf, gt_taxonomy, dims, kind="groundtruth"))
    _, report = evaluate_sets(preds, gts, classes, eval_cfg)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(render_csv(report))
    with open(out_path.with_suffix(".txt"), "w", encoding="utf-8") as fh:
        fh.write(render_text(report))
    with open(out_path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_record(out_path.parent, "evaluate", cfg.raw, [pred_dir, gt_dir], started)
    print(render_text(report), end="")
    return 0


def cmd_split(args) -> int:
    cfg = _resolve_config(args)
    started = time.monotonic()
    manifest_path = Path(args.manifest)
    base = manifest_path.parent
    entries = read_manifest(manifest_path)
    dims = (float(cfg.canvas[0]), float(cfg.canvas[1]))
    ratios = cfg.split_ratios
    if args.ratios:
        parts = [float(r) for r in args.ratios.split(",")]
        if len(parts) != 3:
            raise ConfigError("--ratios needs three comma-separated values")
        ratios = tuple(parts)

    gt_sets = []
    for entry in entries:
        gt_sets.append(
            read_detection_file(
                _det_file(base, entry.gt_vis_path), VisClass, dims, kind="groundtruth"
            )
        )
        gt_sets[-1].image_id = entry.image_id
    train, val, test = stratified_split(gt_sets, ratios=ratios, seed=cfg.seed)
    assignment = {}
    for name, group in (("train", train), ("val", val), ("test", test)):
        for aset in group:
            assignment[aset.image_id] = name
    for entry in entries:
        entry.split = assignment[entry.image_id]

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(entries, out_path)
    _write_run_record(out_path.parent, "split", cfg.raw, [manifest_path], started)
    return 0


def cmd_tile(args) -> int:
    cfg = _resolve_config(args)
    started = time.monotonic()
    taxonomy = TAXONOMIES[args.taxonomy]
    dims = _parse_canvas(args.canvas) if args.canvas else (
        float(cfg.canvas[0]), float(cfg.canvas[1])
    )
    in_dir = Path(getattr(args, "in"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(in_dir.glob("*.txt"))
    if not files:
        raise ConfigError(f"no .txt detection files in {in_dir}")
    for f in files:
        aset = read_detection_file(f, taxonomy, dims)
        for t in tile_set(
            aset,
            tile_size=args.tile_size,
            overlap=args.overlap,
            min_box_area_frac=args.min_box_area_frac,
        ):
            tile_as_set = AnnotationSet(
                image_id=f"{t.image_id}__x{t.origin_x}_y{t.origin_y}",
                width=float(t.size),
                height=float(t.size),
                detections=t.detections,
                kind=aset.kind,
            )
            name = f"{tile_as_set.image_id}.txt"
            with open(out_dir / name, "w", encoding="utf-8") as fh:
                fh.write(write_detections(tile_as_set))
    _write_run_record(out_dir, "tile", cfg.raw, [in_dir], started)
    return 0


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    started = time.monotonic()
    out_dir = Path(args.out)
    for sub in ("vis", "tir", "gt_vis", "gt_tir"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    dataset = generate(cfg.scenario)
    entries = []
    for im in dataset.images:
        with open(out_dir / "vis" / f"{im.image_id}.txt", "w", encoding="utf-8") as fh:
            fh.write(write_detections(im.vis))
        with open(out_dir / "tir" / f"{im.image_id}.txt", "w", encoding="utf-8") as fh:
            fh.write(write_detections(im.tir))
        with open(out_dir / "gt_vis" / f"{im.image_id}.txt", "w", encoding="utf-8") as fh:
            fh.write(write_detections(im.gt))
        with open(out_dir / "gt_tir" / f"{im.image_id}.txt", "w", encoding="utf-8") as fh:
            fh.write(write_detections(tir_ground_truth(im.gt)))
        entries.append(
            ManifestEntry(
                image_id=im.image_id,
                vis_path=f"vis/{im.image_id}.png",
                tir_path=f"tir/{im.image_id}.png",
                gt_vis_path=f"gt_vis/{im.image_id}.txt",
                gt_tir_path=f"gt_tir/{im.image_id}.txt",
            )
        )
    write_manifest(entries, out_dir / "manifest.jsonl")
    inputs = [Path(args.config)] if args.config else []
    _write_run_record(out_dir, "simulate", cfg.raw, inputs, started)
    return 0


def cmd_report(args) -> int:
    started = time.monotonic()
    in_path = Path(getattr(args, "in"))
    with open(in_path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    from .evaluation import MetricsReport

    report = MetricsReport(
        classes=tuple(data["classes"]),
        per_class=data["per_class"],
        macro_precision=data["macro_precision"],
        macro_recall=data["macro_recall"],
        macro_f1=data["macro_f1"],
        detections=data["detections"],
        false_negatives=data["false_negatives"],
        false_positives=data["false_positives"],
        gt_total=data["gt_total"],
    )
    text = render_text(report)
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_run_record(out_path.parent, "report", {}, [in_path], started)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermofuse",
        description="Visible-thermal wildlife detection fusion toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key-value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="worker hint (stages stay deterministic)")

    p = sub.add_parser("align", help="fit alignment gates and render canvas pairs")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("fuse-early", help="PCA-luminance fusion of aligned pairs")
    common(p)
    p.add_argument("--pairs", required=True, help="gate_report.jsonl from align")
    p.add_argument("--out", required=True)
    p.add_argument("--global-pca", action="store_true", dest="global_pca")
    p.add_argument("--rescale", choices=("moments", "minmax"))
    p.set_defaults(func=cmd_fuse_early)

    p = sub.add_parser("train-late", help="train the late-fusion CART")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True, help="tree JSON output path")
    p.add_argument(
        "--policy", choices=("classify_all", "passthrough_singletons", "passthrough")
    )
    p.set_defaults(func=cmd_train_late)

    p = sub.add_parser("fuse-late", help="apply the CART to VIS/TIR detections")
    common(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--policy", choices=("classify_all", "passthrough_singletons", "passthrough")
    )
    p.set_defaults(func=cmd_fuse_late)

    p = sub.add_parser("evaluate", help="confusion matrix and macro metrics")
    common(p)
    p.add_argument("--pred", required=True, help="directory of predicted .txt files")
    p.add_argument("--gt", required=True, help="directory of ground-truth .txt files")
    p.add_argument("--taxonomy", choices=("vis", "tir", "fused"), default="vis")
    p.add_argument("--iou", type=float, help="IoU match threshold")
    p.add_argument("--score", type=float, help="prediction score threshold")
    p.add_argument("--canvas", help="image dims as WxH (default from config)")
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("split", help="stratified train/val/test assignment")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="updated manifest path")
    p.add_argument("--ratios", help="three comma-separated ratios")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("tile", help="cut detection sets into training patches")
    common(p)
    p.add_argument("--in", required=True, help="directory of .txt detection files")
    p.add_argument("--out", required=True)
    p.add_argument("--taxonomy", choices=("vis", "tir", "fused"), default="vis")
    p.add_argument("--tile-size", type=int, default=640)
    p.add_argument("--overlap", type=int, default=0)
    p.add_argument("--min-box-area-frac", type=float, default=0.5)
    p.add_argument("--canvas", help="image dims as WxH (default from config)")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("simulate", help="generate a synthetic detection dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="re-render an evaluation report")
    p.add_argument("--in", required=True, help="report.json from evaluate")
    p.add_argument("--out", help="write the text report here as well")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are validation failures here
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ThermofuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
