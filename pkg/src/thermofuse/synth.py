"""Seeded generator of paired VIS/TIR detection sets over synthetic ground truth.

Stands in for the field imagery: no rasters are synthesized, only detection
sets with controllable per-class recall, box jitter, score distributions and
independent (or deliberately correlated) false-positive injection per
modality.  Every draw comes from the toolkit's integer-state generator, so a
(config, seed) pair reproduces the dataset bit-for-bit.

Per-image draw order (fixed for reproducibility and rate monotonicity):
object count, per-object class/size/placement, VIS hits, VIS FP count and
items, TIR hits, TIR FP count and items.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .detections import (
    AnnotationSet,
    Detection,
    FusedClass,
    TIR_VISIBLE_CLASSES,
    TirClass,
    VisClass,
    stratified_split,
)
from .errors import InfeasiblePlacement
from .evaluation import EvalConfig, MetricsReport, evaluate_sets
from .geometry import BBox, iou
from .late_fusion import (
    CartHyperparams,
    CartTree,
    encode_features,
    fuse,
    label_samples,
    match_modalities,
    train_cart,
)
from .rng import SplitMix64, derive_seed


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs of the synthetic detection scenario.

    Rates are per image; recalls are detection probabilities per ground-truth
    object.  TIR only ever sees the heat-emitting classes (occupied nests and
    isolated individuals); empty nests never emit thermal detections.
    """

    n_images: int = 100
    canvas: Tuple[int, int] = (1792, 1433)
    objects_per_image: float = 4.0
    class_priors: Tuple[float, float, float] = (0.85, 0.10, 0.05)
    vis_recall: Tuple[float, float, float] = (0.93, 0.93, 0.93)
    tir_recall: float = 0.85
    vis_fp_rate: float = 0.5
    tir_fp_rate: float = 0.5
    jitter_center_px: float = 2.0
    jitter_scale: float = 0.05
    tp_score_ab: Tuple[float, float] = (8.0, 2.0)
    fp_score_ab: Tuple[float, float] = (2.0, 4.0)
    seed: int = 0
    # synthetic-geometry decisions, not field facts:
    box_size_range: Tuple[float, float] = (48.0, 120.0)
    tir_shrink: float = 0.6
    max_overlap_iou: float = 0.3
    max_place_attempts: int = 200
    correlated_fp: bool = False

    def __post_init__(self):
        if abs(sum(self.class_priors) - 1.0) > 1e-9:
            raise ValueError("class priors must sum to 1")
        for rate in (self.vis_fp_rate, self.tir_fp_rate):
            if rate < 0:
                raise ValueError("FP rates must be >= 0")
        if self.jitter_center_px < 0 or self.jitter_scale < 0:
            raise ValueError("jitter sigmas must be >= 0")


@dataclass
class SyntheticImage:
    image_id: str
    gt: AnnotationSet
    vis: AnnotationSet
    tir: AnnotationSet
    vis_fp_flags: List[bool]  # aligned with vis.detections
    tir_fp_flags: List[bool]


@dataclass
class SyntheticDataset:
    images: List[SyntheticImage]
    config: ScenarioConfig


def _draw_class(rng: SplitMix64, priors: Tuple[float, ...]) -> VisClass:
    u = rng.uniform()
    acc = 0.0
    for cls, p in zip(VisClass, priors):
        acc += p
        if u < acc:
            return cls
    return list(VisClass)[-1]


def _place_gt_boxes(rng: SplitMix64, cfg: ScenarioConfig, n: int) -> List[Tuple[VisClass, BBox]]:
    w, h = cfg.canvas
    lo, hi = cfg.box_size_range
    placed: List[Tuple[VisClass, BBox]] = []
    for _ in range(n):
        cls = _draw_class(rng, cfg.class_priors)
        for attempt in range(cfg.max_place_attempts):
            bw = rng.uniform(lo, hi)
            bh = rng.uniform(lo, hi)
            cx = rng.uniform(bw / 2.0, w - bw / 2.0)
            cy = rng.uniform(bh / 2.0, h - bh / 2.0)
            box = BBox(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)
            if all(iou(box, other) <= cfg.max_overlap_iou for _, other in placed):
                placed.append((cls, box))
                break
        else:
            raise InfeasiblePlacement(
                f"could not place box after {cfg.max_place_attempts} attempts"
            )
    return placed


def _jitter_box(rng: SplitMix64, cfg: ScenarioConfig, box: BBox) -> Optional[BBox]:
    """Gaussian center jitter plus log-normal scale jitter, canvas-clamped."""
    if cfg.jitter_center_px == 0 and cfg.jitter_scale == 0:
        return box  # bit-exact pass-through for the noise-free case
    w, h = cfg.canvas
    dx = rng.normal(0.0, cfg.jitter_center_px) if cfg.jitter_center_px > 0 else 0.0
    dy = rng.normal(0.0, cfg.jitter_center_px) if cfg.jitter_center_px > 0 else 0.0
    factor = math.exp(rng.normal(0.0, cfg.jitter_scale)) if cfg.jitter_scale > 0 else 1.0
    c = box.center
    half_w = 0.5 * box.width * factor
    half_h = 0.5 * box.height * factor
    xmin = max(c.x + dx - half_w, 0.0)
    ymin = max(c.y + dy - half_h, 0.0)
    xmax = min(c.x + dx + half_w, float(w))
    ymax = min(c.y + dy + half_h, float(h))
    if xmin >= xmax or ymin >= ymax:
        return None
    return BBox(xmin, ymin, xmax, ymax)


def _shrink_box(box: BBox, factor: float) -> BBox:
    if factor == 1.0:
        return box
    c = box.center
    hw = 0.5 * box.width * factor
    hh = 0.5 * box.height * factor
    return BBox(c.x - hw, c.y - hh, c.x + hw, c.y + hh)


def _random_box(rng: SplitMix64, cfg: ScenarioConfig) -> BBox:
    w, h = cfg.canvas
    lo, hi = cfg.box_size_range
    bw = rng.uniform(lo, hi)
    bh = rng.uniform(lo, hi)
    cx = rng.uniform(bw / 2.0, w - bw / 2.0)
    cy = rng.uniform(bh / 2.0, h - bh / 2.0)
    return BBox(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)


def _generate_image(cfg: ScenarioConfig, index: int) -> SyntheticImage:
    rng = SplitMix64(derive_seed(cfg.seed, "image", index))
    image_id = f"synth_{index:05d}"
    w, h = cfg.canvas

    n_obj = rng.poisson(cfg.objects_per_image)
    gt_items = _place_gt_boxes(rng, cfg, n_obj)
    gt = AnnotationSet(
        image_id=image_id,
        width=float(w),
        height=float(h),
        detections=[Detection(box=b, cls=c, score=1.0) for c, b in gt_items],
        kind="groundtruth",
    )

    vis_dets: List[Detection] = []
    vis_flags: List[bool] = []
    for cls, box in gt_items:
        if rng.uniform() < cfg.vis_recall[cls.value]:
            jittered = _jitter_box(rng, cfg, box)
            if jittered is not None:
                vis_dets.append(
                    Detection(box=jittered, cls=cls, score=rng.beta(*cfg.tp_score_ab))
                )
                vis_flags.append(False)

    shared_phantoms: List[BBox] = []
    n_vis_fp = rng.poisson(cfg.vis_fp_rate)
    for _ in range(n_vis_fp):
        box = _random_box(rng, cfg)
        cls = _draw_class(rng, cfg.class_priors)
        # correlated phantoms are convincing confusers: both sensors fire on
        # the same object with true-positive-like confidence (the egret
        # case); uncorrelated FPs are ordinary low-confidence noise
        score_ab = cfg.tp_score_ab if cfg.correlated_fp else cfg.fp_score_ab
        placed = _jitter_box(rng, cfg, box) if cfg.correlated_fp else box
        if placed is None:
            continue
        vis_dets.append(Detection(box=placed, cls=cls, score=rng.beta(*score_ab)))
        vis_flags.append(True)
        if cfg.correlated_fp:
            shared_phantoms.append(box)

    tir_dets: List[Detection] = []
    tir_flags: List[bool] = []
    for cls, box in gt_items:
        if cls in TIR_VISIBLE_CLASSES and rng.uniform() < cfg.tir_recall:
            jittered = _jitter_box(rng, cfg, _shrink_box(box, cfg.tir_shrink))
            if jittered is not None:
                tir_dets.append(
                    Detection(
                        box=jittered, cls=TirClass.HERON, score=rng.beta(*cfg.tp_score_ab)
                    )
                )
                tir_flags.append(False)

    if cfg.correlated_fp:
        # ablation: each confuser fires both sensors, rendered through the
        # per-modality geometry and score models of true objects, so an FP
        # pair carries the exact evidence pattern of a real pair
        for box in shared_phantoms:
            jittered = _jitter_box(rng, cfg, _shrink_box(box, cfg.tir_shrink))
            if jittered is None:
                continue
            tir_dets.append(
                Detection(
                    box=jittered, cls=TirClass.HERON, score=rng.beta(*cfg.tp_score_ab)
                )
            )
            tir_flags.append(True)
    else:
        n_tir_fp = rng.poisson(cfg.tir_fp_rate)
        for _ in range(n_tir_fp):
            tir_dets.append(
                Detection(
                    box=_random_box(rng, cfg),
                    cls=TirClass.HERON,
                    score=rng.beta(*cfg.fp_score_ab),
                )
            )
            tir_flags.append(True)

    vis = AnnotationSet(
        image_id=image_id, width=float(w), height=float(h), detections=vis_dets,
        kind="predicted",
    )
    tir = AnnotationSet(
        image_id=image_id, width=float(w), height=float(h), detections=tir_dets,
        kind="predicted",
    )
    return SyntheticImage(
        image_id=image_id, gt=gt, vis=vis, tir=tir,
        vis_fp_flags=vis_flags, tir_fp_flags=tir_flags,
    )


def generate(cfg: ScenarioConfig) -> SyntheticDataset:
    """Generate the full dataset; per-image streams are independently seeded."""
    images = [_generate_image(cfg, i) for i in range(cfg.n_images)]
    return SyntheticDataset(images=images, config=cfg)


def tir_ground_truth(gt: AnnotationSet) -> AnnotationSet:
    """Thermal-frame ground truth: heat-emitting objects as single-class herons."""
    dets = [
        Detection(box=d.box, cls=TirClass.HERON, score=1.0)
        for d in gt.detections
        if d.cls in TIR_VISIBLE_CLASSES
    ]
    return AnnotationSet(
        image_id=gt.image_id, width=gt.width, height=gt.height,
        detections=dets, kind="groundtruth",
    )


@dataclass
class ExperimentReport:
    vis_only: MetricsReport
    late: MetricsReport
    fp_recall: float
    n_injected_fps: int
    n_caught_fps: int
    n_train_samples: int
    split_sizes: Tuple[int, int, int]
    tree_json: str

    def to_dict(self) -> dict:
        from .evaluation import report_to_dict

        return {
            "vis_only": report_to_dict(self.vis_only),
            "late": report_to_dict(self.late),
            "fp_recall": self.fp_recall,
            "n_injected_fps": self.n_injected_fps,
            "n_caught_fps": self.n_caught_fps,
            "n_train_samples": self.n_train_samples,
            "split_sizes": list(self.split_sizes),
        }


def _fp_routing(
    image: SyntheticImage, tree: CartTree, policy: str
) -> Tuple[int, int]:
    """(injected FPs, injected FPs routed to the FalsePositive class)."""
    fp_ids = {
        id(d)
        for d, flag in zip(image.vis.detections, image.vis_fp_flags)
        if flag
    } | {
        id(d)
        for d, flag in zip(image.tir.detections, image.tir_fp_flags)
        if flag
    }
    if not fp_ids:
        return 0, 0
    total = 0
    caught = 0
    ms = match_modalities(image.vis, image.tir)
    for kind, dv, dt, overlap in ms.items():
        involved = [d for d in (dv, dt) if d is not None and id(d) in fp_ids]
        if not involved:
            continue
        if kind == "pair" or policy == "classify_all":
            cls, _ = tree.predict(encode_features(kind, dv, dt, overlap))
            routed_fp = cls is FusedClass.FALSE_POSITIVE
        else:
            routed_fp = False  # passthrough keeps singletons unconditionally
        total += len(involved)
        caught += len(involved) if routed_fp else 0
    return total, caught


def run_experiment(
    cfg: ScenarioConfig,
    hyperparams: CartHyperparams | None = None,
    policy: str = "classify_all",
    eval_cfg: EvalConfig | None = None,
    ratios: Tuple[float, float, float] = (0.64, 0.16, 0.20),
    iou_label_thresh: float = 0.5,
) -> ExperimentReport:
    """Generate, split, train the CART, and compare VIS-only vs late fusion.

    The comparison runs on the test split; FP-class recall is the fraction
    of injected false positives whose fused item lands in FalsePositive.
    """
    eval_cfg = eval_cfg or EvalConfig()
    dataset = generate(cfg)
    by_id: Dict[str, SyntheticImage] = {im.image_id: im for im in dataset.images}

    train_gt, val_gt, test_gt = stratified_split(
        [im.gt for im in dataset.images], ratios=ratios, seed=cfg.seed
    )
    train_images = [by_id[s.image_id] for s in train_gt]
    test_images = [by_id[s.image_id] for s in test_gt]

    samples = []
    for im in train_images:
        ms = match_modalities(im.vis, im.tir)
        samples.extend(label_samples(ms, im.gt, iou_label_thresh))
    tree = train_cart(samples, hyperparams)

    classes = tuple(c.name for c in VisClass)
    gts = [im.gt for im in test_images]
    _, vis_report = evaluate_sets([im.vis for im in test_images], gts, classes, eval_cfg)
    fused_sets = [fuse(im.vis, im.tir, tree, policy) for im in test_images]
    _, late_report = evaluate_sets(fused_sets, gts, classes, eval_cfg)

    total = 0
    caught = 0
    for im in test_images:
        t, c = _fp_routing(im, tree, policy)
        total += t
        caught += c

    return ExperimentReport(
        vis_only=vis_report,
        late=late_report,
        fp_recall=caught / total if total else 1.0,
        n_injected_fps=total,
        n_caught_fps=caught,
        n_train_samples=len(samples),
        split_sizes=(len(train_gt), len(val_gt), len(test_gt)),
        tree_json=tree.to_json(),
    )
