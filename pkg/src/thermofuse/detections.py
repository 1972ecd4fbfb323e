"""Detection containers, text I/O, 640x640 tiling and stratified splitting.

Detection files use the normalized line format
`class_index cx cy w h [score]` relative to the image dims; one file per
image, sibling to the raster with a `.txt` extension.  The dataset manifest
is JSON-lines with keys image_id, vis_path, tir_path, gt_vis_path,
gt_tir_path, split (plus an optional matches_path for alignment inputs).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Type

from .errors import (
    CoordinateOutOfRange,
    InfeasiblePlacement,
    MalformedLine,
    MixedImageIds,
    UnknownClassIndex,
)
from .geometry import BBox, iou
from .rng import SplitMix64, derive_seed

log = logging.getLogger("thermofuse.detections")


class VisClass(Enum):
    OCCUPIED_NEST = 0
    EMPTY_NEST = 1
    ISOLATED_INDIVIDUAL = 2


class TirClass(Enum):
    HERON = 0


class FusedClass(Enum):
    OCCUPIED_NEST = 0
    EMPTY_NEST = 1
    ISOLATED_INDIVIDUAL = 2
    FALSE_POSITIVE = 3


# Classes that radiate heat and can show up in the thermal channel.
TIR_VISIBLE_CLASSES = (VisClass.OCCUPIED_NEST, VisClass.ISOLATED_INDIVIDUAL)

TAXONOMIES: Dict[str, Type[Enum]] = {
    "vis": VisClass,
    "tir": TirClass,
    "fused": FusedClass,
}


@dataclass(frozen=True)
class Detection:
    box: BBox
    cls: Enum
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class AnnotationSet:
    image_id: str
    width: float
    height: float
    detections: List[Detection] = field(default_factory=list)
    kind: str = "predicted"  # or "groundtruth"

    def __post_init__(self):
        if self.kind not in ("predicted", "groundtruth"):
            raise ValueError(f"unknown kind {self.kind!r}")
        clamped = []
        for d in self.detections:
            box = _clamp_box(d.box, self.width, self.height)
            clamped.append(d if box == d.box else replace(d, box=box))
        self.detections = clamped

    @property
    def dims(self) -> Tuple[float, float]:
        return (self.width, self.height)


def _clamp_box(box: BBox, w: float, h: float) -> BBox:
    xmin = min(max(box.xmin, 0.0), w)
    ymin = min(max(box.ymin, 0.0), h)
    xmax = min(max(box.xmax, 0.0), w)
    ymax = min(max(box.ymax, 0.0), h)
    return BBox(xmin, ymin, xmax, ymax)


def parse_detections(
    text: str,
    taxonomy: Type[Enum],
    image_dims: Tuple[float, float],
    image_id: str = "",
    kind: str = "predicted",
) -> AnnotationSet:
    """Parse normalized detection lines into canvas-pixel detections."""
    w, h = image_dims
    classes = list(taxonomy)
    detections: List[Detection] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) not in (5, 6):
            raise MalformedLine(line_no, f"expected 5 or 6 fields, got {len(fields)}")
        try:
            idx = int(fields[0])
            cx, cy, bw, bh = (float(v) for v in fields[1:5])
            score = float(fields[5]) if len(fields) == 6 else 1.0
        except ValueError:
            raise MalformedLine(line_no, f"non-numeric field in {line!r}") from None
        if not 0 <= idx < len(classes):
            raise UnknownClassIndex(line_no, f"class index {idx} outside 0..{len(classes) - 1}")
        for name, v in (("cx", cx), ("cy", cy), ("w", bw), ("h", bh)):
            if not 0.0 <= v <= 1.0:
                raise CoordinateOutOfRange(line_no, f"{name}={v} outside [0, 1]")
        if bw <= 0.0 or bh <= 0.0:
            raise MalformedLine(line_no, "zero-size box")
        if not 0.0 <= score <= 1.0:
            raise MalformedLine(line_no, f"score {score} outside [0, 1]")
        box = BBox(
            (cx - bw / 2.0) * w,
            (cy - bh / 2.0) * h,
            (cx + bw / 2.0) * w,
            (cy + bh / 2.0) * h,
        )
        detections.append(Detection(box=box, cls=classes[idx], score=score))
    return AnnotationSet(image_id=image_id, width=w, height=h, detections=detections, kind=kind)


def write_detections(aset: AnnotationSet) -> str:
    """Serialize in canonical order (class, xmin, ymin); score 1.0 omitted."""
    ordered = sorted(
        aset.detections, key=lambda d: (d.cls.value, d.box.xmin, d.box.ymin)
    )
    lines = []
    for d in ordered:
        cx = 0.5 * (d.box.xmin + d.box.xmax) / aset.width
        cy = 0.5 * (d.box.ymin + d.box.ymax) / aset.height
        bw = d.box.width / aset.width
        bh = d.box.height / aset.height
        cols = f"{d.cls.value} {cx:.10f} {cy:.10f} {bw:.10f} {bh:.10f}"
        if d.score != 1.0:
            cols += f" {d.score:.6f}"
        lines.append(cols)
    return "\n".join(lines) + ("\n" if lines else "")


def read_detection_file(
    path, taxonomy: Type[Enum], image_dims: Tuple[float, float], kind: str = "predicted"
) -> AnnotationSet:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_detections(
            fh.read(), taxonomy, image_dims, image_id=path.stem, kind=kind
        )


def detection_path_for(raster_path) -> Path:
    """Detection text file convention: sibling of the raster, .txt suffix."""
    return Path(raster_path).with_suffix(".txt")


@dataclass
class Tile:
    image_id: str
    origin_x: int
    origin_y: int
    size: int
    image_dims: Tuple[float, float]
    detections: List[Detection] = field(default_factory=list)


def _grid_origins(dim: int, size: int, stride: int) -> List[int]:
    """Stride grid with the last tile anchored to the boundary."""
    if dim <= size:
        return [0]
    origins = list(range(0, dim - size + 1, stride))
    if origins[-1] != dim - size:
        origins.append(dim - size)
    return origins


def tile(
    aset: AnnotationSet,
    tile_size: int = 640,
    overlap: int = 0,
    min_box_area_frac: float = 0.5,
) -> List[Tile]:
    """Cut the annotation set into tile_size patches with box remapping.

    Boxes are clipped to each tile and kept only when the clipped area is at
    least min_box_area_frac of the original; coordinates are re-expressed in
    the tile frame.
    """
    stride = tile_size - overlap
    if stride < 1:
        raise ValueError("overlap must be smaller than tile_size")
    xs = _grid_origins(int(aset.width), tile_size, stride)
    ys = _grid_origins(int(aset.height), tile_size, stride)
    tiles: List[Tile] = []
    for oy in ys:
        for ox in xs:
            kept: List[Detection] = []
            for d in aset.detections:
                ix_min = max(d.box.xmin, ox)
                iy_min = max(d.box.ymin, oy)
                ix_max = min(d.box.xmax, ox + tile_size)
                iy_max = min(d.box.ymax, oy + tile_size)
                if ix_max <= ix_min or iy_max <= iy_min:
                    continue
                clipped_area = (ix_max - ix_min) * (iy_max - iy_min)
                if clipped_area / d.box.area < min_box_area_frac:
                    continue
                kept.append(
                    replace(
                        d,
                        box=BBox(ix_min - ox, iy_min - oy, ix_max - ox, iy_max - oy),
                    )
                )
            tiles.append(
                Tile(
                    image_id=aset.image_id,
                    origin_x=ox,
                    origin_y=oy,
                    size=tile_size,
                    image_dims=aset.dims,
                    detections=kept,
                )
            )
    return tiles


def merge_tiles(tiles: Sequence[Tile], nms_iou: float = 0.5) -> AnnotationSet:
    """Map tile detections back to the canvas and NMS-deduplicate per class."""
    if not tiles:
        raise ValueError("no tiles to merge")
    ids = {t.image_id for t in tiles}
    if len(ids) != 1:
        raise MixedImageIds(f"tiles span images {sorted(ids)}")
    w, h = tiles[0].image_dims
    canvas: List[Detection] = []
    for t in tiles:
        for d in t.detections:
            canvas.append(replace(d, box=d.box.shift(t.origin_x, t.origin_y)))

    kept: List[Detection] = []
    by_class: Dict[Enum, List[Detection]] = {}
    for d in canvas:
        by_class.setdefault(d.cls, []).append(d)
    for cls in sorted(by_class, key=lambda c: c.value):
        pool = sorted(
            by_class[cls], key=lambda d: -d.score
        )  # stable: ties keep insertion order
        surviving: List[Detection] = []
        for d in pool:
            if all(iou(d.box, s.box) <= nms_iou for s in surviving):
                surviving.append(d)
        kept.extend(surviving)
    return AnnotationSet(
        image_id=tiles[0].image_id, width=w, height=h, detections=kept, kind="predicted"
    )


def _largest_remainder(n: int, ratios: Sequence[float]) -> List[int]:
    exact = [n * r for r in ratios]
    base = [math.floor(e) for e in exact]
    short = n - sum(base)
    remainders = sorted(
        range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i)
    )
    for i in remainders[:short]:
        base[i] += 1
    return base


def _class_presence_key(aset: AnnotationSet) -> str:
    names = sorted({d.cls.name for d in aset.detections})
    return "+".join(names) if names else "<empty>"


def stratified_split(
    sets: Sequence[AnnotationSet],
    ratios: Tuple[float, float, float] = (0.64, 0.16, 0.20),
    seed: int = 0,
) -> Tuple[List[AnnotationSet], List[AnnotationSet], List[AnnotationSet]]:
    """Image-level train/val/test split preserving class representativeness.

    Images are bucketed by their class-presence profile, shuffled
    deterministically, and allocated per bucket by largest-remainder quotas;
    residual drift against the global largest-remainder targets is then
    corrected one image at a time from the largest buckets.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} do not sum to 1")
    n = len(sets)
    targets = _largest_remainder(n, ratios)

    strata: Dict[str, List[AnnotationSet]] = {}
    for aset in sorted(sets, key=lambda s: s.image_id):
        strata.setdefault(_class_presence_key(aset), []).append(aset)
    for key, members in strata.items():
        rng = SplitMix64(derive_seed(seed, "split", key))
        rng.shuffle(members)

    quotas = {key: _largest_remainder(len(m), ratios) for key, m in strata.items()}
    totals = [sum(q[k] for q in quotas.values()) for k in range(3)]
    order = sorted(strata, key=lambda k: (-len(strata[k]), k))
    while totals != targets:
        over = max(range(3), key=lambda k: totals[k] - targets[k])
        under = min(range(3), key=lambda k: totals[k] - targets[k])
        moved = False
        for key in order:
            if quotas[key][over] > 0:
                quotas[key][over] -= 1
                quotas[key][under] += 1
                totals[over] -= 1
                totals[under] += 1
                moved = True
                break
        if not moved:  # pragma: no cover - quotas always cover totals
            raise InfeasiblePlacement("split quota correction failed")

    splits: Tuple[List[AnnotationSet], ...] = ([], [], [])
    for key in sorted(strata):
        members = strata[key]
        q = quotas[key]
        splits[0].extend(members[: q[0]])
        splits[1].extend(members[q[0] : q[0] + q[1]])
        splits[2].extend(members[q[0] + q[1] :])

    _warn_if_unbalanced(sets, splits)
    return splits


def _warn_if_unbalanced(sets, splits, tolerance_pts: float = 3.0) -> None:
    """Best-effort check of per-class object proportions across splits."""
    def class_fractions(group):
        counts: Dict[str, int] = {}
        total = 0
        for aset in group:
            for d in aset.detections:
                counts[d.cls.name] = counts.get(d.cls.name, 0) + 1
                total += 1
        return {k: v / total for k, v in counts.items()} if total else {}

    global_fracs = class_fractions(sets)
    for name, group in zip(("train", "val", "test"), splits):
        fracs = class_fractions(group)
        for cls, gf in global_fracs.items():
            delta = abs(fracs.get(cls, 0.0) - gf) * 100.0
            if delta > tolerance_pts:
                log.warning(
                    "split %s: class %s proportion off by %.1f points", name, cls, delta
                )


@dataclass
class ManifestEntry:
    image_id: str
    vis_path: str
    tir_path: str
    gt_vis_path: str
    gt_tir_path: str
    split: str = ""
    matches_path: str = ""

    def to_json(self) -> str:
        rec = {
            "image_id": self.image_id,
            "vis_path": self.vis_path,
            "tir_path": self.tir_path,
            "gt_vis_path": self.gt_vis_path,
            "gt_tir_path": self.gt_tir_path,
            "split": self.split,
        }
        if self.matches_path:
            rec["matches_path"] = self.matches_path
        return json.dumps(rec, sort_keys=True)


def read_manifest(path) -> List[ManifestEntry]:
    entries: List[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, f"invalid JSON: {exc}") from None
            try:
                entries.append(
                    ManifestEntry(
                        image_id=rec["image_id"],
                        vis_path=rec.get("vis_path", ""),
                        tir_path=rec.get("tir_path", ""),
                        gt_vis_path=rec.get("gt_vis_path", ""),
                        gt_tir_path=rec.get("gt_tir_path", ""),
                        split=rec.get("split", ""),
                        matches_path=rec.get("matches_path", ""),
                    )
                )
            except KeyError as exc:
                raise MalformedLine(line_no, f"missing manifest key {exc}") from None
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")
