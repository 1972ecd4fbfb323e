"""Decision-level fusion: box intersection, 5-feature encoding, CART.

A VIS detection and a TIR detection that overlap are paired greedily by
descending IoU; every item (pair or singleton) becomes a five-feature vector
(occupied score, empty score, isolated score, TIR score, IoU) with the VIS
class expanded one-hot-with-score.  A Gini CART trained on ground-truth
labels (plus a FalsePositive class for unsupported boxes) makes the final
per-item decision; FalsePositive outputs are dropped from the fused set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .detections import AnnotationSet, Detection, FusedClass, VisClass
from .errors import CanvasMismatch, EmptyTrainingSet, UntrainedTree
from .geometry import iou

N_FEATURES = 5
FEATURE_NAMES = ("occupied_score", "empty_score", "isolated_score", "tir_score", "iou")

_VIS_COLUMN = {
    VisClass.OCCUPIED_NEST.name: 0,
    VisClass.EMPTY_NEST.name: 1,
    VisClass.ISOLATED_INDIVIDUAL.name: 2,
}


@dataclass(frozen=True)
class FeatureVector:
    occupied_score: float = 0.0
    empty_score: float = 0.0
    isolated_score: float = 0.0
    tir_score: float = 0.0
    iou: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.occupied_score, self.empty_score, self.isolated_score,
             self.tir_score, self.iou]
        )


@dataclass
class MatchSet:
    pairs: List[Tuple[Detection, Detection, float]]  # (vis, tir, iou)
    vis_singletons: List[Detection]
    tir_singletons: List[Detection]

    def items(self):
        """Deterministic item walk: pairs, VIS singletons, TIR singletons."""
        for vis, tir, overlap in self.pairs:
            yield ("pair", vis, tir, overlap)
        for vis in self.vis_singletons:
            yield ("vis_singleton", vis, None, 0.0)
        for tir in self.tir_singletons:
            yield ("tir_singleton", None, tir, 0.0)


@dataclass(frozen=True)
class TrainingSample:
    features: FeatureVector
    label: FusedClass
    provenance: Tuple[str, str] = ("", "")  # (image_id, bucket)


def _check_canvas(a: AnnotationSet, b: AnnotationSet) -> None:
    if a.dims != b.dims:
        raise CanvasMismatch(f"canvas {a.dims} vs {b.dims}")


def match_modalities(vis: AnnotationSet, tir: AnnotationSet) -> MatchSet:
    """Greedy one-to-one pairing by descending IoU among overlapping boxes.

    Ties break on lower VIS index, then lower TIR index; leftovers become
    singletons.
    """
    _check_canvas(vis, tir)
    candidates = []
    for i, dv in enumerate(vis.detections):
        for j, dt in enumerate(tir.detections):
            overlap = iou(dv.box, dt.box)
            if overlap > 0.0:
                candidates.append((overlap, i, j))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    used_vis: set = set()
    used_tir: set = set()
    pairs: List[Tuple[Detection, Detection, float]] = []
    for overlap, i, j in candidates:
        if i in used_vis or j in used_tir:
            continue
        used_vis.add(i)
        used_tir.add(j)
        pairs.append((vis.detections[i], tir.detections[j], overlap))
    vis_single = [d for i, d in enumerate(vis.detections) if i not in used_vis]
    tir_single = [d for j, d in enumerate(tir.detections) if j not in used_tir]
    return MatchSet(pairs=pairs, vis_singletons=vis_single, tir_singletons=tir_single)


def encode_features(
    kind: str,
    vis: Optional[Detection],
    tir: Optional[Detection],
    overlap: float = 0.0,
) -> FeatureVector:
    """One-hot-with-score encoding of a MatchSet item."""
    values = [0.0, 0.0, 0.0, 0.0, 0.0]
    if vis is not None:
        values[_VIS_COLUMN[vis.cls.name]] = vis.score
    if tir is not None:
        values[3] = tir.score
    if kind == "pair":
        values[4] = overlap
    return FeatureVector(*values)


def label_samples(
    ms: MatchSet, gt: AnnotationSet, iou_label_thresh: float = 0.5
) -> List[TrainingSample]:
    """Assign each item its greedily matched GT class, else FalsePositive.

    The item's representative box (VIS when present, else TIR) is matched by
    descending IoU against the ground truth; each GT box is consumed at most
    once, and only matches at or above the threshold inherit the GT class.
    """
    items = list(ms.items())
    rep_boxes = [(vis.box if vis is not None else tir.box) for _, vis, tir, _ in items]
    candidates = []
    for i, box in enumerate(rep_boxes):
        for j, g in enumerate(gt.detections):
            overlap = iou(box, g.box)
            if overlap >= iou_label_thresh:
                candidates.append((overlap, i, j))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    labels: Dict[int, FusedClass] = {}
    used_gt: set = set()
    for overlap, i, j in candidates:
        if i in labels or j in used_gt:
            continue
        labels[i] = FusedClass[gt.detections[j].cls.name]
        used_gt.add(j)

    samples = []
    for i, (kind, vis, tir, overlap) in enumerate(items):
        samples.append(
            TrainingSample(
                features=encode_features(kind, vis, tir, overlap),
                label=labels.get(i, FusedClass.FALSE_POSITIVE),
                provenance=(gt.image_id, kind),
            )
        )
    return samples


@dataclass(frozen=True)
class CartHyperparams:
    max_depth: int = 6
    min_samples_leaf: int = 5
    min_impurity_decrease: float = 1e-7


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["_Node"] = None
    right: Optional["_Node"] = None
    counts: Optional[np.ndarray] = None  # leaf only, per FusedClass

    @property
    def is_leaf(self) -> bool:
        return self.counts is not None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {
                "counts": {c.name: int(self.counts[c.value]) for c in FusedClass}
            }
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @staticmethod
    def from_dict(rec: dict) -> "_Node":
        if "counts" in rec:
            counts = np.zeros(len(FusedClass))
            for name, v in rec["counts"].items():
                counts[FusedClass[name].value] = v
            return _Node(counts=counts)
        return _Node(
            feature=int(rec["feature"]),
            threshold=float(rec["threshold"]),
            left=_Node.from_dict(rec["left"]),
            right=_Node.from_dict(rec["right"]),
        )


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _best_split(X: np.ndarray, y: np.ndarray, hp: CartHyperparams):
    """Best (feature, threshold) by weighted Gini; candidates are midpoints
    between consecutive distinct sorted values.  Tie-break: impurity, then
    feature index, then threshold."""
    n = len(y)
    n_classes = len(FusedClass)
    best = None  # (weighted_impurity, feature, threshold)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        vals = X[order, f]
        labels = y[order]
        one_hot = np.zeros((n, n_classes))
        one_hot[np.arange(n), labels] = 1.0
        cum = one_hot.cumsum(axis=0)
        total = cum[-1]
        boundaries = np.flatnonzero(vals[:-1] != vals[1:])
        for b in boundaries:
            n_left = b + 1
            n_right = n - n_left
            if n_left < hp.min_samples_leaf or n_right < hp.min_samples_leaf:
                continue
            left_counts = cum[b]
            right_counts = total - left_counts
            weighted = (
                n_left * _gini(left_counts) + n_right * _gini(right_counts)
            ) / n
            threshold = 0.5 * (vals[b] + vals[b + 1])
            key = (weighted, f, threshold)
            if best is None or key < best:
                best = key
    return best


@dataclass
class CartTree:
    """Binary Gini decision tree over the five fusion features."""

    hyperparams: CartHyperparams = field(default_factory=CartHyperparams)
    root: Optional[_Node] = None

    def fit(self, samples: Sequence[TrainingSample]) -> "CartTree":
        if not samples:
            raise EmptyTrainingSet("no training samples")
        X = np.array([s.features.as_array() for s in samples])
        y = np.array([s.label.value for s in samples], dtype=np.int64)
        self.root = self._build(X, y, depth=0)
        return self

    def _build(self, X: np.ndarray, y: np.ndarray, depth: int) -> _Node:
        counts = np.bincount(y, minlength=len(FusedClass)).astype(np.float64)
        if (
            depth >= self.hyperparams.max_depth
            or len(y) < 2 * self.hyperparams.min_samples_leaf
            or len(np.unique(y)) == 1
        ):
            return _Node(counts=counts)
        best = _best_split(X, y, self.hyperparams)
        if best is None:
            return _Node(counts=counts)
        weighted, f, threshold = best
        if _gini(counts) - weighted < self.hyperparams.min_impurity_decrease:
            return _Node(counts=counts)
        mask = X[:, f] <= threshold
        return _Node(
            feature=f,
            threshold=threshold,
            left=self._build(X[mask], y[mask], depth + 1),
            right=self._build(X[~mask], y[~mask], depth + 1),
        )

    def predict(self, features: FeatureVector) -> Tuple[FusedClass, float]:
        """Route by threshold comparisons; returns (class, leaf proportion)."""
        if self.root is None:
            raise UntrainedTree("fit or load the tree first")
        x = features.as_array()
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        total = node.counts.sum()
        cls_idx = int(np.argmax(node.counts))  # ties: FusedClass declaration order
        return FusedClass(cls_idx), float(node.counts[cls_idx] / total)

    def to_json(self) -> str:
        """Canonical JSON: sorted keys, shortest round-trip float repr."""
        if self.root is None:
            raise UntrainedTree("nothing to serialize")
        payload = {
            "hyperparams": {
                "max_depth": self.hyperparams.max_depth,
                "min_samples_leaf": self.hyperparams.min_samples_leaf,
                "min_impurity_decrease": self.hyperparams.min_impurity_decrease,
            },
            "tree": self.root.to_dict(),
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    @staticmethod
    def from_json(text: str) -> "CartTree":
        rec = json.loads(text)
        hp = rec.get("hyperparams", {})
        return CartTree(
            hyperparams=CartHyperparams(
                max_depth=int(hp.get("max_depth", 6)),
                min_samples_leaf=int(hp.get("min_samples_leaf", 5)),
                min_impurity_decrease=float(hp.get("min_impurity_decrease", 1e-7)),
            ),
            root=_Node.from_dict(rec["tree"]),
        )


def train_cart(
    samples: Sequence[TrainingSample], hyperparams: CartHyperparams | None = None
) -> CartTree:
    return CartTree(hyperparams=hyperparams or CartHyperparams()).fit(samples)


POLICIES = ("classify_all", "passthrough_singletons")


def fuse(
    vis: AnnotationSet,
    tir: AnnotationSet,
    tree: CartTree,
    policy: str = "classify_all",
) -> AnnotationSet:
    """Produce the fused detection set; FalsePositive decisions are dropped.

    Pairs are always classified by the tree.  Singletons follow the policy:
    classify_all routes them through the tree with zero-filled features,
    passthrough_singletons keeps VIS classes unchanged and maps TIR
    singletons to IsolatedIndividual.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if tree.root is None:
        raise UntrainedTree("fuse requires a trained tree")
    ms = match_modalities(vis, tir)

    fused: List[Detection] = []

    def classify(kind, dv, dt, overlap, geometry):
        cls, confidence = tree.predict(encode_features(kind, dv, dt, overlap))
        if cls is FusedClass.FALSE_POSITIVE:
            return
        fused.append(Detection(box=geometry, cls=cls, score=confidence))

    for dv, dt, overlap in ms.pairs:
        classify("pair", dv, dt, overlap, dv.box)
    for dv in ms.vis_singletons:
        if policy == "passthrough_singletons":
            fused.append(replace(dv, cls=FusedClass[dv.cls.name]))
        else:
            classify("vis_singleton", dv, None, 0.0, dv.box)
    for dt in ms.tir_singletons:
        if policy == "passthrough_singletons":
            fused.append(
                Detection(box=dt.box, cls=FusedClass.ISOLATED_INDIVIDUAL, score=dt.score)
            )
        else:
            classify("tir_singleton", None, dt, 0.0, dt.box)

    return AnnotationSet(
        image_id=vis.image_id,
        width=vis.width,
        height=vis.height,
        detections=fused,
        kind="predicted",
    )
