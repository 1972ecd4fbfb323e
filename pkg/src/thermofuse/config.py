"""Flat key-value configuration with dotted sections.

Format: one `key = value` per line, `#` comments, dotted section prefixes
(`alignment.min_keypoints = 46`).  Values are booleans, numbers, strings
(bare or quoted) or comma/bracket lists of numbers.  Unknown keys are
rejected by name so typos fail loudly.  Command-line flags override file
values; the resolved mapping is hashed for the run record.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, Tuple

from .alignment import GateConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .late_fusion import CartHyperparams, POLICIES
from .synth import ScenarioConfig

_INT = "int"
_FLOAT = "float"
_BOOL = "bool"
_STR = "str"
_LIST = "list"

KNOWN_KEYS: Dict[str, str] = {
    "seed": _INT,
    "threads": _INT,
    "paths.manifest": _STR,
    "paths.out": _STR,
    "canvas.width": _INT,
    "canvas.height": _INT,
    "alignment.min_keypoints": _INT,
    "alignment.max_mean_sq_residual": _FLOAT,
    "alignment.robust_iterations": _INT,
    "alignment.robust_inlier_px": _FLOAT,
    "alignment.strict_dims": _BOOL,
    "early_fusion.rescale": _STR,
    "early_fusion.global_pca": _BOOL,
    "late_fusion.policy": _STR,
    "late_fusion.max_depth": _INT,
    "late_fusion.min_samples_leaf": _INT,
    "late_fusion.min_impurity_decrease": _FLOAT,
    "late_fusion.iou_label_thresh": _FLOAT,
    "eval.iou_match_thresh": _FLOAT,
    "eval.score_thresh": _FLOAT,
    "split.ratios": _LIST,
    "scenario.n_images": _INT,
    "scenario.canvas": _LIST,
    "scenario.objects_per_image": _FLOAT,
    "scenario.class_priors": _LIST,
    "scenario.vis_recall": _LIST,
    "scenario.tir_recall": _FLOAT,
    "scenario.vis_fp_rate": _FLOAT,
    "scenario.tir_fp_rate": _FLOAT,
    "scenario.jitter_center_px": _FLOAT,
    "scenario.jitter_scale": _FLOAT,
    "scenario.tp_score_ab": _LIST,
    "scenario.fp_score_ab": _LIST,
    "scenario.box_size_range": _LIST,
    "scenario.tir_shrink": _FLOAT,
    "scenario.max_overlap_iou": _FLOAT,
    "scenario.max_place_attempts": _INT,
    "scenario.correlated_fp": _BOOL,
}


def _parse_scalar(token: str):
    token = token.strip()
    if token.lower() in ("true", "false"):
        return token.lower() == "true"
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "'\"":
        return token[1:-1]
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        raw = raw[1:-1]
        return [_parse_scalar(t) for t in raw.split(",") if t.strip()]
    if "," in raw:
        return [_parse_scalar(t) for t in raw.split(",")]
    return _parse_scalar(raw)


def parse_config_text(text: str) -> Dict[str, object]:
    """Parse flat dotted key-value lines; unknown keys raise ConfigError."""
    values: Dict[str, object] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        parsed = _parse_value(value)
        values[key] = _coerce(key, parsed)
    return values


def _coerce(key: str, value):
    expected = KNOWN_KEYS[key]
    if expected == _INT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {key!r} expects an integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"key {key!r} expects an integer, got {value!r}")
        return int(value)
    if expected == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {key!r} expects a number, got {value!r}")
        return float(value)
    if expected == _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"key {key!r} expects true/false, got {value!r}")
        return value
    if expected == _LIST:
        if not isinstance(value, list):
            value = [value]
        return [float(v) for v in value]
    return str(value)


def load_config(path) -> Dict[str, object]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_hash(values: Dict[str, object]) -> str:
    """SHA-256 of the canonical `key = value` rendering."""
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, list):
            rendered = ", ".join(repr(x) for x in v)
        else:
            rendered = repr(v)
        lines.append(f"{key} = {rendered}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


@dataclass
class PipelineConfig:
    """Resolved configuration for all pipeline stages."""

    seed: int = 0
    threads: int = 1
    manifest: str = ""
    out: str = ""
    canvas: Tuple[int, int] = (1792, 1433)
    gate: GateConfig = field(default_factory=GateConfig)
    strict_dims: bool = False
    rescale: str = "moments"
    global_pca: bool = False
    policy: str = "classify_all"
    cart: CartHyperparams = field(default_factory=CartHyperparams)
    iou_label_thresh: float = 0.5
    eval_cfg: EvalConfig = field(default_factory=EvalConfig)
    split_ratios: Tuple[float, float, float] = (0.64, 0.16, 0.20)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    raw: Dict[str, object] = field(default_factory=dict)

    @staticmethod
    def from_mapping(values: Dict[str, object]) -> "PipelineConfig":
        for key in values:
            if key not in KNOWN_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
        seed = int(values.get("seed", 0))
        canvas = (
            int(values.get("canvas.width", 1792)),
            int(values.get("canvas.height", 1433)),
        )
        gate = GateConfig(
            min_keypoints=int(values.get("alignment.min_keypoints", 46)),
            max_mean_sq_residual=float(values.get("alignment.max_mean_sq_residual", 68.0)),
            robust_iterations=int(values.get("alignment.robust_iterations", 2000)),
            robust_inlier_px=float(values.get("alignment.robust_inlier_px", 3.0)),
            seed=seed,
        )
        policy = str(values.get("late_fusion.policy", "classify_all"))
        if policy not in POLICIES:
            raise ConfigError(f"late_fusion.policy must be one of {POLICIES}")
        rescale = str(values.get("early_fusion.rescale", "moments"))
        if rescale not in ("moments", "minmax"):
            raise ConfigError("early_fusion.rescale must be moments or minmax")
        cart = CartHyperparams(
            max_depth=int(values.get("late_fusion.max_depth", 6)),
            min_samples_leaf=int(values.get("late_fusion.min_samples_leaf", 5)),
            min_impurity_decrease=float(values.get("late_fusion.min_impurity_decrease", 1e-7)),
        )
        eval_cfg = EvalConfig(
            iou_match_thresh=float(values.get("eval.iou_match_thresh", 0.5)),
            score_thresh=float(values.get("eval.score_thresh", 0.5)),
        )
        ratios = values.get("split.ratios", [0.64, 0.16, 0.20])
        if len(ratios) != 3:
            raise ConfigError("split.ratios needs exactly three values")
        scenario = _scenario_from(values, seed)
        return PipelineConfig(
            seed=seed,
            threads=int(values.get("threads", 1)),
            manifest=str(values.get("paths.manifest", "")),
            out=str(values.get("paths.out", "")),
            canvas=canvas,
            gate=gate,
            strict_dims=bool(values.get("alignment.strict_dims", False)),
            rescale=rescale,
            global_pca=bool(values.get("early_fusion.global_pca", False)),
            policy=policy,
            cart=cart,
            iou_label_thresh=float(values.get("late_fusion.iou_label_thresh", 0.5)),
            eval_cfg=eval_cfg,
            split_ratios=tuple(float(r) for r in ratios),
            scenario=scenario,
            raw=dict(values),
        )


def _scenario_from(values: Dict[str, object], seed: int) -> ScenarioConfig:
    defaults = ScenarioConfig()
    canvas = values.get("scenario.canvas", list(defaults.canvas))
    if len(canvas) != 2:
        raise ConfigError("scenario.canvas needs exactly two values")

    def triple(key, fallback):
        v = values.get(key, list(fallback))
        if len(v) != 3:
            raise ConfigError(f"{key} needs exactly three values")
        return tuple(float(x) for x in v)

    def pair(key, fallback):
        v = values.get(key, list(fallback))
        if len(v) != 2:
            raise ConfigError(f"{key} needs exactly two values")
        return tuple(float(x) for x in v)

    return ScenarioConfig(
        n_images=int(values.get("scenario.n_images", defaults.n_images)),
        canvas=(int(canvas[0]), int(canvas[1])),
        objects_per_image=float(
            values.get("scenario.objects_per_image", defaults.objects_per_image)
        ),
        class_priors=triple("scenario.class_priors", defaults.class_priors),
        vis_recall=triple("scenario.vis_recall", defaults.vis_recall),
        tir_recall=float(values.get("scenario.tir_recall", defaults.tir_recall)),
        vis_fp_rate=float(values.get("scenario.vis_fp_rate", defaults.vis_fp_rate)),
        tir_fp_rate=float(values.get("scenario.tir_fp_rate", defaults.tir_fp_rate)),
        jitter_center_px=float(
            values.get("scenario.jitter_center_px", defaults.jitter_center_px)
        ),
        jitter_scale=float(values.get("scenario.jitter_scale", defaults.jitter_scale)),
        tp_score_ab=pair("scenario.tp_score_ab", defaults.tp_score_ab),
        fp_score_ab=pair("scenario.fp_score_ab", defaults.fp_score_ab),
        seed=seed,
        box_size_range=pair("scenario.box_size_range", defaults.box_size_range),
        tir_shrink=float(values.get("scenario.tir_shrink", defaults.tir_shrink)),
        max_overlap_iou=float(
            values.get("scenario.max_overlap_iou", defaults.max_overlap_iou)
        ),
        max_place_attempts=int(
            values.get("scenario.max_place_attempts", defaults.max_place_attempts)
        ),
        correlated_fp=bool(values.get("scenario.correlated_fp", defaults.correlated_fp)),
    )
