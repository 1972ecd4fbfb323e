import pytest

from thermofuse.config import PipelineConfig, config_hash, parse_config_text
from thermofuse.errors import ConfigError


VALID = """
# reference pipeline settings
seed = 42
alignment.min_keypoints = 46
alignment.max_mean_sq_residual = 68.0
early_fusion.rescale = moments
late_fusion.policy = classify_all
eval.iou_match_thresh = 0.5
split.ratios = 0.64, 0.16, 0.20
scenario.n_images = 25
scenario.class_priors = [0.85, 0.10, 0.05]
scenario.correlated_fp = false
"""


class TestParsing:
    def test_valid_file(self):
        values = parse_config_text(VALID)
        assert values["seed"] == 42
        assert values["alignment.max_mean_sq_residual"] == 68.0
        assert values["split.ratios"] == [0.64, 0.16, 0.20]
        assert values["scenario.class_priors"] == [0.85, 0.10, 0.05]
        assert values["scenario.correlated_fp"] is False
        assert values["early_fusion.rescale"] == "moments"

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("alignment.min_keypointz = 3\n")
        assert "alignment.min_keypointz" in str(err.value)

    def test_type_mismatch(self):
        with pytest.raises(ConfigError):
            parse_config_text("scenario.n_images = lots\n")
        with pytest.raises(ConfigError):
            parse_config_text("scenario.correlated_fp = 1\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_config_text("seed 42\n")

    def test_comments_and_blanks_ignored(self):
        assert parse_config_text("\n# only comments\n\n") == {}


class TestPipelineConfig:
    def test_defaults(self):
        cfg = PipelineConfig.from_mapping({})
        assert cfg.gate.min_keypoints == 46
        assert cfg.gate.max_mean_sq_residual == 68.0
        assert cfg.canvas == (1792, 1433)
        assert cfg.cart.max_depth == 6
        assert cfg.eval_cfg.score_thresh == 0.5
        assert cfg.scenario.class_priors == (0.85, 0.10, 0.05)

    def test_seed_propagates(self):
        cfg = PipelineConfig.from_mapping({"seed": 99})
        assert cfg.gate.seed == 99
        assert cfg.scenario.seed == 99

    def test_values_flow_through(self):
        cfg = PipelineConfig.from_mapping(parse_config_text(VALID))
        assert cfg.seed == 42
        assert cfg.scenario.n_images == 25
        assert cfg.split_ratios == (0.64, 0.16, 0.20)

    def test_bad_policy(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_mapping({"late_fusion.policy": "vote"})

    def test_bad_ratio_count(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_mapping({"split.ratios": [0.5, 0.5]})


class TestConfigHash:
    def test_stable_and_sensitive(self):
        a = parse_config_text(VALID)
        assert config_hash(a) == config_hash(dict(a))
        b = dict(a)
        b["seed"] = 43
        assert config_hash(a) != config_hash(b)

    def test_order_independent(self):
        a = {"seed": 1, "scenario.n_images": 5}
        b = {"scenario.n_images": 5, "seed": 1}
        assert config_hash(a) == config_hash(b)
