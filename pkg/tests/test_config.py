"""Run configuration: YAML round-trip, strict decoding and overrides."""

import pytest

from lccsign.backbone import BackboneConfig
from lccsign.config import OUTPUT_ENV, RunConfig, apply_overrides
from lccsign.errors import ConfigError
from lccsign.head import LossWeights


class TestRoundTrip:
    def test_defaults(self):
        cfg = RunConfig()
        assert RunConfig.from_yaml(cfg.to_yaml()) == cfg

    def test_nested_values(self, tmp_path):
        cfg = RunConfig(
            weights=LossWeights(alpha=0.0, beta=2.5, tau=0.5),
            streams=("joint", "bone_motion"),
            seed=7,
        )
        cfg.model.backbone = BackboneConfig(channels=(4, 8), strides=(1, 2), window=5)
        cfg.save(tmp_path / "c.yaml")
        back = RunConfig.load(tmp_path / "c.yaml")
        assert back == cfg
        assert back.model.backbone.channels == (4, 8)

    def test_train_config_takes_run_level_fields(self):
        cfg = RunConfig(weights=LossWeights(tau=0.3), seed=11)
        tc = cfg.train_config("bone")
        assert (tc.weights.tau, tc.seed, tc.stream) == (0.3, 11, "bone")
        assert "weights" not in cfg.to_dict()["train"]

    def test_empty_document(self):
        assert RunConfig.from_yaml("") == RunConfig()


class TestStrictDecoding:
    def test_unknown_field_named(self):
        with pytest.raises(ConfigError, match=r"weights\.gamma"):
            RunConfig.from_yaml("weights:\n  gamma: 1.0\n")

    def test_unknown_top_level(self):
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_dict({"bogus": 1})

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match=r"train\.epochs"):
            RunConfig.from_dict({"train": {"epochs": "ten"}})

    def test_bool_is_not_int(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"seed": True})

    def test_yaml_syntax_error_has_location(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("weights:\n  alpha: [1, 2\n")
        with pytest.raises(ConfigError, match=r"bad\.yaml:\d+:\d+"):
            RunConfig.load(path)

    def test_non_mapping(self):
        with pytest.raises(ConfigError, match="mapping"):
            RunConfig.from_yaml("- 1\n- 2\n")

    def test_invalid_value_reported_as_config_error(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"streams": ["sideways"]})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"fusion": {"heads": ["hands"]}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            RunConfig.load(tmp_path / "absent.yaml")


class TestOverrides:
    def test_dotted(self):
        cfg = apply_overrides(RunConfig(), {"weights.alpha": 0.0, "train.epochs": 3, "seed": 4})
        assert (cfg.weights.alpha, cfg.train.epochs, cfg.seed) == (0.0, 3, 4)

    def test_original_untouched(self):
        base = RunConfig()
        apply_overrides(base, {"weights.tau": 0.5})
        assert base.weights.tau == 0.1

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"nope.field": 1})

    def test_unknown_leaf(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"weights.nope": 1})


def test_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert RunConfig().output_dir == str(tmp_path)
    monkeypatch.delenv(OUTPUT_ENV)
    assert RunConfig().output_dir == "runs"
