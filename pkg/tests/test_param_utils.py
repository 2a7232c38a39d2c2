from pathlib import Path

import pytest
import yaml

from src.models import ConfigError
from utils.param_utils import (
    apply_overrides,
    config_hash,
    load_pipeline_config,
    parse_override,
    parse_value,
    safe_bool_conversion,
    safe_int_conversion,
    safe_list_conversion,
)


class TestConversions:

    def test_int(self):
        assert safe_int_conversion("42") == 42
        assert safe_int_conversion(' "7" ') == 7
        assert safe_int_conversion(None) is None
        with pytest.raises(ValueError, match="Override .mf.dim. expects an integer"):
            safe_int_conversion("4.5", "mf.dim")
        with pytest.raises(ValueError):
            safe_int_conversion(True)

    def test_bool(self):
        assert safe_bool_conversion("on") is True
        assert safe_bool_conversion("0") is False
        with pytest.raises(ValueError, match="stages.s2d"):
            safe_bool_conversion("maybe", "stages.s2d")

    def test_list(self):
        assert safe_list_conversion("[0, 0.5, 1]") == [0, 0.5, 1]
        assert safe_list_conversion("1,3,5") == [1, 3, 5]
        assert safe_list_conversion("[]") == []

    @pytest.mark.parametrize("raw,expected", [
        ("3", 3),
        ("1e-3", 1e-3),
        ("true", True),
        ("off", False),
        ("null", None),
        ("[10, 20]", [10, 20]),
        ("adam", "adam"),
    ])
    def test_parse_value(self, raw, expected):
        assert parse_value(raw) == expected


class TestOverrides:

    def test_parse_override(self):
        assert parse_override("align.k=5") == (["align", "k"], 5)
        assert parse_override("mf.optimizer=sgd") == (["mf", "optimizer"], "sgd")

    def test_malformed(self):
        with pytest.raises(ConfigError):
            parse_override("align.k")
        with pytest.raises(ConfigError):
            parse_override("align..k=1")

    def test_apply_creates_sections_and_copies(self):
        data = {"slim": {"l1": 0.1}}
        result = apply_overrides(data, ["slim.l2=0.5", "align.s2d=false"])
        assert result == {"slim": {"l1": 0.1, "l2": 0.5}, "align": {"s2d": False}}
        assert data == {"slim": {"l1": 0.1}}

    def test_apply_into_scalar(self):
        with pytest.raises(ConfigError):
            apply_overrides({"seed": 1}, ["seed.x=2"])


class TestLoadPipelineConfig:

    @pytest.fixture
    def config_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump({
            "data": {"name": "toy", "train_path": "train.txt", "test_path": "test.txt"},
            "align": {"k": 3},
            "out_dir": str(tmp_path / "out"),
        }))
        return path

    def test_overrides_and_flags(self, config_file):
        cfg = load_pipeline_config(config_file, ["align.k=5", "mf.dim=16"], seed=9, threads=2)
        assert cfg.align.k_user == 5
        assert cfg.mf.dim == 16
        assert cfg.seed == 9
        assert cfg.mf.seed == 9
        assert cfg.threads == 2

    def test_out_flag_wins(self, config_file, tmp_path):
        cfg = load_pipeline_config(config_file, out=str(tmp_path / "elsewhere"))
        assert cfg.out_dir == str(tmp_path / "elsewhere")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_pipeline_config(tmp_path / "missing.yaml")

    def test_invalid_value(self, config_file):
        with pytest.raises(ConfigError):
            load_pipeline_config(config_file, ["align.lambda_conf=1.5"])

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_pipeline_config(path)

    def test_hash_is_stable(self, config_file):
        a = load_pipeline_config(config_file)
        b = load_pipeline_config(config_file)
        assert config_hash(a) == config_hash(b)
        assert len(config_hash(a)) == 64
        assert config_hash(load_pipeline_config(config_file, ["align.k=4"])) != config_hash(a)

    def test_hash_ignores_output_dir_and_threads(self, config_file, tmp_path):
        a = load_pipeline_config(config_file)
        b = load_pipeline_config(config_file, threads=8, out=str(tmp_path / "other"))
        assert config_hash(a) == config_hash(b)


@pytest.mark.parametrize("name", ["ml1m.yaml", "gowalla.yaml"])
def test_shipped_configs_validate(name):
    cfg = load_pipeline_config(Path(__file__).resolve().parents[1] / "config" / name)
    assert cfg.mf.dim == 64
    assert cfg.eval.tune_k == 20
