import warnings

import pytest

from oscinet.config import ConfigError, RunConfig, emit_config, load_config, parse_config

MINIMAL = """
[model]
branch_widths = [8, 16, 5]
trunk_widths = [1, 16, 4]
"""


class TestParse:
    def test_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.train.learning_rate == 1e-4 and cfg.train.epochs == 1500
        assert cfg.train.batch_size == 100 and cfg.strict
        assert cfg.model.n_t == 4 and cfg.model.trunk_scales == (1.0,)

    def test_roundtrip(self):
        text = MINIMAL + """
n_trunk = 3
n_branch = 2
complex_output = true
activation = "sin"
[train]
learning_rate = 1e-3
epochs = 12
seed = 4
"""
        text = text.replace("[1, 16, 4]", "[1, 16, 4]").replace("[8, 16, 5]", "[8, 16, 13]")
        cfg = parse_config('dataset = "data/x"\n' + text)
        again = parse_config(emit_config(cfg))
        assert again == cfg
        assert cfg.model.trunk_scales == (1.0, 2.0, 4.0) and cfg.model.branch_scales == (1.0, 2.0)
        assert emit_config(again) == emit_config(cfg)

    def test_unknown_key_strict(self):
        with pytest.raises(ConfigError, match="model.depth"):
            parse_config(MINIMAL + "depth = 3\n")

    def test_unknown_key_lenient(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = parse_config("strict = false\n" + MINIMAL + "depth = 3\n")
        assert not cfg.strict and caught

    def test_parse_error_line(self):
        with pytest.raises(ConfigError, match="line 3"):
            parse_config("[model]\nbranch_widths = [1, 2]\ntrunk_widths = [1,\n")
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("[model]\nbranch_widths = [1, @]\ntrunk_widths = [1, 2]\n")

    def test_validation_names_field(self):
        with pytest.raises(ConfigError, match="train.epochs"):
            parse_config(MINIMAL + "[train]\nepochs = \"many\"\n")
        with pytest.raises(ConfigError, match="epochs"):
            parse_config(MINIMAL + "[train]\nepochs = 0\n")

    def test_spec_invariants_rechecked(self):
        with pytest.raises(ConfigError):
            parse_config(MINIMAL.replace("[8, 16, 5]", "[8, 16, 6]"))

    def test_missing_widths(self):
        with pytest.raises(ConfigError, match="branch_widths"):
            parse_config("[model]\n")


class TestPaths:
    def test_dataset_must_exist(self, tmp_path):
        cfg = parse_config(f'dataset = "{tmp_path / "nope"}"\n' + MINIMAL)
        with pytest.raises(ConfigError, match="does not exist"):
            cfg.validate_paths()
        (tmp_path / "nope").mkdir()
        cfg.validate_paths()

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "run.toml")

    def test_load(self, tmp_path):
        (tmp_path / "run.toml").write_text(MINIMAL)
        assert isinstance(load_config(tmp_path / "run.toml"), RunConfig)
