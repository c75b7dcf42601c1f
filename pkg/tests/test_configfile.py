"""Config parsing with line-accurate errors, and the config echo."""

import pytest

from mopro import configfile as cf
from mopro.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return str(path)


class TestParsing:
    def test_sections_keys_and_comments(self, tmp_path):
        path = write(tmp_path, """
# a comment
[data]
num_classes = 5   # trailing comment
noise_rate = 0.25

[train]
epochs = 20
""")
        sections = cf.parse_config_file(path)
        assert sections["data"]["num_classes"] == ("5", 4)
        assert sections["train"]["epochs"] == ("20", 8)

    def test_key_outside_section_reports_line(self, tmp_path):
        path = write(tmp_path, "num_classes = 5\n")
        with pytest.raises(ConfigError, match=":1"):
            cf.parse_config_file(path)

    def test_duplicate_key_reports_line(self, tmp_path):
        path = write(tmp_path, "[data]\nseed = 1\nseed = 2\n")
        with pytest.raises(ConfigError, match=":3.*duplicate"):
            cf.parse_config_file(path)

    def test_missing_equals_reports_line(self, tmp_path):
        path = write(tmp_path, "[data]\nnot a pair\n")
        with pytest.raises(ConfigError, match=":2"):
            cf.parse_config_file(path)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="cannot read"):
            cf.parse_config_file("/nonexistent/run.cfg")


class TestBuildConfigs:
    def test_gen_config_with_overrides(self, tmp_path):
        path = write(tmp_path, "[data]\nnum_classes = 6\ndim = 16\nper_class = 10\n"
                               "noise_rate = 0.2\ntest_per_class = 4\n")
        cfg, extras = cf.build_gen_config(cf.parse_config_file(path), path, seed_override=42)
        assert cfg.num_classes == 6 and cfg.dim == 16 and cfg.seed == 42
        assert extras == {"test_per_class": 4}

    def test_unknown_key_lists_valid_ones(self, tmp_path):
        path = write(tmp_path, "[data]\nbanana = 1\n")
        with pytest.raises(ConfigError, match="banana"):
            cf.build_gen_config(cf.parse_config_file(path), path)

    def test_out_of_range_value_names_field_and_range(self, tmp_path):
        path = write(tmp_path, "[data]\nnoise_rate = 1.5\n")
        with pytest.raises(ConfigError, match=r"noise_rate.*\[0, 1\]"):
            cf.build_gen_config(cf.parse_config_file(path), path)

    def test_bad_type_reports_line(self, tmp_path):
        path = write(tmp_path, "[data]\nnum_classes = many\n")
        with pytest.raises(ConfigError, match=":2.*integer"):
            cf.build_gen_config(cf.parse_config_file(path), path)

    def test_train_config_pins_dims_to_dataset(self, tmp_path):
        path = write(tmp_path, "[train]\nepochs = 12\nwarmup_epochs = 2\n"
                               "[model]\nhidden_dims = 16,16\n")
        cfg, _ = cf.build_train_config(cf.parse_config_file(path), path,
                                       num_classes=4, input_dim=8)
        assert cfg.num_classes == 4 and cfg.input_dim == 8
        assert cfg.epochs == 12 and cfg.hidden_dims == (16, 16)

    def test_tuple_and_bool_coercion(self, tmp_path):
        path = write(tmp_path, "[train]\nlr_milestones = 8,10\ndisable_pro = true\n"
                               "[augment]\nstrong_scale = 0.8,1.2\n")
        cfg, _ = cf.build_train_config(cf.parse_config_file(path), path, 10, 32)
        assert cfg.lr_milestones == (8, 10)
        assert cfg.disable_pro is True
        assert cfg.strong_scale == (0.8, 1.2)

    def test_rebalance_section(self, tmp_path):
        path = write(tmp_path, "[rebalance]\nrebalance_enabled = true\n"
                               "rebalance_epochs = 3\n")
        cfg, _ = cf.build_train_config(cf.parse_config_file(path), path, 10, 32)
        assert cfg.rebalance_enabled and cfg.rebalance_epochs == 3


class TestRenderConfig:
    def test_echo_round_trips_through_the_parser(self, tmp_path):
        from mopro.trainer import TrainConfig

        cfg = TrainConfig(num_classes=4, input_dim=8, lr_milestones=(3, 5),
                          disable_ins=True)
        text = cf.render_config(cfg, cf.TRAIN_SECTIONS)
        path = write(tmp_path, text)
        rebuilt, _ = cf.build_train_config(cf.parse_config_file(path), path, 4, 8)
        assert rebuilt == cfg
