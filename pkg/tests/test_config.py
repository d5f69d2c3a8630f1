"""TOML run-config parsing: schema versioning, field-path error messages,
unknown-key rejection, CLI overrides, and sweep-axis plumbing."""

import dataclasses

import pytest

from bnspike.config import (
    MAX_SWEEP_CELLS,
    apply_overrides,
    load_config,
    parse_config,
    set_axis,
)
from bnspike.errors import ConfigError

MINIMAL = """
schema_version = 1
seed = 7

[dataset]
kind = "hilbert"
n = 8
d = 12
noise_std = 1e-2

[init]
kind = "ratio"
ratio = 0.01
k = 0.08

[gd]
eta = 0.3
eta_alpha = 0.2
max_iters = 100
loss = "square"
mode = "vector"
"""


class TestParsing:
    def test_minimal_config_round_trips(self):
        cfg = parse_config(MINIMAL)
        assert cfg.seed == 7
        assert cfg.dataset.kind == "hilbert"
        assert cfg.gd.eta == 0.3
        assert cfg.eta_scale == "absolute"
        doc = cfg.as_dict()
        assert doc["schema_version"] == 1
        assert doc["gd"]["loss"] == "square"

    def test_schema_version_required_and_checked(self):
        with pytest.raises(ConfigError, match="schema_version"):
            parse_config(MINIMAL.replace("schema_version = 1", "schema_version = 2"))
        with pytest.raises(ConfigError, match="schema_version"):
            parse_config(MINIMAL.replace("schema_version = 1\n", ""))

    def test_unknown_key_error_carries_field_path(self):
        with pytest.raises(ConfigError, match="unknown config key 'gd.bogus'"):
            parse_config(MINIMAL + "\n[gd.bogus]\nx = 1\n")
        with pytest.raises(ConfigError, match="unknown config key 'dataset.shape'"):
            parse_config(MINIMAL.replace("[dataset]", "[dataset]\nshape = 3"))

    def test_type_errors_name_the_field(self):
        with pytest.raises(ConfigError, match="gd.eta"):
            parse_config(MINIMAL.replace("eta = 0.3", 'eta = "fast"'))
        with pytest.raises(ConfigError, match="dataset.n"):
            parse_config(MINIMAL.replace("n = 8", "n = 8.5"))

    def test_bool_is_not_an_int(self):
        with pytest.raises(ConfigError, match="dataset.n"):
            parse_config(MINIMAL.replace("n = 8", "n = true"))

    def test_choice_fields_reject_unknown_values(self):
        with pytest.raises(ConfigError, match="dataset.kind"):
            parse_config(MINIMAL.replace('kind = "hilbert"', 'kind = "mnist"', 1))
        with pytest.raises(ConfigError, match="gd.loss"):
            parse_config(MINIMAL.replace('loss = "square"', 'loss = "hinge"'))

    def test_analysis_defaults_follow_loss(self):
        cfg = parse_config(MINIMAL)
        assert cfg.analysis.linear and not cfg.analysis.logistic
        cfg = parse_config(MINIMAL.replace('loss = "square"', 'loss = "logistic"'))
        assert cfg.analysis.logistic and not cfg.analysis.linear

    def test_file_dataset_requires_path(self):
        broken = MINIMAL.replace('kind = "hilbert"', 'kind = "file"', 1)
        with pytest.raises(ConfigError, match="dataset.path"):
            parse_config(broken)

    def test_window_relative_needs_fractional_eta(self):
        src = MINIMAL.replace("eta = 0.3", 'eta = 1.5\neta_scale = "window_relative"')
        with pytest.raises(ConfigError, match="eta"):
            parse_config(src)
        ok = MINIMAL.replace("eta = 0.3", 'eta = 0.5\neta_scale = "window_relative"')
        assert parse_config(ok).eta_scale == "window_relative"


class TestOverridesAndAxes:
    def test_seed_override(self):
        cfg = apply_overrides(parse_config(MINIMAL), seed=99)
        assert cfg.seed == 99

    def test_loss_override_refreshes_analysis_defaults(self):
        cfg = apply_overrides(parse_config(MINIMAL), loss="logistic")
        assert cfg.gd.loss == "logistic"
        assert cfg.analysis.logistic and not cfg.analysis.linear

    def test_explicit_analysis_table_survives_loss_override(self):
        src = MINIMAL + "\n[analysis]\nlinear = true\nlogistic = true\n"
        cfg = apply_overrides(parse_config(src), loss="logistic")
        assert cfg.analysis.linear and cfg.analysis.logistic

    def test_set_axis_each_sweepable(self):
        cfg = parse_config(MINIMAL)
        assert set_axis(cfg, "eta", 0.7).gd.eta == 0.7
        assert set_axis(cfg, "seed", 3).seed == 3
        assert set_axis(cfg, "max_iters", 50).gd.max_iters == 50
        assert set_axis(cfg, "ratio", 0.02).init.ratio == 0.02
        assert set_axis(cfg, "noise_std", 0.1).dataset.noise_std == 0.1
        with pytest.raises(ConfigError, match="axis"):
            set_axis(cfg, "momentum", 0.9)

    def test_configs_are_frozen(self):
        cfg = parse_config(MINIMAL)
        with pytest.raises(dataclasses.FrozenInstanceError):
            cfg.seed = 8


class TestSweepTable:
    def test_sweep_axes_parse(self):
        cfg = parse_config(MINIMAL + "\n[sweep]\neta = [0.1, 0.2]\nseed = [1, 2, 3]\n")
        assert cfg.sweep == {"eta": [0.1, 0.2], "seed": [1, 2, 3]}

    def test_unknown_axis_rejected(self):
        with pytest.raises(ConfigError, match="sweep.momentum"):
            parse_config(MINIMAL + "\n[sweep]\nmomentum = [0.9]\n")

    def test_cell_cap_enforced(self):
        side = int(MAX_SWEEP_CELLS**0.5) + 1
        grid = "[sweep]\nseed = [%s]\neta = [%s]\n" % (
            ", ".join(str(i) for i in range(side)),
            ", ".join(str(0.1 + 0.001 * i) for i in range(side)),
        )
        with pytest.raises(ConfigError, match="cells"):
            parse_config(MINIMAL + "\n" + grid)


def test_load_config_reads_a_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(MINIMAL)
    assert load_config(path).seed == 7
