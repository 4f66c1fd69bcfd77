import pytest
import yaml

from spsr.config import (RunConfig, apply_overrides, config_from_echo,
                         default_config, dump_config, effective_config_dict,
                         load_config)
from spsr.errors import ConfigError


def test_defaults_validate():
    config = default_config()
    config.validate()
    assert config.hr_patch_size() == 128  # 32 * 4
    assert config.train.variant == "spsr-g"
    assert config.losses.beta_i == pytest.approx(0.01)
    assert config.generator.num_rrdb_blocks == 23


def test_hr_patch_size_override_wins():
    config = default_config()
    config.critics.hr_patch_size = 64
    assert config.hr_patch_size() == 64
    config.critics.hr_patch_size = 0
    config.data.lr_patch = 24
    assert config.hr_patch_size() == 96


def test_load_config_merges_partial_file(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump({
        "train": {"total_iters": 123, "lr_g": 2e-4},
        "data": {"root": "/some/where", "batch_size": 4},
    }))
    config = load_config(str(p))
    assert config.train.total_iters == 123
    assert config.train.lr_g == pytest.approx(2e-4)
    assert config.train.lr_d == pytest.approx(1e-4)  # untouched default
    assert config.data.root == "/some/where"
    assert config.generator.num_rrdb_blocks == 23


def test_load_config_error_paths(tmp_path):
    assert isinstance(load_config(None), RunConfig)
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {total_iters: [unclosed")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    notmap = tmp_path / "notmap.yaml"
    notmap.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(str(notmap))
    badsection = tmp_path / "badsection.yaml"
    badsection.write_text("optimizer: {lr: 1}\n")
    with pytest.raises(ConfigError) as err:
        load_config(str(badsection))
    assert "optimizer" in str(err.value)
    badkey = tmp_path / "badkey.yaml"
    badkey.write_text("train: {learning_rate: 1}\n")
    with pytest.raises(ConfigError) as err:
        load_config(str(badkey))
    assert "train.learning_rate" in str(err.value)
    scalar_section = tmp_path / "scalar.yaml"
    scalar_section.write_text("train: 5\n")
    with pytest.raises(ConfigError):
        load_config(str(scalar_section))
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    load_config(str(empty)).validate()


def test_apply_overrides_parses_yaml_scalars():
    base = default_config()
    out = apply_overrides(base, [
        "train.lr_g=5e-4", "train.total_iters=7", "data.augment=false",
        "generator.tap_indices=[1,2]", "train.nse_checkpoint=/tmp/x.pt",
    ])
    # dot-less exponent floats coerce by field type despite YAML reading a str
    assert out.train.lr_g == pytest.approx(5e-4)
    assert isinstance(out.train.lr_g, float)
    assert out.train.total_iters == 7
    assert out.data.augment is False
    assert out.generator.tap_indices == [1, 2]
    assert out.train.nse_checkpoint == "/tmp/x.pt"
    # the input config is untouched
    assert base.train.total_iters != 7 and base.data.augment is True


def test_apply_overrides_rejects_typos():
    base = default_config()
    with pytest.raises(ConfigError):
        apply_overrides(base, ["train.lr=1e-4"])  # no such key
    with pytest.raises(ConfigError):
        apply_overrides(base, ["optimizer.lr_g=1e-4"])  # no such section
    with pytest.raises(ConfigError):
        apply_overrides(base, ["lr_g=1e-4"])  # missing section prefix
    with pytest.raises(ConfigError):
        apply_overrides(base, ["train.lr_g"])  # no value


def test_effective_dict_and_dump_round_trip():
    config = apply_overrides(default_config(), ["train.seed=9"])
    eff = effective_config_dict(config)
    assert eff["train"]["seed"] == 9
    assert isinstance(eff["train"]["lr_milestones"], list)
    text = dump_config(config)
    parsed = yaml.safe_load(text)
    assert parsed == eff


def test_config_from_echo_restores_sections():
    config = apply_overrides(default_config(), [
        "generator.num_rrdb_blocks=2", "generator.tap_indices=[1,2]",
        "generator.num_gradient_blocks=2", "generator.base_channels=16",
        "generator.growth_channels=8", "train.seed=4",
    ])
    echo = effective_config_dict(config)
    back = config_from_echo(echo)
    assert back.generator == config.generator
    assert back.train.seed == 4
    partial = config_from_echo({"train": {"seed": 8}})
    assert partial.train.seed == 8
    assert partial.generator.num_rrdb_blocks == 23


def test_validate_covers_every_section():
    config = default_config()
    config.critics.perceptual_layer = "conv7_7"
    with pytest.raises(ConfigError):
        config.validate()
    config = default_config()
    config.data.split = "holdout"
    with pytest.raises(ConfigError):
        config.validate()
    config = default_config()
    config.ssl.patch_size = 30
    with pytest.raises(ConfigError):
        config.validate()
    config = default_config()
    config.nse.kernel_size = 7
    with pytest.raises(ConfigError):
        config.validate()
