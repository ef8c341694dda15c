import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsroute.config import PRESETS, ConfigError, RunConfig, load_config, parse_config_text


def test_parse_skips_comments_and_blank_lines():
    text = "# header\n\nbatch_size = 16  # trailing\n activation=pa \n"
    assert parse_config_text(text) == {"batch_size": "16", "activation": "pa"}


def test_parse_rejects_line_without_equals():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed = 1\nbatch_size 16\n")


def test_text_round_trip():
    config = RunConfig.from_preset("cifar10", activation="ci", random_flip=True)
    back = RunConfig.from_mapping(parse_config_text(config.to_text()))
    assert back == config


def test_load_config_overrides_beat_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("preset = desk_mnist\nbatch_size = 16\nseed = 4\n")
    config = load_config(path, batch_size=8, seed=None)
    assert config.batch_size == 8 and config.seed == 4 and config.preset == "desk_mnist"


def test_preset_overrides_apply_after_preset():
    config = RunConfig.from_preset("mnist", prim_channels=8)
    assert config.prim_channels == 8 and config.conv1_channels == 256


def test_hash_is_stable_and_ignores_paths():
    a = RunConfig.from_preset("desk_mnist")
    b = RunConfig.from_preset("desk_mnist", data_dir="/elsewhere", run_root="/tmp/runs")
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 16
    assert a.config_hash() != a.replace(seed=1).config_hash()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), lr=st.floats(0.0, 1.0, allow_nan=False))
def test_hash_depends_only_on_content(seed, lr):
    a = RunConfig.from_preset("desk_mnist", seed=seed, learning_rate=lr)
    b = RunConfig.from_mapping(parse_config_text(a.to_text()))
    assert a.config_hash() == b.config_hash()


@pytest.mark.parametrize("overrides, message", [
    (dict(batch_size=0), "batch_size"),
    (dict(dropout_keep=0.0), "dropout_keep"),
    (dict(m_plus=0.1, m_minus=0.9), "m_minus"),
    (dict(activation="relu"), "activation"),
    (dict(conv1_padding="full"), "conv1_padding"),
    (dict(crop=40), "crop"),
    (dict(routing_iters=0), "routing_iters"),
])
def test_invalid_values_rejected(overrides, message):
    with pytest.raises(ConfigError, match=message):
        RunConfig.from_preset("desk_mnist", **overrides)


def test_unknown_keys_and_bad_types():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_mapping({"batchsize": "3"})
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig().replace(colour="red")
    with pytest.raises(ConfigError, match="cannot parse"):
        RunConfig.from_mapping({"seed": "abc"})
    with pytest.raises(ConfigError, match="cannot parse"):
        RunConfig.from_mapping({"random_flip": "maybe"})
    with pytest.raises(ConfigError, match="preset"):
        RunConfig.from_preset("imagenet")


def test_every_preset_builds():
    for name in PRESETS:
        config = RunConfig.from_preset(name)
        assert config.preset == name


def test_reference_hyperparameters():
    config = RunConfig.from_preset("cifar10")
    assert (config.pa_n, config.ci_bar) == (6, 6.5)
    assert config.checkpoint_every == 1500 and config.eval_checkpoints == 40
    assert config.threshold == 0.15 and config.model_input_size == 24
    assert (config.m_plus, config.m_minus, config.lambda_down) == (0.9, 0.1, 0.5)
    assert np.isclose(config.lr_decay_rate, 0.96) and config.lr_decay_steps == 2000
