import pytest

from sepstereo.config import ARCHITECTURE_KEYS, SCHEMA, ConfigError, RunConfig, help_text


def test_defaults_cover_schema_and_round_trip():
    cfg = RunConfig.defaults()
    assert set(cfg.values) == set(SCHEMA)
    assert RunConfig.parse(cfg.to_text()) == cfg


def test_parse_overrides_and_comments():
    cfg = RunConfig.parse("# comment\ntrain.lr = 0.01  # fast\nloss.use_LD=false\n\nseed=7\n")
    assert cfg["train.lr"] == 0.01 and cfg["loss.use_LD"] is False and cfg["seed"] == 7
    assert cfg["train.batch"] == SCHEMA["train.batch"][0]


@pytest.mark.parametrize("text", ["nonsense.key=1", "train.lr", "train.batch=two", "loss.use_LD=maybe"])
def test_bad_lines_are_errors(text):
    with pytest.raises(ConfigError):
        RunConfig.parse(text)


def test_env_seed_override(tmp_path, monkeypatch):
    p = tmp_path / "run.cfg"
    p.write_text("seed=3\n")
    assert RunConfig.load(p)["seed"] == 3
    monkeypatch.setenv("SEPSTEREO_SEED", "11")
    assert RunConfig.load(p)["seed"] == 11
    assert RunConfig.load(None)["seed"] == 11


def test_architecture_keys():
    assert "model.base_channels" in ARCHITECTURE_KEYS and "stft.hop" in ARCHITECTURE_KEYS
    assert "train.lr" not in ARCHITECTURE_KEYS and "seed" not in ARCHITECTURE_KEYS


def test_help_lists_every_key_with_default():
    text = help_text()
    for key in SCHEMA:
        assert f"  {key}=" in text


def test_derived_configs():
    cfg = RunConfig.parse("model.base_channels=4\ntrain.amp_aug_min=0.8\ntrain.placement=vertical\n")
    assert cfg.model_config().backbone.base_channels == 4
    tc = cfg.train_config()
    assert tc.amp_aug_range == (0.8, 1.5) and tc.placement == "vertical"
    assert cfg.stft_config().hop == 160
    assert cfg.loss_weights().use_LD
