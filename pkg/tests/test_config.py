import pytest

from histloss.config import (
    ConfigError,
    defaults,
    dump_settings,
    echo_text,
    load_run_config,
    read_config_file,
    settings_from_run_config,
    to_run_config,
)
from histloss.experiment import RunConfig
from histloss.codec import make_grid


def test_defaults_build_default_run_config():
    assert to_run_config(defaults()) == RunConfig()


def test_file_values_and_overrides(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[grid]\nbins = 256\nsigma_mult = 2.0\n\n[run]\nmode = baseline_mae\n")
    cfg, settings = load_run_config(path, {"grid": {"bins": 64, "sigma_mult": None}})
    assert cfg.grid.bins == 64
    assert cfg.grid.sigma_mult == 2.0
    assert cfg.mode == "baseline_mae"
    assert settings["optimizer"]["total_steps"] == 5000


@pytest.mark.parametrize(
    "text,match",
    [
        ("[grid]\nbinz = 3\n", "unknown key 'binz'"),
        ("[gird]\nbins = 3\n", "unknown section"),
        ("[grid]\nbins = many\n", "not a valid int"),
        ("[loss]\nnormalize = maybe\n", "not a valid bool"),
        ("[grid]\nbins\n", "cannot parse"),
        ("[loss]\nenergy_weight = 0.9\n", "sum"),
    ],
)
def test_bad_files_are_hard_errors(tmp_path, text, match):
    path = tmp_path / "c.ini"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_run_config(path)


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        read_config_file("/nonexistent/c.ini")


def test_unknown_override_rejected():
    with pytest.raises(ConfigError):
        load_run_config(None, {"grid": {"width": 3}})


def test_dump_round_trips(tmp_path):
    settings = defaults()
    settings["grid"]["lo"] = -0.1
    settings["grid"]["hi"] = 0.2
    settings["loss"]["normalize"] = False
    path = tmp_path / "c.ini"
    path.write_text(dump_settings(settings))
    assert read_config_file(path) == settings


def test_echo_is_loadable_and_complete(tmp_path):
    cfg = RunConfig().replace(seed=9)
    text = echo_text(cfg, make_grid(-1.0, 1.0, 128), "ab" * 32, tmp_path)
    assert "# dataset sha256: " + "ab" * 32 in text
    assert "k = 128" in text
    path = tmp_path / "echo.ini"
    path.write_text(text)
    loaded, settings = load_run_config(path)
    assert loaded == cfg
    assert settings == settings_from_run_config(cfg, tmp_path)
