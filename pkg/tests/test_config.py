# tests/test_config.py
"""
Tests for settings resolution and run config files.
"""
import sys
import os
import logging
import pytest
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from tcnn.core.config import Settings, load_settings, write_run_config
from tcnn.core.exceptions import ConfigError
from tcnn.utils.logging import configure_logging


def test_defaults():
    """Defaults describe the desk-scale synthetic setup"""
    settings = Settings()
    assert settings.DATASET == "synthetic"
    assert settings.SOFTPLUS_BETA == 5.0
    assert settings.GATING_LR == 0.1
    assert settings.numpy_dtype == "float32"


def test_precedence(tmp_path, monkeypatch):
    """Environment < config file < overrides"""
    monkeypatch.setenv("SEED", "1")
    monkeypatch.setenv("BATCH_SIZE", "16")
    monkeypatch.setenv("RESOLUTION", "24")
    path = tmp_path / "run.env"
    path.write_text("SEED=2\nBATCH_SIZE=32\n")
    settings = load_settings(str(path), {"SEED": 3})
    assert settings.SEED == 3
    assert settings.BATCH_SIZE == 32
    assert settings.RESOLUTION == 24


def test_missing_file():
    """A missing config file is a config error"""
    with pytest.raises(ConfigError):
        load_settings("/nonexistent/tcnn.env")


@pytest.mark.parametrize("overrides", [{"DTYPE": "f16"}, {"DATASET": "mnist"}, {"TRAIN_SIZE": 0},
                                       {"DROP_RATE": 1.0}, {"LOG_LEVEL": "loud"}])
def test_invalid_values(overrides):
    """Invalid values are reported as config errors naming the key"""
    with pytest.raises(ConfigError) as exc:
        load_settings(overrides=overrides)
    assert list(overrides)[0] in exc.value.detail


def test_entry_without_value(tmp_path):
    """A bare key in the config file is rejected"""
    path = tmp_path / "run.env"
    path.write_text("SEED\n")
    with pytest.raises(ConfigError):
        load_settings(str(path))


def test_log_level_normalized():
    """Log levels are upper-cased"""
    assert load_settings(overrides={"LOG_LEVEL": "debug"}).LOG_LEVEL == "DEBUG"


def test_run_config_reads_back(tmp_path):
    """A written run config reloads to the same settings; RUN_ keys are skipped"""
    settings = load_settings(overrides={"SEED": 11, "DTYPE": "f64", "HFLIP": False})
    path = tmp_path / "out" / "cnn_config.txt"
    write_run_config(str(path), settings, {"COMMAND": "train", "RUN_NORM_MEAN": "0.5,0.5,0.5"})
    text = path.read_text().splitlines()
    assert text == sorted(text)
    assert "RUN_COMMAND=train" in text and "RUN_NORM_MEAN=0.5,0.5,0.5" in text
    assert "LOG_FILE=None" not in text
    reloaded = load_settings(str(path))
    assert reloaded == settings


def test_configure_logging_file_once(tmp_path):
    """A log file handler is added once however often logging is configured"""
    path = str(tmp_path / "run.log")
    handlers = []
    log = configure_logging("debug", path)
    configure_logging("debug", path)
    try:
        handlers = [h for h in log.handlers if getattr(h, "baseFilename", None) == os.path.abspath(path)]
        assert len(handlers) == 1
        assert log.level == logging.DEBUG
        log.info("written to file")
        handlers[0].flush()
        assert "written to file" in open(path).read()
    finally:
        for h in handlers:
            log.removeHandler(h)
            h.close()
        configure_logging("INFO")
