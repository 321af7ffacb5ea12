import pytest

from errors import ConfigError
from lab_config import ConfigManager, LabConfig, environment_values, read_config_file


@pytest.fixture
def manager():
    return ConfigManager(load_env_file=False)


def test_defaults_are_valid():
    config = LabConfig()
    assert config.validate() == []
    assert config.path_config().n_paths == 10000


def test_from_dict_casts_strings():
    config = LabConfig.from_dict({"threads": "4", "cap": "250", "log_format": "json"})
    assert config.threads == 4
    assert config.cap == 250.0
    assert config.log_format == "json"


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="bogus"):
        LabConfig.from_dict({"bogus": "1"})


def test_from_dict_rejects_bad_values():
    with pytest.raises(ConfigError):
        LabConfig.from_dict({"threads": "many"})


def test_validate_reports_path_settings():
    errors = LabConfig(threads=0, dt=-1.0, log_level="LOUD").validate()
    assert any("threads" in e for e in errors)
    assert any("dt" in e for e in errors)
    assert any("log_level" in e for e in errors)


def test_environment_values_filter_prefix():
    environ = {"LAB_THREADS": "3", "LAB_UNKNOWN": "x", "THREADS": "9"}
    assert environment_values(environ) == {"threads": "3"}


def test_read_config_file(tmp_path):
    path = tmp_path / "lab.conf"
    path.write_text("# lab settings\nTHREADS=2\n\ncap=100\n")
    assert read_config_file(str(path)) == {"threads": "2", "cap": "100"}


def test_missing_config_file(manager):
    with pytest.raises(ConfigError):
        manager.resolve("does-not-exist.conf", environ={})


def test_precedence(manager, tmp_path):
    path = tmp_path / "lab.conf"
    path.write_text("threads=2\ncap=100\n")
    environ = {"LAB_THREADS": "5", "LAB_CAP": "7", "LAB_DT": "0.01"}
    config = manager.resolve(str(path), overrides={"threads": 8, "output_dir": None}, environ=environ)
    assert config.threads == 8
    assert config.cap == 100.0
    assert config.dt == 0.01
    assert config.output_dir == "lab_runs"


def test_invalid_resolution(manager):
    with pytest.raises(ConfigError, match="threads"):
        manager.resolve(overrides={"threads": 0}, environ={})
