import pytest

from src.config_manager import ConfigManager


@pytest.fixture
def settings_file(tmp_path):
    path = tmp_path / "config.ini"
    path.write_text("[ESTIMATION]\nmethod = ipw\ntrim_epsilon = oops\n\n[RUNTIME]\nthreads = 2\n")
    return path


def test_defaults_load(config):
    assert config.get("ESTIMATION", "method") == "dr"
    assert config.get_int("BOOTSTRAP", "draws") == 999
    assert config.get_float("BOOTSTRAP", "ci_level") == 0.95
    assert config.get_boolean("DIAGNOSTICS", "include_squares", fallback=True) is False


def test_fallbacks(settings_file):
    config = ConfigManager(str(settings_file))
    assert config.get("ESTIMATION", "link", fallback="logit") == "logit"
    assert config.get_float("ESTIMATION", "trim_epsilon", fallback=1e-4) == 1e-4
    assert config.get_section("MISSING") == {}


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ConfigManager(str(tmp_path / "absent.ini"))


def test_threads_from_environment(settings_file, monkeypatch):
    config = ConfigManager(str(settings_file))
    monkeypatch.delenv("DIDFORGE_THREADS", raising=False)
    assert config.threads() == 2
    monkeypatch.setenv("DIDFORGE_THREADS", "6")
    assert config.threads() == 6
    monkeypatch.setenv("DIDFORGE_THREADS", "many")
    assert config.threads() == 2


def test_set_and_snapshot(settings_file):
    config = ConfigManager(str(settings_file))
    config.set("BOOTSTRAP", "draws", 250)
    assert config.get_int("BOOTSTRAP", "draws") == 250
    assert config.as_dict()["BOOTSTRAP"] == {"draws": "250"}


def test_list_values(settings_file):
    config = ConfigManager(str(settings_file))
    config.set("DIAGNOSTICS", "functions", "d_x1, square:d_x1,")
    assert config.get_list("DIAGNOSTICS", "functions") == ["d_x1", "square:d_x1"]
    assert config.get_list("DIAGNOSTICS", "absent", fallback=["a"]) == ["a"]


def test_save_round_trip(settings_file):
    config = ConfigManager(str(settings_file))
    config.set("BOOTSTRAP", "multiplier", "mammen")
    config.set("RUNTIME", "threads", 4)
    config.save_config()
    reloaded = ConfigManager(str(settings_file))
    assert reloaded.get("BOOTSTRAP", "multiplier") == "mammen"
    assert reloaded.get_int("RUNTIME", "threads") == 4
    assert reloaded.get("ESTIMATION", "method") == "ipw"
