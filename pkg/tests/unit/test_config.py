import json

import pytest

from stockbot.config import (
    CONFIG_FILENAME,
    OUT_ENV_VAR,
    DataConfig,
    RunConfig,
    explicit_model_fields,
    load_config,
    read_config_file,
)
from stockbot.errors import ConfigError, InputNotFoundError
from stockbot.forecaster import ForecastMode
from stockbot.models import ModelKind


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(OUT_ENV_VAR, raising=False)
    return tmp_path


def write_config(path, data):
    path.write_text(json.dumps(data))
    return path


class TestDefaults:

    def test_defaults(self):
        config = load_config()
        assert config.out == "runs"
        assert config.data.train_ratio == 0.8
        assert config.data.start_date == "2010-01-01"
        assert config.data.end_date == "2020-12-31"
        assert config.model.kind is ModelKind.LSTM
        assert config.modes == [ForecastMode.AUTOREGRESSIVE, ForecastMode.TEACHER_FORCING]

    def test_ticker_defaults_to_csv_stem(self):
        assert DataConfig(csv="data/AAPL.csv").resolved_ticker() == "AAPL"
        assert DataConfig(csv="data/AAPL.csv", ticker="apple").resolved_ticker() == "apple"
        assert DataConfig().resolved_ticker() == "default"

    def test_duplicate_modes_collapse(self):
        config = RunConfig(modes=["teacher_forcing", "teacher_forcing"])
        assert config.modes == [ForecastMode.TEACHER_FORCING]


class TestLayering:

    def test_file_then_overrides(self, isolated):
        path = write_config(isolated / "cfg.json", {"model": {"kind": "TCN", "hidden": 16}, "train": {"max_epochs": 3}})
        config = load_config(path, {"model.hidden": 8, "data.csv": "x.csv"})
        assert config.model.kind is ModelKind.TCN
        assert config.model.hidden == 8
        assert config.train.max_epochs == 3
        assert config.data.csv == "x.csv"

    def test_working_directory_file_is_picked_up(self, isolated):
        write_config(isolated / CONFIG_FILENAME, {"out": "elsewhere"})
        assert load_config().out == "elsewhere"

    def test_env_out(self, monkeypatch):
        monkeypatch.setenv(OUT_ENV_VAR, "from-env")
        assert load_config().out == "from-env"
        assert load_config(overrides={"out": "flag"}).out == "flag"

    def test_overrides_do_not_mutate_file_data(self, isolated):
        path = write_config(isolated / "cfg.json", {"model": {"hidden": 16}})
        load_config(path, {"model.hidden": 8})
        assert read_config_file(path) == {"model": {"hidden": 16}}


class TestErrors:

    def test_unknown_key(self, isolated):
        path = write_config(isolated / "cfg.json", {"model": {"hiden": 16}})
        with pytest.raises(ConfigError, match="model.hiden"):
            load_config(path)

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="data.train_ratio"):
            load_config(overrides={"data.train_ratio": 1.5})

    def test_empty_modes(self):
        with pytest.raises(ConfigError, match="modes"):
            load_config(overrides={"modes": []})

    def test_missing_file(self, isolated):
        with pytest.raises(InputNotFoundError):
            load_config(isolated / "nope.json")

    def test_invalid_json(self, isolated):
        (isolated / "cfg.json").write_text("{")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(isolated / "cfg.json")

    def test_top_level_must_be_an_object(self, isolated):
        write_config(isolated / "cfg.json", [1, 2])
        with pytest.raises(ConfigError):
            load_config(isolated / "cfg.json")


def test_explicit_model_fields(isolated):
    path = write_config(isolated / "cfg.json", {"model": {"hidden": 16}, "train": {"lr": 0.1}})
    fields = explicit_model_fields(path, {"model.seed": 3, "data.csv": "x.csv"})
    assert fields == {"hidden": 16, "seed": 3}
    assert explicit_model_fields(None, {}) == {}
