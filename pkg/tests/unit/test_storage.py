import json
from pathlib import Path

import pandas as pd
import pytest

from stockbot.errors import FormatError, InputNotFoundError
from stockbot.storage import (
    FORECAST_SUMMARY,
    RunStore,
    _parse_run_name,
    read_csv,
    read_json,
    run_name,
    write_csv,
    write_json,
)


def test_run_name_format():
    assert run_name("LSTM", 1, 0) == "LSTM_h1_s0"
    assert run_name("Attention LSTM", 5, 2) == "AttentionLSTM_h5_s2"
    assert _parse_run_name("MHA_LSTM_h3_s7") == ("MHA_LSTM", 3, 7)
    assert _parse_run_name("scratch") == (None, None, None)


def test_json_is_sorted_and_newline_terminated(tmp_path: Path):
    path = write_json(tmp_path / "nested" / "a.json", {"b": 1, "a": [1.5]})
    text = path.read_text()
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')
    assert read_json(path) == {"a": [1.5], "b": 1}
    # no temp files left behind
    assert [p.name for p in path.parent.iterdir()] == ["a.json"]


def test_read_json_errors(tmp_path: Path):
    with pytest.raises(InputNotFoundError):
        read_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FormatError):
        read_json(bad)


def test_csv_round_trip_uses_unix_newlines(tmp_path: Path):
    frame = pd.DataFrame({"date": ["2020-01-01"], "value": [1.25]})
    path = write_csv(tmp_path / "f.csv", frame)
    assert path.read_bytes() == b"date,value\n2020-01-01,1.25\n"
    assert read_csv(path, required=["date"])["value"].tolist() == [1.25]


def test_read_csv_names_missing_columns(tmp_path: Path):
    path = write_csv(tmp_path / "f.csv", pd.DataFrame({"date": ["2020-01-01"]}))
    with pytest.raises(FormatError, match="true_price"):
        read_csv(path, required=["date", "true_price"])


class TestRunStore:

    def setup_method(self):
        self.summary = {"ticker": "AAPL", "model": "LSTM", "forward_look": 1, "seed": 0, "runs": []}

    def test_layout(self, tmp_path: Path):
        store = RunStore(tmp_path)
        path = store.run_dir("AAPL", "LSTM_h1_s0", create=True)
        assert path == tmp_path / "AAPL" / "LSTM_h1_s0"
        assert path.is_dir()

    def test_names_are_sanitized(self, tmp_path: Path):
        store = RunStore(tmp_path)
        assert store.run_dir("../etc", "a/b").relative_to(tmp_path) == Path("etc") / "ab"
        assert store.run_dir("", "r").parent.name == "default"

    def test_empty_store(self, tmp_path: Path):
        store = RunStore(tmp_path / "nothing")
        assert store.list_tickers() == []
        assert store.list_runs() == []
        assert list(store.iter_forecast_summaries()) == []

    def test_existing_run_dir(self, tmp_path: Path):
        with pytest.raises(InputNotFoundError):
            RunStore(tmp_path).existing_run_dir("AAPL", "LSTM_h1_s0")

    def test_lists_only_runs_with_artifacts(self, tmp_path: Path):
        store = RunStore(tmp_path)
        store.run_dir("AAPL", "empty_h1_s0", create=True)
        write_json(store.run_dir("AAPL", "LSTM_h1_s0") / FORECAST_SUMMARY, self.summary)
        write_json(store.run_dir("GOOG", "TCN_h1_s1") / FORECAST_SUMMARY, {**self.summary, "ticker": "GOOG"})
        assert store.list_tickers() == ["AAPL", "GOOG"]
        assert store.list_runs() == [("AAPL", "LSTM_h1_s0"), ("GOOG", "TCN_h1_s1")]
        assert store.list_runs("GOOG") == [("GOOG", "TCN_h1_s1")]

    def test_run_info(self, tmp_path: Path):
        store = RunStore(tmp_path)
        write_json(store.run_dir("AAPL", "LSTM_h5_s2") / FORECAST_SUMMARY, self.summary)
        info = store.run_info("AAPL", "LSTM_h5_s2")
        assert info == {
            "ticker": "AAPL",
            "run": "LSTM_h5_s2",
            "model": "LSTM",
            "forward_look": 5,
            "seed": 2,
            "files": [FORECAST_SUMMARY],
        }

    def test_iter_forecast_summaries(self, tmp_path: Path):
        store = RunStore(tmp_path)
        write_json(store.run_dir("AAPL", "LSTM_h1_s0") / FORECAST_SUMMARY, self.summary)
        (store.run_dir("AAPL", "TCN_h1_s0", create=True) / "loss_curve.csv").write_text("epoch\n")
        found = list(store.iter_forecast_summaries())
        assert found == [("AAPL", "LSTM_h1_s0", json.loads(json.dumps(self.summary)))]
