import json
from pathlib import Path

import pandas as pd
from click.testing import CliRunner

from stockbot.cli import _overrides, _parse_seeds, cli
from stockbot.storage import BACKTEST_PLOT, BACKTEST_SUMMARY


def write_forecast(path: Path, true_prices, predicted, mode="autoregressive"):
    n = len(true_prices)
    frame = pd.DataFrame(
        {
            "date": [str(d) for d in pd.date_range("2020-01-01", periods=n, freq="D").date],
            "emission": [0] * n,
            "true_price": true_prices,
            "predicted_price": predicted,
            "mode": [mode] * n,
        }
    )
    frame.to_csv(path, index=False)
    return path


def last_json_line(output: str) -> dict:
    return json.loads(output.strip().splitlines()[-1])


class TestCLI:

    def setup_method(self):
        self.runner = CliRunner()

    def test_cli_help(self):
        result = self.runner.invoke(cli, ["--help"])
        assert result.exit_code == 0
        assert "StockBot" in result.output
        for command in ("train", "forecast", "backtest", "report", "sweep", "gradcheck", "serve"):
            assert command in result.output

    def test_train_help_lists_shared_flags(self):
        result = self.runner.invoke(cli, ["train", "--help"])
        assert result.exit_code == 0
        for flag in ("--csv", "--model", "--seed", "--mode", "--out", "--past-history", "--forward-look", "--config"):
            assert flag in result.output

    def test_unknown_model_is_a_usage_error(self):
        result = self.runner.invoke(cli, ["train", "--model", "GPT"])
        assert result.exit_code == 2

    def test_overrides_map_flags_to_config_keys(self):
        overrides = _overrides(csv_path="a.csv", seed=3, modes=("teacher_forcing",), past_history=20)
        assert overrides == {
            "data.csv": "a.csv",
            "model.seed": 3,
            "train.seed": 3,
            "modes": ["teacher_forcing"],
            "model.past_history": 20,
        }
        assert _overrides() == {}

    def test_parse_seeds(self):
        assert _parse_seeds("0,1, 2") == [0, 1, 2]
        assert _parse_seeds(None) is None


class TestErrorPayloads:

    def setup_method(self):
        self.runner = CliRunner()

    def test_missing_csv(self):
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(cli, ["train", "--csv", "nope.csv"])
            assert result.exit_code == 2
            payload = last_json_line(result.output)
            assert payload["error"]["kind"] == "input-not-found"
            assert payload["error"]["module"].startswith("stockbot")

    def test_no_csv_configured(self):
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(cli, ["train"])
            assert result.exit_code == 2
            assert last_json_line(result.output)["error"]["kind"] == "config-invalid"

    def test_invalid_config_file(self):
        with self.runner.isolated_filesystem():
            Path("cfg.json").write_text(json.dumps({"model": {"kind": "LSTM", "layers": 3}}))
            result = self.runner.invoke(cli, ["train", "--config", "cfg.json"])
            assert result.exit_code == 2
            payload = last_json_line(result.output)
            assert payload["error"]["kind"] == "config-invalid"
            assert "model.layers" in payload["error"]["message"]

    def test_bad_seed_list(self):
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(cli, ["sweep", "--seeds", "a,b"])
            assert result.exit_code == 2
            assert last_json_line(result.output)["error"]["kind"] == "config-invalid"

    def test_backtest_missing_forecast(self):
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(cli, ["backtest", "--forecast", "missing.csv"])
            assert result.exit_code == 2
            assert last_json_line(result.output)["error"]["kind"] == "input-not-found"


class TestBacktestCommand:

    def setup_method(self):
        self.runner = CliRunner()

    def test_perfect_forecast(self):
        with self.runner.isolated_filesystem():
            prices = [10.0, 8.0, 12.0, 6.0, 9.0]
            write_forecast(Path("forecast_autoregressive.csv"), prices, prices)
            result = self.runner.invoke(cli, ["backtest", "--forecast", "forecast_autoregressive.csv", "--out", "bt"])
            assert result.exit_code == 0, result.output
            summary = json.loads(Path("bt", BACKTEST_SUMMARY).read_text())
            run = summary["runs"][0]
            assert run["mode"] == "autoregressive"
            assert run["trade_count"] == 4
            assert abs(run["final_multiple"] - 1.5 * 1.5) < 1e-12
            assert abs(run["buy_and_hold_multiple"] - 0.9) < 1e-12
            assert Path("bt", BACKTEST_PLOT).read_text().lstrip().startswith("<?xml")
            ledger = pd.read_csv(Path("bt", "ledger_autoregressive.csv"))
            assert ledger["action"].tolist() == ["hold", "buy", "sell", "buy", "sell"]

    def test_duplicate_modes(self):
        with self.runner.isolated_filesystem():
            write_forecast(Path("a.csv"), [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
            write_forecast(Path("b.csv"), [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
            result = self.runner.invoke(cli, ["backtest", "--forecast", "a.csv", "--forecast", "b.csv"])
            assert result.exit_code == 2
            assert last_json_line(result.output)["error"]["kind"] == "config-invalid"

    def test_true_csv_overrides_prices(self):
        with self.runner.isolated_filesystem():
            write_forecast(Path("f.csv"), [1.0, 1.0, 1.0], [1.0, 2.0, 3.0], mode="teacher_forcing")
            Path("truth.csv").write_text("Date,Adj Close\n2020-01-01,4\n2020-01-02,5\n2020-01-03,8\n")
            result = self.runner.invoke(cli, ["backtest", "--forecast", "f.csv", "--true-csv", "truth.csv"])
            assert result.exit_code == 0, result.output
            run = json.loads(Path(BACKTEST_SUMMARY).read_text())["runs"][0]
            assert run["mode"] == "teacher_forcing"
            assert abs(run["final_multiple"] - 2.0) < 1e-12

    def test_early_divergence_holds_instead_of_failing(self):
        with self.runner.isolated_filesystem():
            write_forecast(Path("forecast_autoregressive.csv"), [10.0, 12.0], [10.0, 12.0])
            write_forecast(Path("forecast_teacher_forcing.csv"), [], [])
            prices = [10.0, 8.0, 12.0, 6.0, 9.0]
            write_forecast(Path("tf.csv"), prices, prices, mode="direct")
            args = ["backtest", "--out", "bt"]
            for name in ("forecast_autoregressive.csv", "forecast_teacher_forcing.csv", "tf.csv"):
                args += ["--forecast", name]
            result = self.runner.invoke(cli, args)
            assert result.exit_code == 0, result.output
            runs = {r["mode"]: r for r in json.loads(Path("bt", BACKTEST_SUMMARY).read_text())["runs"]}
            assert runs["autoregressive"]["too_short"] is True
            assert runs["autoregressive"]["trade_count"] == 0
            assert runs["autoregressive"]["final_multiple"] == 1.0
            assert abs(runs["autoregressive"]["buy_and_hold_multiple"] - 1.2) < 1e-12
            assert runs["teacher_forcing"]["too_short"] is True
            assert runs["teacher_forcing"]["days"] == 0
            assert runs["direct"]["too_short"] is False
            assert runs["direct"]["trade_count"] == 4
            ledger = pd.read_csv(Path("bt", "ledger_autoregressive.csv"))
            assert ledger["action"].tolist() == ["hold", "hold"]
            assert not Path("bt", "ledger_teacher_forcing.csv").exists()
            assert Path("bt", BACKTEST_PLOT).exists()

    def test_true_csv_missing_dates(self):
        with self.runner.isolated_filesystem():
            write_forecast(Path("f.csv"), [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
            Path("truth.csv").write_text("Date,Adj Close\n2020-01-01,4\n")
            result = self.runner.invoke(cli, ["backtest", "--forecast", "f.csv", "--true-csv", "truth.csv"])
            assert result.exit_code == 1
            assert last_json_line(result.output)["error"]["kind"] == "data"


class TestGradcheckCommand:

    def test_single_model_passes(self):
        result = CliRunner().invoke(cli, ["gradcheck", "--model", "LSTM", "--model", "TCN"])
        assert result.exit_code == 0, result.output
        assert "PASS LSTM" in result.output
        assert "PASS TCN" in result.output

    def test_impossible_tolerance_fails(self):
        result = CliRunner().invoke(cli, ["gradcheck", "--model", "LSTM", "--tolerance", "0"])
        assert result.exit_code == 1
        assert "FAIL LSTM" in result.output


class TestReportCommand:

    def test_empty_output_root(self):
        runner = CliRunner()
        with runner.isolated_filesystem():
            result = runner.invoke(cli, ["report", "--out", "runs"])
            assert result.exit_code == 0, result.output
            assert "No forecast runs" in result.output
            assert Path("runs", "report_h1.md").is_file()
            assert Path("runs", "report_h1.csv").is_file()
