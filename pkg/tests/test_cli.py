"""End-to-end runs of the ``kan-dpgd`` command line."""

import json

import pytest

from src.cli import EXIT_VERIFICATION, main
from src.verification import Level, VerificationReport

SMALL = ["--n", "40", "--n-test", "20", "--d", "3", "--m", "4", "--p", "5", "--T", "3"]


def _stdout_json(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


class TestCommands:
    def test_gen_data(self, tmp_path, capsys):
        out = tmp_path / "synth.csv"
        assert main(["gen-data", "--n", "30", "--d", "3", "--out", str(out)]) == 0
        doc = _stdout_json(capsys)
        assert doc["n"] == 30
        assert out.exists()
        assert out.with_suffix(".json").exists()

    def test_train(self, tmp_path, capsys):
        log = tmp_path / "log.csv"
        params = tmp_path / "params.json"
        argv = ["train", *SMALL, "--log", str(log), "--save-params", str(params)]
        assert main(argv) == 0
        doc = _stdout_json(capsys)
        assert doc["iterations"] == 3
        assert doc["status"] == "ok"
        assert len(log.read_text().splitlines()) == 5
        assert params.exists()

    def test_dp_train_writes_calibration(self, tmp_path, capsys):
        log = tmp_path / "dp.csv"
        assert main(["dp-train", *SMALL, "--epsilon", "1.0", "--log", str(log)]) == 0
        doc = _stdout_json(capsys)
        calibration = json.loads((tmp_path / "dp.calibration.json").read_text())
        assert calibration == doc["calibration"]
        assert calibration["delta"] == pytest.approx(1.0 / 40)
        assert doc["rdp"]["epsilon_best"] <= doc["rdp"]["epsilon_total"]

    def test_dp_train_without_noise(self, capsys):
        assert main(["dp-train", *SMALL, "--no-noise"]) == 0
        assert _stdout_json(capsys)["status"] == "ok"

    def test_margin(self, tmp_path, capsys):
        out = tmp_path / "margin.json"
        features = tmp_path / "phi.npy"
        argv = ["margin", *SMALL, "--limit", "20", "--iters", "20"]
        assert main([*argv, "--out", str(out), "--features", str(features)]) == 0
        doc = _stdout_json(capsys)
        assert doc == json.loads(out.read_text())
        assert doc["iters"] == 20
        assert features.exists()

    def test_sweep(self, tmp_path, capsys):
        config = tmp_path / "sweep.json"
        config.write_text(
            json.dumps(
                {
                    "task": "synth",
                    "axis_values": [2, 4],
                    "seeds": [0],
                    "fixed": {"T": 2},
                    "model": {"p": 5},
                    "data": {"n": 30, "d": 3},
                    "n_test": 10,
                }
            )
        )
        out = tmp_path / "report"
        assert main(["sweep", "--config", str(config), "--out", str(out)]) == 0
        doc = _stdout_json(capsys)
        assert doc["runs"] == 2
        assert doc["failed"] == 0
        assert (out / "aggregate.csv").exists()


class TestExitCodes:
    def test_missing_mnist_is_an_input_error(self, monkeypatch):
        monkeypatch.delenv("MNIST_DIR", raising=False)
        assert main(["train", "--task", "mnist", "--T", "1"]) == 1

    def test_bad_sweep_config(self, tmp_path):
        config = tmp_path / "sweep.json"
        config.write_text(json.dumps({"task": "synth", "colour": "red"}))
        assert main(["sweep", "--config", str(config)]) == 1

    def test_divergence_keeps_partial_log(self, tmp_path):
        log = tmp_path / "log.csv"
        assert main(["train", *SMALL, "--eta", "1e300", "--log", str(log)]) == 2
        assert len(log.read_text().splitlines()) == 2

    def test_verification_failures(self, monkeypatch, tmp_path, capsys):
        def failing(level, hessian_max_params):
            report = VerificationReport(Level(level))
            report.add("always_fails", 1.0, 0.0, False)
            return report

        monkeypatch.setattr("src.cli.run_verification", failing)
        out = tmp_path / "report.json"
        assert main(["verify", "--out", str(out)]) == EXIT_VERIFICATION
        assert json.loads(out.read_text())["passed"] is False
