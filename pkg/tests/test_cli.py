"""End-to-end command-line behavior.

Each subcommand runs in-process through ``main(argv)`` against a small
synthesized corpus. Oracles: exit codes (0 success / 1 runtime failure /
2 usage error), the resolved-config snapshot with its layering order, the
documented artifact files, and machine-readable error.json on failure.
"""

from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from callsep.cli import main


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    """prepare-data --synthesize output shared by the subcommand tests."""
    out = tmp_path_factory.mktemp("cli") / "prep"
    code = main([
        "prepare-data", "--out-dir", str(out),
        "--synthesize", "3", "--synth-duration-s", "12",
        "--segment-seconds", "4", "--fractions", "0.34,0.33,0.33",
        "--seed", "0",
    ])
    assert code == 0
    return out / "corpus" / "manifest.json"


@pytest.fixture(scope="module")
def cli_checkpoint(cli_corpus, tmp_path_factory):
    """A briefly trained toy checkpoint shared by evaluate/stream tests."""
    out = tmp_path_factory.mktemp("cli") / "run"
    code = main([
        "train", "--out-dir", str(out), "--manifest", str(cli_corpus),
        "--max-epochs", "2",
    ])
    assert code == 0
    return out / "best.ckpt"


class TestExitCodes:
    def test_no_arguments_is_usage_error(self):
        assert main([]) == 2

    def test_unknown_subcommand_is_usage_error(self):
        assert main(["frobnicate"]) == 2

    def test_missing_required_flag_is_usage_error(self):
        assert main(["train", "--out-dir", "/tmp/x"]) == 2

    def test_runtime_failure_writes_error_json(self, tmp_path):
        out = tmp_path / "out"
        code = main(["prepare-data", "--out-dir", str(out)])
        assert code == 1
        doc = json.loads((out / "error.json").read_text())
        assert doc["error"] == "CallsepError"
        assert "--corpus-dir" in doc["message"] or "--synthesize" in doc["message"]

    def test_missing_manifest_is_runtime_failure(self, tmp_path):
        out = tmp_path / "out"
        code = main([
            "similarity-report", "--out-dir", str(out),
            "--manifest", str(tmp_path / "nope.json"),
        ])
        assert code == 1
        assert (out / "error.json").exists()


class TestConfigLayering:
    def test_defaults_config_cli_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 7, "segment_seconds": 6.0}))
        out = tmp_path / "out"
        code = main([
            "prepare-data", "--out-dir", str(out), "--config", str(cfg),
            "--synthesize", "3", "--synth-duration-s", "6", "--seed", "9",
            "--fractions", "0.34,0.33,0.33",
        ])
        assert code == 0
        snapshot = json.loads((out / "resolved_config.json").read_text())
        assert snapshot["subcommand"] == "prepare-data"
        resolved = snapshot["config"]
        assert resolved["seed"] == 9            # CLI beats config file
        assert resolved["segment_seconds"] == 6.0  # config file beats default
        assert resolved["sample_rate"] == 8000  # untouched default survives

    def test_nested_train_section_from_config(self, cli_corpus, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train": {"max_epochs": 1, "batch_size": 2}}))
        out = tmp_path / "out"
        code = main([
            "train", "--out-dir", str(out), "--manifest", str(cli_corpus),
            "--config", str(cfg),
        ])
        assert code == 0
        resolved = json.loads((out / "resolved_config.json").read_text())["config"]
        assert resolved["train"]["max_epochs"] == 1
        assert resolved["train"]["batch_size"] == 2
        assert resolved["train"]["patience"] == 30  # default survives merge


class TestPrepareData:
    def test_synthesized_corpus_layout(self, cli_corpus):
        doc = json.loads(cli_corpus.read_text())
        assert set(doc["splits"]) == {"train", "validation", "test"}
        total = sum(len(v) for v in doc["splits"].values())
        assert total == 9  # 3 calls x 12 s / 4 s segments
        sample = doc["splits"]["train"][0]
        root = cli_corpus.parent
        for key in ("mixture", "source1", "source2"):
            assert (root / sample[key]).exists()


class TestTrain:
    def test_artifacts(self, cli_checkpoint):
        run_dir = cli_checkpoint.parent
        assert cli_checkpoint.exists()
        assert (run_dir / "record.json").exists()
        assert (run_dir / "train_log.jsonl").exists()
        assert (run_dir / "training_curves.png").exists()
        assert (run_dir / "resolved_config.json").exists()


class TestEvaluate:
    def test_metrics_csv(self, cli_corpus, cli_checkpoint, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main([
            "evaluate", "--out-dir", str(out), "--manifest", str(cli_corpus),
            "--checkpoint", str(cli_checkpoint), "--split", "test",
        ])
        assert code == 0
        with (out / "metrics.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert rows and set(rows[0]) == {
            "sample_id", "si_sdr_s1", "si_sdr_s2", "si_sdri", "permutation"
        }
        assert "mean SI-SDR" in capsys.readouterr().out


class TestSimilarityReport:
    def test_csv_and_histogram(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "sim"
        code = main([
            "similarity-report", "--out-dir", str(out),
            "--manifest", str(cli_corpus), "--split", "train",
        ])
        assert code == 0
        with (out / "similarity.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert rows and set(rows[0]) == {"sample_id", "css", "backend", "layer"}
        assert all(-1.0 <= float(r["css"]) <= 1.0 for r in rows)
        assert (out / "similarity_hist.png").exists()
        assert "mean css" in capsys.readouterr().out


class TestStreamSim:
    def test_report_and_plot(self, cli_corpus, cli_checkpoint, tmp_path):
        out = tmp_path / "stream"
        code = main([
            "stream-sim", "--out-dir", str(out), "--manifest", str(cli_corpus),
            "--checkpoint", str(cli_checkpoint), "--segment-len", "2",
            "--threshold", "1e9",
        ])
        assert code == 0
        report = json.loads((out / "sync_report.json").read_text())
        assert report["segment_len_s"] == 2.0
        assert report["error_rate"] == 0.0  # unreachable threshold
        assert (out / "segment_distances.png").exists()

    def test_unknown_sample_id_fails_cleanly(self, cli_corpus, cli_checkpoint, tmp_path):
        out = tmp_path / "stream"
        code = main([
            "stream-sim", "--out-dir", str(out), "--manifest", str(cli_corpus),
            "--checkpoint", str(cli_checkpoint), "--sample-id", "missing",
        ])
        assert code == 1
        assert "not found" in json.loads((out / "error.json").read_text())["message"]


class TestLengthSweep:
    def test_table_plot_reports(self, cli_corpus, cli_checkpoint, tmp_path):
        out = tmp_path / "lsweep"
        code = main([
            "length-sweep", "--out-dir", str(out), "--manifest", str(cli_corpus),
            "--checkpoint", str(cli_checkpoint), "--lengths", "2,4",
            "--n-samples", "1", "--threshold", "1e9",
        ])
        assert code == 0
        with (out / "length_sweep.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert [r["segment_len_s"] for r in rows] == ["2", "4"]
        assert all(r["n_samples"] == "1" for r in rows)
        assert (out / "length_sweep.png").exists()
        assert list((out / "reports").glob("*.json"))


class TestSweepCommand:
    def test_small_grid(self, cli_corpus, tmp_path):
        out = tmp_path / "grid"
        code = main([
            "sweep", "--out-dir", str(out), "--manifest", str(cli_corpus),
            "--max-epochs", "1", "--weights", "0,5", "--layers", "1",
        ])
        assert code == 0
        header, *rows = (out / "results.csv").read_text().splitlines()
        assert header == "weight_sl,layer,best_si_sdr,best_epoch"
        assert len(rows) == 2
        assert (out / "sweep_heatmap.png").exists()
        assert len(list((out / "cells").glob("*.json"))) == 2


class TestConsoleEntry:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "callsep", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "prepare-data" in proc.stdout
