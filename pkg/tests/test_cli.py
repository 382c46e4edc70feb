"""Command-line surface: determinism, exit codes, file contracts."""

import json
import os

import numpy as np
import pytest

from aan import cli
from aan import dataio as D
from aan import tensor as T
from aan.checks import run_gradient_suite
from aan.tensor import Tensor


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = run_cli(
        "synth", "--out", out, "--movies", 2, "--segments", 10,
        "--seed", 7, "--noise-std", 0.05, "--smoothing-window", 3,
    )
    assert code == 0
    return out


class TestSynth:
    def test_row_count(self, small_data):
        manifest = D.load_manifest(small_data / "manifest.json")
        assert len(manifest) == 20

    def test_same_seed_identical_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli(
                "synth", "--out", out, "--movies", 2, "--segments", 8, "--seed", 7,
                "--smoothing-window", 3,
            ) == 0
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
        assert (a / "features_vggish.aanf").read_bytes() == (b / "features_vggish.aanf").read_bytes()

    def test_default_contract_is_eight_by_onetwenty(self):
        parser = cli.build_parser()
        args = parser.parse_args(["synth", "--out", "x"])
        assert args.movies == 8 and args.segments == 120

    def test_writes_both_formats(self, small_data):
        for modality in D.MODALITY_ORDER:
            assert (small_data / f"features_{modality}.aanf").exists()
            assert (small_data / f"features_{modality}.csv").exists()


@pytest.fixture(scope="module")
def run_dir(small_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = run_cli(
        "train", "--data", small_data, "--out", out, "--model", "feature",
        "--max-epochs", 8, "--batch-size", 6, "--seed", 3,
    )
    assert code == 0
    return out


class TestTrainEval:
    def test_outputs_per_fold(self, run_dir):
        for movie in ("synth00", "synth01"):
            assert (run_dir / f"fold_{movie}_params.npz").exists()
            assert (run_dir / f"fold_{movie}_log.csv").exists()
            assert (run_dir / f"fold_{movie}_predictions.csv").exists()
        assert (run_dir / "results.csv").exists()

    def test_results_table_lists_resolved_config(self, run_dir):
        text = (run_dir / "results.csv").read_text()
        assert "n_layers=2" in text and "n_heads=2" in text and "seed=3" in text

    def test_eval_reuses_parameters_and_is_deterministic(self, small_data, run_dir, tmp_path):
        fresh = tmp_path / "fresh"
        code = run_cli(
            "eval", "--data", small_data, "--out", fresh, "--model", "feature",
            "--max-epochs", 8, "--batch-size", 6, "--seed", 3,
        )
        assert code == 0
        assert (fresh / "results.csv").read_bytes() == (run_dir / "results.csv").read_bytes()
        # a second eval over existing params must not change the table
        code = run_cli(
            "eval", "--data", small_data, "--out", fresh, "--model", "feature",
            "--max-epochs", 8, "--batch-size", 6, "--seed", 3,
        )
        assert code == 0
        assert (fresh / "results.csv").read_bytes() == (run_dir / "results.csv").read_bytes()

    def test_training_log_format(self, run_dir):
        lines = (run_dir / "fold_synth00_log.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_mse,train_pcc,train_loss,val_mse,val_pcc,val_loss"
        assert len(lines[1].split(",")) == 7

    def test_predict_matches_eval_fold_predictions(self, small_data, run_dir):
        trace = run_dir / "trace.csv"
        code = run_cli(
            "predict", "--data", small_data, "--out", run_dir, "--model", "feature",
            "--seed", 3, "--movie", "synth01", "--trace-out", trace,
        )
        assert code == 0
        assert trace.read_bytes() == (run_dir / "fold_synth01_predictions.csv").read_bytes()

    def test_predict_without_labels_omits_ground_truth(self, small_data, run_dir, tmp_path):
        unlabeled = tmp_path / "unlabeled"
        unlabeled.mkdir()
        rows = json.loads((small_data / "manifest.json").read_text())
        for row in rows:
            if row["movie_id"] == "synth01":
                row["arousal"] = None
        (unlabeled / "manifest.json").write_text(json.dumps(rows))
        for modality in D.MODALITY_ORDER:
            name = f"features_{modality}.aanf"
            (unlabeled / name).write_bytes((small_data / name).read_bytes())
        trace = tmp_path / "trace_unlabeled.csv"
        code = run_cli(
            "predict", "--data", unlabeled, "--out", run_dir, "--model", "feature",
            "--seed", 3, "--movie", "synth01", "--trace-out", trace,
        )
        assert code == 0
        header = trace.read_text().splitlines()[0]
        assert header == "movie_id,segment_index,prediction"

    def test_predict_requires_parameters(self, small_data, tmp_path):
        code = run_cli(
            "predict", "--data", small_data, "--out", tmp_path / "void", "--model", "feature",
            "--movie", "synth01",
        )
        assert code == 2


class TestUsageErrors:
    def test_unknown_preset_exits_two(self, small_data, tmp_path):
        assert run_cli(
            "train", "--data", small_data, "--out", tmp_path, "--preset", "nope"
        ) == 2

    def test_missing_data_flag_exits_two(self, tmp_path, monkeypatch):
        monkeypatch.delenv("AAN_DATA", raising=False)
        monkeypatch.delenv("AAN_OUT", raising=False)
        assert run_cli("train", "--model", "feature") == 2

    def test_unreadable_dataset_exits_one(self, tmp_path):
        (tmp_path / "manifest.json").write_text("[]")
        assert run_cli("train", "--data", tmp_path, "--out", tmp_path / "o") == 1


class TestConfigResolution:
    def test_env_variables_fill_missing_flags(self, small_data, tmp_path, monkeypatch):
        out = tmp_path / "envrun"
        monkeypatch.setenv("AAN_MAX_EPOCHS", "2")
        monkeypatch.setenv("AAN_BATCH_SIZE", "6")
        code = run_cli(
            "train", "--data", small_data, "--out", out, "--model", "feature", "--seed", 1
        )
        assert code == 0
        log = (out / "fold_synth00_log.csv").read_text().splitlines()
        assert len(log) == 3  # header + 2 epochs

    def test_flag_overrides_env_overrides_file(self, small_data, tmp_path, monkeypatch):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("max_epochs = 9\nbatch_size = 6\nmodel = feature\n")
        monkeypatch.setenv("AAN_MAX_EPOCHS", "4")
        out = tmp_path / "layered"
        code = run_cli(
            "train", "--data", small_data, "--out", out, "--config", cfg,
            "--max-epochs", 2, "--seed", 1,
        )
        assert code == 0
        log = (out / "fold_synth00_log.csv").read_text().splitlines()
        assert len(log) == 3  # flag won: 2 epochs

    def test_file_value_used_when_no_flag_or_env(self, small_data, tmp_path, monkeypatch):
        monkeypatch.delenv("AAN_MAX_EPOCHS", raising=False)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("max_epochs = 3\nbatch_size = 6\n")
        out = tmp_path / "filerun"
        code = run_cli(
            "train", "--data", small_data, "--out", out, "--model", "feature",
            "--config", cfg, "--seed", 1,
        )
        assert code == 0
        log = (out / "fold_synth00_log.csv").read_text().splitlines()
        assert len(log) == 4  # header + 3 epochs


class TestGradcheckCommand:
    def test_passes_on_fresh_checkout(self, capsys):
        assert run_cli("gradcheck") == 0
        out = capsys.readouterr().out
        assert "max_rel_error" in out and "pass" in out

    def test_injected_wrong_gradient_rule_fails(self):
        # a gradient rule that is off by a factor must be caught by the suite
        def broken_scale(x):
            xv = x.data
            return T._wrap(xv * 2.0, (x,), lambda g, needs: (g * 1.7,))

        x = Tensor(np.array([0.3, -0.4, 1.2]), requires_grad=True)
        case = ("broken_scale", lambda t: T.sum_all(broken_scale(t)), [x])
        results = run_gradient_suite(extra_cases=[case])
        by_name = dict(results)
        assert not by_name["broken_scale"].passed
        assert all(rep.passed for name, rep in results if name != "broken_scale")
