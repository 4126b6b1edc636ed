import json
import logging
from dataclasses import replace

import pytest

from jamshield.io_utils import load_dataset, read_csv, save_dataset, sha256_file
from jamshield.main import (
    EXIT_CONFIG,
    EXIT_MISSING_FILE,
    EXIT_OK,
    EXIT_SCHEMA,
    EXIT_TRAINING,
    configure_logging,
    main,
)
from jamshield.schema import default_manifest

QUICK_CONFIG = {
    "learners": ["knn", "dt"],
    "folds": 3,
    "k_features": 10,
    "window_size": 20,
    "min_buffer": 100,
    "buffer_capacity": 400,
    "snapshot_delay": 5,
    "overrides": {
        "comp1": {"hidden": [8], "epochs": 2},
        "comp2": {"hidden": [8], "epochs": 2},
        "comp3": {"hidden": [8], "epochs": 2, "batch": 32},
    },
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset(workdir):
    path = workdir / "dataset.csv"
    code = main(["simulate", "--preset", "mixed", "--benign-ticks", "200", "--attack-ticks", "100",
                 "--seed", "7", "--out", str(path)])
    assert code == EXIT_OK
    return path


@pytest.fixture(scope="module")
def config_file(workdir):
    path = workdir / "autocm.json"
    path.write_text(json.dumps(QUICK_CONFIG))
    return path


@pytest.fixture(scope="module")
def dt_model(workdir, dataset):
    models = workdir / "models"
    path = models / "dt.model"
    assert main(["train", "--algo", "dt", "--in", str(dataset), "--out", str(path)]) == EXIT_OK
    return path


class TestSimulateCommand:
    """Test dataset generation from the command line."""

    def test_mixed_preset_counts(self, dataset):
        samples = load_dataset(dataset, default_manifest())
        assert len(samples) == 300
        assert sum(s.label.binary for s in samples) == 100

    def test_scenario_file_is_reproducible(self, tmp_path):
        scenario = tmp_path / "scenario.json"
        scenario.write_text(json.dumps({"segments": [
            {"duration": 5, "seed": 1},
            {"duration": 5, "jammer_kind": "reactive", "waveform": "square", "geometry": "nlos", "seed": 2},
        ]}))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["simulate", "--scenario", str(scenario), "--out", str(a)]) == EXIT_OK
        assert main(["simulate", "--scenario", str(scenario), "--out", str(b)]) == EXIT_OK
        assert sha256_file(a) == sha256_file(b)
        assert len(load_dataset(a, default_manifest())) == 20

    def test_invalid_scenario(self, tmp_path):
        scenario = tmp_path / "scenario.json"
        scenario.write_text(json.dumps({"duration": 5, "jammer_kind": "constant", "gain_dbi": 35}))
        assert main(["simulate", "--scenario", str(scenario), "--out", str(tmp_path / "d.csv")]) == EXIT_CONFIG


class TestLabelAndSelect:
    """Test pseudo-labeling and feature selection commands."""

    def test_label_adds_columns(self, dataset, tmp_path):
        out = tmp_path / "labeled.csv"
        assert main(["label", "--in", str(dataset), "--out", str(out)]) == EXIT_OK
        header, rows = read_csv(out)
        assert header[-2:] == ["pseudo_label", "confidence"]
        assert {row["pseudo_label"] for row in rows} <= {"0", "1"}

    def test_select_features_writes_mask(self, dataset, tmp_path):
        out = tmp_path / "mask.json"
        assert main(["select-features", "--in", str(dataset), "--k", "10", "--out", str(out)]) == EXIT_OK
        payload = json.loads(out.read_text())
        assert len(payload["selected"]) == 10
        assert len(payload["selected_names"]) == 10
        assert payload["provenance"]["dataset_sha256"] == sha256_file(dataset)
        assert payload["provenance"]["label_source"] == "ground_truth"

    def test_unlabeled_data_needs_pseudo_labels(self, dataset, tmp_path):
        manifest = default_manifest()
        unlabeled = tmp_path / "unlabeled.csv"
        save_dataset(unlabeled, [replace(s, label=None) for s in load_dataset(dataset, manifest)], manifest)
        mask = tmp_path / "mask.json"
        assert main(["select-features", "--in", str(unlabeled), "--out", str(mask)]) == EXIT_SCHEMA

        labeled = tmp_path / "pseudo.csv"
        assert main(["label", "--in", str(unlabeled), "--out", str(labeled)]) == EXIT_OK
        assert main(["select-features", "--in", str(labeled), "--k", "5", "--out", str(mask)]) == EXIT_OK
        assert json.loads(mask.read_text())["provenance"]["label_source"] == "pseudo"

    def test_truth_labels_copy_ground_truth(self, dataset, tmp_path):
        out = tmp_path / "truth.csv"
        assert main(["label", "--in", str(dataset), "--labels", "truth", "--out", str(out)]) == EXIT_OK
        _, rows = read_csv(out)
        truth = [s.label.binary for s in load_dataset(dataset, default_manifest())]
        assert [int(row["pseudo_label"]) for row in rows] == truth
        assert {row["confidence"] for row in rows} == {"1"}

    def test_truth_labels_need_a_labeled_file(self, dataset, tmp_path):
        manifest = default_manifest()
        unlabeled = tmp_path / "unlabeled.csv"
        save_dataset(unlabeled, [replace(s, label=None) for s in load_dataset(dataset, manifest)], manifest)
        out = tmp_path / "out.csv"
        assert main(["label", "--in", str(unlabeled), "--labels", "truth", "--out", str(out)]) == EXIT_SCHEMA
        assert main(["label", "--in", str(unlabeled), "--labels", "auto", "--out", str(out)]) == EXIT_OK
        _, rows = read_csv(out)
        assert all(0.5 <= float(row["confidence"]) <= 1.0 for row in rows)


class TestTrainAndEvaluate:
    """Test model training and both evaluation modes."""

    def test_train_with_mask_and_overrides(self, dataset, tmp_path):
        mask = tmp_path / "mask.json"
        hyper = tmp_path / "hyper.json"
        hyper.write_text(json.dumps({"k": 3}))
        out = tmp_path / "knn.model"
        assert main(["select-features", "--in", str(dataset), "--k", "10", "--out", str(mask)]) == EXIT_OK
        assert main(["train", "--algo", "knn", "--in", str(dataset), "--mask", str(mask),
                     "--hyperparameters", str(hyper), "--out", str(out)]) == EXIT_OK
        payload = json.loads(out.read_text())
        assert payload["hyperparameters"]["k"] == 3
        assert payload["mask"]["selected"] == json.loads(mask.read_text())["selected"]

    def test_evaluate_saved_models(self, dataset, dt_model, tmp_path):
        report_dir = tmp_path / "report"
        assert main(["evaluate", "--in", str(dataset), "--models", str(dt_model.parent),
                     "--report", str(report_dir)]) == EXIT_OK
        payload = json.loads((report_dir / "report.json").read_text())
        assert set(payload["models"]) == {"dt"}
        assert 0.0 <= payload["models"]["dt"]["f1"] <= 1.0
        assert payload["models"]["dt"]["recall"] + payload["models"]["dt"]["mdr"] == pytest.approx(1.0)
        assert "inference_time_s" not in payload["models"]["dt"]
        timings = json.loads((report_dir / "report.timings.json").read_text())
        assert timings["inference_time_s"]["dt"] > 0.0

    def test_report_is_byte_reproducible(self, dataset, dt_model, tmp_path):
        digests = []
        for run in ("a", "b"):
            report_dir = tmp_path / run
            assert main(["evaluate", "--in", str(dataset), "--models", str(dt_model.parent),
                         "--report", str(report_dir)]) == EXIT_OK
            digests.append((sha256_file(report_dir / "report.json"), sha256_file(report_dir / "report.csv")))
        assert digests[0] == digests[1]

    def test_cross_validate_learners(self, dataset, config_file, tmp_path):
        report_dir = tmp_path / "report"
        assert main(["evaluate", "--in", str(dataset), "--config", str(config_file),
                     "--report", str(report_dir)]) == EXIT_OK
        payload = json.loads((report_dir / "report.json").read_text())
        assert set(payload["models"]) == {"knn", "dt"}
        assert payload["evaluation"]["folds"] == 3
        assert payload["evaluation"]["chosen"] in ("knn", "dt")

    def test_single_class_training_fails(self, tmp_path):
        scenario = tmp_path / "benign.json"
        scenario.write_text(json.dumps({"duration": 20}))
        data = tmp_path / "benign.csv"
        assert main(["simulate", "--scenario", str(scenario), "--out", str(data)]) == EXIT_OK
        assert main(["train", "--algo", "dt", "--in", str(data), "--out", str(tmp_path / "dt.model")]) == EXIT_TRAINING

    def test_models_directory_without_models(self, dataset, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["evaluate", "--in", str(dataset), "--models", str(empty),
                     "--report", str(tmp_path / "r")]) == EXIT_MISSING_FILE


class TestRunCommand:
    """Test the online loop from the command line."""

    def test_run_from_model_without_reference(self, dataset, dt_model, config_file, tmp_path):
        verdicts = tmp_path / "verdicts.jsonl"
        events = tmp_path / "events.jsonl"
        assert main(["run", "--model", str(dt_model), "--in", str(dataset), "--config", str(config_file),
                     "--out", str(verdicts), "--events", str(events)]) == EXIT_OK

        lines = [json.loads(line) for line in verdicts.read_text().splitlines()]
        assert len(lines) == 300
        assert set(lines[0]) == {"timestamp", "class", "score", "active_algo"}
        assert all(line["active_algo"] == "dt" for line in lines)
        kinds = [json.loads(line)["kind"] for line in events.read_text().splitlines()]
        assert "trigger" not in kinds

    def test_malformed_lines_are_rejected_not_fatal(self, dataset, dt_model, tmp_path):
        stream = tmp_path / "stream.csv"
        lines = dataset.read_text().splitlines()
        stream.write_text("\n".join(lines[:5] + ["1.0,2.0,3.0"] + lines[5:10]) + "\n")
        verdicts = tmp_path / "verdicts.jsonl"
        events = tmp_path / "events.jsonl"
        assert main(["run", "--model", str(dt_model), "--in", str(stream),
                     "--out", str(verdicts), "--events", str(events)]) == EXIT_OK
        assert len(verdicts.read_text().splitlines()) == 9
        kinds = [json.loads(line)["kind"] for line in events.read_text().splitlines()]
        assert kinds == ["sample_rejected"]

    def test_run_with_bootstrap_and_reference(self, dataset, config_file, tmp_path):
        events = tmp_path / "events.jsonl"
        assert main(["run", "--bootstrap", str(dataset), "--in", str(dataset), "--reference",
                     "--config", str(config_file), "--out", str(tmp_path / "v.jsonl"),
                     "--events", str(events)]) == EXIT_OK
        records = [json.loads(line) for line in events.read_text().splitlines()]
        assert [r["seq"] for r in records] == list(range(len(records)))

    def test_run_with_audit(self, dataset, dt_model, config_file, tmp_path):
        events = tmp_path / "events.jsonl"
        assert main(["run", "--model", str(dt_model), "--in", str(dataset), "--audit-every", "150",
                     "--config", str(config_file), "--out", str(tmp_path / "v.jsonl"),
                     "--events", str(events)]) == EXIT_OK
        kinds = [json.loads(line)["kind"] for line in events.read_text().splitlines()]
        assert kinds.count("audit") == 2


@pytest.mark.slow
class TestBenchmarkCommand:
    """Test the AutoCM-versus-baselines comparison."""

    def test_four_rows(self, dataset, config_file, tmp_path):
        report_dir = tmp_path / "report"
        assert main(["benchmark", "--in", str(dataset), "--config", str(config_file),
                     "--report", str(report_dir)]) == EXIT_OK
        payload = json.loads((report_dir / "benchmark.json").read_text())
        assert set(payload["models"]) == {"jamshield", "comp1", "comp2", "comp3"}
        assert payload["chosen"] in ("knn", "dt")
        _, rows = read_csv(report_dir / "benchmark.csv")
        assert len(rows) == 4 * 6
        timings = json.loads((report_dir / "benchmark.timings.json").read_text())
        assert set(timings["inference_time_s"]) == set(payload["models"])


class TestExitCodes:
    """Test failure mapping onto exit codes."""

    def test_missing_input(self, tmp_path):
        assert main(["label", "--in", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.csv")]) == EXIT_MISSING_FILE

    def test_unknown_config_key(self, dataset, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"windowsize": 3}))
        assert main(["evaluate", "--in", str(dataset), "--config", str(config),
                     "--report", str(tmp_path / "r")]) == EXIT_CONFIG

    def test_malformed_config_json(self, dataset, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text("{not json")
        assert main(["evaluate", "--in", str(dataset), "--config", str(config),
                     "--report", str(tmp_path / "r")]) == EXIT_SCHEMA

    def test_wrong_header(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("a,b\n1,2\n")
        assert main(["label", "--in", str(data), "--out", str(tmp_path / "o.csv")]) == EXIT_SCHEMA

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--algo", "xgboost"])
        assert exc.value.code == 2

    def test_negative_audit_interval(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--model", str(tmp_path / "m"), "--audit-every", "-1"])
        assert exc.value.code == 2


class TestConfigureLogging:
    """Test log level resolution."""

    def test_flag_wins_over_environment(self, monkeypatch):
        monkeypatch.setenv("JAMSHIELD_LOG", "error")
        configure_logging("debug")
        assert logging.getLogger().level == logging.DEBUG

    def test_environment_fallback(self, monkeypatch):
        monkeypatch.setenv("JAMSHIELD_LOG", "warn")
        configure_logging()
        assert logging.getLogger().level == logging.WARNING

    def test_unknown_level_falls_back_to_info(self, monkeypatch):
        monkeypatch.delenv("JAMSHIELD_LOG", raising=False)
        configure_logging("verbose")
        assert logging.getLogger().level == logging.INFO
