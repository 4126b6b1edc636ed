import json

import pytest

from jamshield.errors import SchemaError
from jamshield.io_utils import read_csv
from jamshield.metrics import (
    ConfusionMatrix,
    compute_metrics,
    error_identity_holds,
    render_report,
    summarize,
)


class TestConfusionMatrix:
    """Test confusion counting."""

    def test_from_labels(self):
        cm = ConfusionMatrix.from_labels([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
        assert cm.to_dict() == {"tp": 2, "fp": 1, "tn": 1, "fn": 1}

    def test_negative_count(self):
        with pytest.raises(SchemaError):
            ConfusionMatrix(tp=-1, fp=0, tn=0, fn=0)

    def test_length_mismatch(self):
        with pytest.raises(SchemaError):
            ConfusionMatrix.from_labels([1, 0], [1])


class TestComputeMetrics:
    """Test the six detection metrics."""

    def test_hand_computed_matrix(self):
        report = compute_metrics(ConfusionMatrix(tp=903, fp=117, tn=883, fn=97))
        assert report.precision == pytest.approx(903 / 1020)
        assert report.recall == pytest.approx(0.903)
        assert report.f1 == pytest.approx(2 * 903 / (2 * 903 + 117 + 97))
        assert report.detection_rate == pytest.approx((903 + 883) / 2000)
        assert report.far == pytest.approx(0.117)
        assert report.mdr == pytest.approx(0.097)
        assert report.undefined == ()

    def test_recall_and_mdr_sum_to_one(self):
        report = compute_metrics(ConfusionMatrix(tp=7, fp=3, tn=11, fn=5))
        assert error_identity_holds(report.recall, report.mdr)

    def test_rounded_pair_at_three_decimals(self):
        assert error_identity_holds(0.903, 0.097, decimals=3)
        assert not error_identity_holds(0.903, 0.107, decimals=3)

    def test_no_positives_flags_undefined(self):
        report = compute_metrics(ConfusionMatrix(tp=0, fp=0, tn=10, fn=0))
        assert report.precision == 0.0
        assert report.recall == 0.0
        assert set(report.undefined) == {"precision", "recall", "mdr", "f1"}
        assert report.detection_rate == 1.0

    def test_empty_matrix(self):
        with pytest.raises(SchemaError):
            compute_metrics(ConfusionMatrix(tp=0, fp=0, tn=0, fn=0))

    def test_summarize_mean_and_std(self):
        reports = [
            compute_metrics(ConfusionMatrix(tp=1, fp=0, tn=1, fn=1)),
            compute_metrics(ConfusionMatrix(tp=2, fp=0, tn=2, fn=0)),
        ]
        summary = summarize(reports)
        assert summary["recall"]["mean"] == pytest.approx(0.75)
        assert summary["recall"]["std"] == pytest.approx(0.25)


class TestRenderReport:
    """Test JSON and long-format CSV reports."""

    def test_four_models_give_24_rows(self, tmp_path):
        values = compute_metrics(ConfusionMatrix(tp=903, fp=117, tn=883, fn=97)).values()
        rows = {name: values for name in ("jamshield", "comp1", "comp2", "comp3")}
        json_path, csv_path = render_report(rows, tmp_path, name="benchmark")

        header, csv_rows = read_csv(csv_path)
        assert header == ["model", "metric", "value"]
        assert len(csv_rows) == 24
        payload = json.loads(json_path.read_text())
        assert payload["schema_version"] == 1
        assert payload["models"]["comp2"]["far"] == 0.117

    def test_values_rounded_to_nine_digits(self, tmp_path):
        json_path, _ = render_report({"knn": {"f1": 1.0 / 3.0}}, tmp_path)
        assert json.loads(json_path.read_text())["models"]["knn"]["f1"] == 0.333333333

    def test_extra_fields(self, tmp_path):
        json_path, _ = render_report({"knn": {"f1": 0.5}}, tmp_path, extra={"seed": 42})
        assert json.loads(json_path.read_text())["seed"] == 42

    def test_empty_rows(self, tmp_path):
        with pytest.raises(SchemaError):
            render_report({}, tmp_path)

    def test_destination_is_a_file(self, tmp_path):
        target = tmp_path / "report"
        target.write_text("")
        with pytest.raises(SchemaError):
            render_report({"knn": {"f1": 0.5}}, target)
