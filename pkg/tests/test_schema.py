import json

import numpy as np
import pytest

from jamshield.config import CLASS_TAXONOMY, REFERENCE_CLASS_COUNTS
from jamshield.errors import SchemaError
from jamshield.schema import (
    BENIGN_LABEL,
    ClassLabel,
    LabeledSample,
    binary_labels,
    class_summary,
    has_ground_truth,
    load_manifest,
    validate_manifest,
    variant_for,
)


def _entries(manifest):
    return [{"name": f.name, "layer": f.layer, "unit": f.unit} for f in manifest.features]


class TestManifest:
    """Test manifest loading and validation."""

    def test_default_manifest_has_40_features_in_three_layers(self, manifest):
        assert len(manifest) == 40
        assert {f.layer for f in manifest.features} == {"physical", "link", "application"}
        assert len(set(manifest.names)) == 40

    def test_wrong_count(self, manifest):
        with pytest.raises(SchemaError, match="expected 40, found 39"):
            validate_manifest(_entries(manifest)[:39])

    def test_duplicate_name_is_named(self, manifest):
        entries = _entries(manifest)
        entries[5] = dict(entries[1])
        with pytest.raises(SchemaError, match="snr_db"):
            validate_manifest(entries)

    def test_unknown_layer(self, manifest):
        entries = _entries(manifest)
        entries[0]["layer"] = "transport"
        with pytest.raises(SchemaError, match="transport"):
            validate_manifest(entries)

    def test_load_manifest_invalid_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("[not json")
        with pytest.raises(SchemaError):
            load_manifest(path)

    def test_load_manifest_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "missing.json")

    def test_load_manifest_from_file(self, manifest, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(_entries(manifest)))
        assert load_manifest(path).names == manifest.names

    def test_index_lookups(self, manifest):
        assert manifest.index_of("snr_db") == 1
        assert manifest.indices_of(["loss_fraction", "rssi_dbm"]) == [0, manifest.index_of("loss_fraction")]
        with pytest.raises(SchemaError):
            manifest.index_of("not_a_feature")


class TestClassLabel:
    """Test the class taxonomy."""

    def test_benign(self):
        assert BENIGN_LABEL.binary == 0
        assert BENIGN_LABEL.key == "benign"

    def test_attack_key(self):
        label = ClassLabel.parse("reactive", "gaussian_los")
        assert label.binary == 1
        assert label.key == "reactive/gaussian_los"

    def test_unknown_variant(self):
        with pytest.raises(SchemaError, match="Unknown variant"):
            ClassLabel.parse("constant", "gaussian_99db")

    def test_unknown_kind(self):
        with pytest.raises(SchemaError):
            ClassLabel.parse("sweeping", "gaussian_los")

    def test_benign_with_variant(self):
        with pytest.raises(SchemaError):
            ClassLabel("benign", "gaussian_los")

    def test_reference_totals(self):
        """Catalogued row counts add up to 39,861 samples, 29,896 benign."""
        assert sum(REFERENCE_CLASS_COUNTS.values()) == 39861
        assert REFERENCE_CLASS_COUNTS["benign"] == 29896
        assert len(REFERENCE_CLASS_COUNTS) == 1 + sum(len(v) for v in CLASS_TAXONOMY.values())


class TestLabeledSample:
    """Test sample construction and label helpers."""

    def test_rejects_nan(self):
        with pytest.raises(SchemaError):
            LabeledSample(timestamp=0.0, values=np.array([1.0, np.nan]))

    def test_values_are_read_only(self):
        sample = LabeledSample(timestamp=0.0, values=np.zeros(3))
        with pytest.raises(ValueError):
            sample.values[0] = 1.0

    def test_binary_labels_require_ground_truth(self):
        samples = [LabeledSample(0.0, np.zeros(2), BENIGN_LABEL), LabeledSample(0.5, np.zeros(2))]
        assert not has_ground_truth(samples)
        with pytest.raises(SchemaError, match="no ground-truth"):
            binary_labels(samples)

    def test_class_summary_from_reference_counts(self):
        samples = []
        for key, count in REFERENCE_CLASS_COUNTS.items():
            kind, _, variant = key.partition("/")
            label = ClassLabel.parse(kind, variant)
            samples.extend(LabeledSample(0.0, np.zeros(1), label) for _ in range(count))

        summary = class_summary(samples)
        assert summary["total"] == 39861
        assert summary["benign"] == 29896
        assert summary["attack"] == 39861 - 29896
        assert summary["random/sawtooth_dynamic_gain"] == 1128


class TestVariantFor:
    """Test mapping simulated jammers onto catalogued variants."""

    def test_fixed_gain_picks_nearest_gain_row(self):
        assert variant_for("constant", "awgn", 20.0, "los", False) == "gaussian_20db"
        assert variant_for("constant", "awgn", 27.0, "los", False) == "gaussian_25db"

    def test_dynamic_gain(self):
        assert variant_for("constant", "awgn", None, "los", True) == "gaussian_dynamic_gain"
        assert variant_for("random", "sawtooth", None, "nlos", True) == "sawtooth_dynamic_gain"

    def test_geometry_match(self):
        assert variant_for("reactive", "awgn", 20.0, "nlos", False) == "gaussian_nlos"
        assert variant_for("reactive", "square", 20.0, "nlos", False) == "square_nlos"

    def test_waveform_without_row_falls_back_to_geometry_then_order(self):
        assert variant_for("reactive", "pulse", 10.0, "nlos", False) == "cos_nlos"

    def test_every_result_is_in_the_taxonomy(self):
        for kind, rows in CLASS_TAXONOMY.items():
            for waveform in ("awgn", "cos", "sine", "triangle", "pulse", "sawtooth", "square"):
                for geometry in ("los", "nlos"):
                    for dynamic in (False, True):
                        assert variant_for(kind, waveform, 15.0, geometry, dynamic) in rows

    def test_unknown_waveform(self):
        with pytest.raises(SchemaError):
            variant_for("constant", "chirp", 20.0, "los", False)
