"""Tests for report schemas and the Jinja2 report renderer."""

import pytest
from pydantic import ValidationError

from src.schemas import SCHEMA_REGISTRY, validate_report
from src.schemas.base import SCHEMA_VERSION, Status
from src.schemas.reports import PartitionReport
from src.utils.report_renderer import TEMPLATES_DIR, format_metric, render_report
from src.utils.validation_utils import ArtifactNotFoundError


class TestFormatMetric:
    """Tests for the metric filter."""

    def test_values(self):
        """Test floats get fixed precision and None becomes n/a."""
        assert format_metric(0.5) == "0.5000"
        assert format_metric(3.14159, 2) == "3.14"
        assert format_metric(None) == "n/a"
        assert format_metric(7) == "7"


class TestRenderReport:
    """Tests for render_report."""

    def test_project_template_exists(self):
        """Test the ablation template ships with the project."""
        assert (TEMPLATES_DIR / "ablation_report.md.j2").exists()

    def test_override_directory(self, tmp_path):
        """Test a template in the override directory wins and sees the metric filter."""
        (tmp_path / "t.md.j2").write_text("value={{ x | metric(1) }}", encoding="utf-8")
        assert render_report("t.md.j2", {"x": 0.25}, templates_dir=tmp_path) == "value=0.2"

    def test_missing_template(self, tmp_path):
        """Test an unknown template raises ArtifactNotFoundError."""
        with pytest.raises(ArtifactNotFoundError):
            render_report("nowhere.md.j2", {}, templates_dir=tmp_path)


class TestSchemas:
    """Tests for the schema registry."""

    def test_registry_names(self):
        """Test every artifact kind is registered."""
        assert set(SCHEMA_REGISTRY) == {"metrics", "partition", "manifest", "ablation"}

    def test_metrics_bounds(self):
        """Test scores outside [0, 1] fail validation."""
        data = {"ais": 1.2, "aic": 0.5, "iis": 0.5, "fid": 1.0,
                "num_samples": 1, "num_audio_references": 1, "num_image_references": 1}
        with pytest.raises(ValidationError):
            validate_report("metrics", data)
        data["ais"] = 0.9
        assert validate_report("metrics", data).per_sample == []

    def test_manifest_defaults(self):
        """Test manifests default to completed and stamp the schema version."""
        manifest = validate_report("manifest", {"metadata": {"run_id": "r", "command": "generate"}})
        assert manifest.status == Status.COMPLETED
        assert manifest.metadata.version == SCHEMA_VERSION

    def test_partition_fraction(self):
        """Test the trainable fraction of a partition."""
        report = PartitionReport(groups={"a": 3, "b": 1}, trainable_groups=["b"], trainable=1, frozen=3)
        assert report.total == 4
        assert report.trainable_fraction == 0.25

    def test_unknown_schema(self):
        """Test unknown schema names raise KeyError."""
        with pytest.raises(KeyError):
            validate_report("sprint", {})
