"""Tests for training stages, command helpers and the ablation runner on the tiny configuration."""

import json

import numpy as np
import pytest
import torch

from src.data.synth import dataset_checksum
from src.diffusion.adapters import parameter_digest
from src.editing.pnp import InjectionConfig
from src.logging.run_logger import RunLogger
from src.metrics.probes import edge_iou
from src.pipeline.ablation import ABLATIONS, resolve_ablations, run_ablations, write_ablation_report
from src.pipeline.checkpoint import load_checkpoint
from src.pipeline.commands import (
    build_conditioning,
    edit_image,
    eval_embedder_for,
    evaluate_checkpoint,
    generate_images,
    write_manifest,
)
from src.pipeline.models import batch_plan, tensorize_examples
from src.pipeline.training import prepare_stage2, stage1_indices, train_stage1
from src.sampling.guidance import GuidanceConfig
from src.schemas import validate_report
from src.schemas.base import RunMetadata, Status
from src.schemas.reports import AblationReport, AblationRow, MetricsReport
from src.utils.validation_utils import ArgumentError, ConfigurationError
from tests.conftest import edit_with_plain_baseline

ADAPTER_GROUPS = ("backbone", "text_embedder", "adapters", "projector")


@pytest.fixture(scope="module")
def adapter_checkpoint(trained_run):
    return load_checkpoint(trained_run / "checkpoints" / "adapters.pt", ADAPTER_GROUPS)


class TestBatchPlan:
    """Tests for the seeded batch schedule."""

    def test_deterministic(self):
        """Test the same seed gives the same plan."""
        a, b = batch_plan(10, 3, 7, seed=4), batch_plan(10, 3, 7, seed=4)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert len(a) == 7

    def test_no_repeats_within_epoch(self):
        """Test batches of one epoch never repeat an index."""
        plan = batch_plan(10, 3, 6, seed=0)
        for epoch in (plan[:3], plan[3:]):
            flat = np.concatenate(epoch)
            assert len(set(flat.tolist())) == len(flat) == 9

    def test_small_dataset(self):
        """Test batches shrink to the dataset size."""
        assert all(len(b) == 2 for b in batch_plan(2, 5, 3, seed=0))
        with pytest.raises(ArgumentError):
            batch_plan(0, 2, 1, seed=0)

    def test_tensorize_requires_examples(self, tiny_config, tiny_dataset):
        """Test an empty example list cannot be tensorized."""
        with pytest.raises(ArgumentError):
            tensorize_examples([], tiny_config, None, tiny_dataset.tokenizer)


class TestStage1Indices:
    """Tests for positive/negative selection."""

    def test_classes_respected(self):
        """Test positives share the class and negatives never do."""
        labels = np.array([0, 0, 1, 1, 2, 2])
        anchors = np.array([0, 2, 4])
        positives, negatives = stage1_indices(labels, anchors, 3, np.random.default_rng(0))
        for anchor, positive, row in zip(anchors, positives, negatives):
            assert labels[positive] == labels[anchor] and positive != anchor
            assert all(labels[n] != labels[anchor] for n in row)
            assert len(set(row.tolist())) == len(row) == 3

    def test_negative_count_capped(self):
        """Test the negative count is capped by the available pool."""
        labels = np.array([0, 0, 0, 1])
        _, negatives = stage1_indices(labels, np.array([0]), 5, np.random.default_rng(0))
        assert negatives.shape == (1, 1)

    def test_single_class_rejected(self):
        """Test a one-class label set raises."""
        with pytest.raises(ArgumentError):
            stage1_indices(np.zeros(4, dtype=int), np.array([0, 1]), 2, np.random.default_rng(0))


class TestTrainingStages:
    """Tests for the trained checkpoint chain."""

    def test_checkpoints_carry_stages(self, trained_run, tiny_dataset):
        """Test every stage wrote its archive with the caption vocabulary."""
        stages = {
            name: load_checkpoint(trained_run / "checkpoints" / f"{name}.pt", ()).stage
            for name in ("backbone", "projector", "adapters")
        }
        assert stages == {"backbone": "stage0", "projector": "stage1", "adapters": "stage2"}
        extras = load_checkpoint(trained_run / "checkpoints" / "adapters.pt", ()).extras
        assert extras["class_names"] == list(tiny_dataset.class_names)

    def test_backbone_frozen_through_both_stages(self, trained_run, adapter_checkpoint):
        """Test the backbone digest after stage 2 equals the stage-0 backbone's."""
        backbone = load_checkpoint(trained_run / "checkpoints" / "backbone.pt").bundle.backbone
        assert parameter_digest(backbone) == parameter_digest(adapter_checkpoint.bundle.backbone)
        assert adapter_checkpoint.extras["backbone_digest"] == parameter_digest(backbone)

    def test_stage2_partition_recorded(self, adapter_checkpoint):
        """Test the partition stored with the adapters trains only adapters and projector."""
        partition = adapter_checkpoint.partition
        assert partition.trainable_groups == ["adapters", "projector"]
        assert 0.0 < partition.trainable_fraction < 1.0

    def test_prepare_stage2_freezes_backbone(self, trained_run, tiny_config):
        """Test prepare_stage2 attaches zero-gated adapters and freezes the backbone."""
        loaded = load_checkpoint(trained_run / "checkpoints" / "projector.pt", ("projector",))
        report = prepare_stage2(tiny_config, loaded)
        bundle = loaded.bundle
        assert bundle.adapters.sites == tuple(range(6, 16))
        assert all(g == 0.0 for g in bundle.adapters.gammas().values())
        assert not any(p.requires_grad for p in bundle.backbone.parameters())
        assert report.trainable == report.groups["adapters"] + report.groups["projector"]

    def test_prepare_stage2_needs_projector(self, trained_run, tiny_config):
        """Test a backbone-only checkpoint cannot start stage 2."""
        loaded = load_checkpoint(trained_run / "checkpoints" / "backbone.pt")
        with pytest.raises(ConfigurationError):
            prepare_stage2(tiny_config, loaded)

    def test_stage1_logs_loss_terms(self, trained_run, tiny_config, tiny_dataset, tmp_path):
        """Test stage 1 appends one row per step with every loss term."""
        logger = RunLogger(tmp_path)
        result = train_stage1(
            tiny_config, tiny_dataset, trained_run / "checkpoints" / "backbone.pt", tmp_path / "p.pt", logger=logger
        )
        rows = logger.read_loss_curve("stage1")
        assert len(rows) == len(result.losses) == tiny_config.stage1.steps
        assert {"total", "infonce", "mse"} <= set(rows[0])
        assert 0.0 <= result.metrics["centroid_accuracy"] <= 1.0

    def test_stage1_skip_keeps_initialization(self, trained_run, tiny_config, tiny_dataset, tmp_path):
        """Test a skipped stage 1 records no losses."""
        config = tiny_config.override(stage1={"skip": True})
        result = train_stage1(config, tiny_dataset, trained_run / "checkpoints" / "backbone.pt", tmp_path / "p.pt")
        assert result.losses == []
        assert load_checkpoint(result.checkpoint, ("projector",)).extras["skipped"] is True


class TestCommandHelpers:
    """Tests for generation, editing and evaluation helpers."""

    def test_generate_beta_sweep(self, adapter_checkpoint, tiny_config, tiny_dataset):
        """Test one image set per beta and the per-site table is restored afterwards."""
        bundle = adapter_checkpoint.bundle
        emb = tensorize_examples(tiny_dataset.val[:2], tiny_config, bundle.encoder, tiny_dataset.tokenizer).audio_embeddings
        before = dict(bundle.adapters.site_beta)
        output = generate_images(
            bundle, emb, cfg=GuidanceConfig.from_config(tiny_config.sampler), image_size=8,
            betas=[0.0, 1.0], seed=3, site_beta={6: 0.5}, log_norms=True,
        )
        assert sorted(output.images) == [0.0, 1.0]
        for images in output.images.values():
            assert images.shape == (2, 8, 8, 3)
            assert images.min() >= -1.0 and images.max() <= 1.0
        assert bundle.adapters.site_beta == before
        sites = {row[0] for row in output.norm_rows[1.0]}
        assert sites == set(bundle.adapters.sites)

    def test_generate_is_reproducible(self, adapter_checkpoint, tiny_config, tiny_dataset):
        """Test a fixed seed gives identical images."""
        bundle = adapter_checkpoint.bundle
        emb = tensorize_examples(tiny_dataset.val[:1], tiny_config, bundle.encoder, tiny_dataset.tokenizer).audio_embeddings
        cfg = GuidanceConfig.from_config(tiny_config.sampler)
        first = generate_images(bundle, emb, cfg=cfg, image_size=8, seed=5).images[1.0]
        second = generate_images(bundle, emb, cfg=cfg, image_size=8, seed=5).images[1.0]
        np.testing.assert_array_equal(first, second)

    def test_null_conditioning_pairs(self, adapter_checkpoint):
        """Test the null branch pairs null text tokens with null audio tokens."""
        bundle = adapter_checkpoint.bundle
        cond = build_conditioning(bundle, torch.zeros(2, bundle.projector.embed_dim))
        assert torch.allclose(cond.c_text, cond.null_text)
        assert torch.allclose(cond.c_audio, cond.null_audio.expand_as(cond.c_audio), atol=1e-6)

    def test_edit_outputs(self, adapter_checkpoint, tiny_config, tiny_dataset):
        """Test editing returns an image plus reconstruction and records every step."""
        bundle = adapter_checkpoint.bundle
        source = tiny_dataset.val[0]
        emb = tensorize_examples([tiny_dataset.val[-1]], tiny_config, bundle.encoder, tiny_dataset.tokenizer)
        result = edit_image(
            bundle, source.image.pixels, emb.audio_embeddings[0],
            cfg=GuidanceConfig.from_config(tiny_config.sampler), injection=InjectionConfig(),
        )
        assert result.edited.shape == (8, 8, 3)
        assert result.reconstruction.shape == (8, 8, 3)
        assert len(result.trajectory.recorded_timesteps) == tiny_config.sampler.steps

    def test_evaluate_report_and_embedder_cache(self, adapter_checkpoint, tiny_config, tiny_dataset, tmp_path):
        """Test the metrics report is well-formed and the embedder is cached by dataset."""
        cache = tmp_path / "eval_embedder.pt"
        report, images, samples = evaluate_checkpoint(
            adapter_checkpoint, tiny_dataset, tiny_config, embedder_cache=cache
        )
        assert cache.exists()
        assert torch.load(cache, weights_only=False)["dataset_checksum"] == dataset_checksum(tiny_dataset)
        assert report.num_samples == len(samples) == tiny_config.evaluation.max_samples
        assert report.num_audio_references == len(tiny_dataset.val)
        assert images.shape == (len(samples), 3, 8, 8)
        assert 0.0 <= report.ais <= 1.0 and 0.0 <= report.aic <= 1.0 and report.fid >= 0.0
        assert len(report.per_sample) == len(samples)

        cached = eval_embedder_for(tiny_config, tiny_dataset, adapter_checkpoint.bundle, cache)
        assert cached.checksum == report.embedder_checksum

    def test_evaluate_supplied_images_count(self, adapter_checkpoint, tiny_config, tiny_dataset, tmp_path):
        """Test supplying the wrong number of generated images raises."""
        with pytest.raises(ArgumentError):
            evaluate_checkpoint(
                adapter_checkpoint, tiny_dataset, tiny_config,
                generated=torch.zeros(1, 3, 8, 8), embedder_cache=tmp_path / "e.pt",
            )

    def test_manifest(self, tmp_path, tiny_config):
        """Test manifest.json validates against the manifest schema."""
        path = write_manifest(tmp_path, "run-1", "generate", tiny_config, {"audio": tmp_path / "a.wav"}, ["x.png"])
        manifest = validate_report("manifest", json.loads(path.read_text(encoding="utf-8")))
        assert manifest.status == Status.COMPLETED
        assert manifest.settings["audio"] == str(tmp_path / "a.wav")
        assert manifest.config["seed"] == tiny_config.seed


class TestEditingProperties:
    """Structural properties of feature-injection editing on the trained checkpoint."""

    def test_injection_keeps_source_edges(self, adapter_checkpoint, tiny_config, tiny_dataset):
        """Test most cross-class edits overlap the source edges at least as well as uninjected sampling."""
        bundle = adapter_checkpoint.bundle
        val = tiny_dataset.val
        emb = tensorize_examples(val, tiny_config, bundle.encoder, tiny_dataset.tokenizer).audio_embeddings
        cfg = GuidanceConfig.from_config(tiny_config.sampler)
        outcomes = []
        for source in val:
            for j, other in enumerate(val):
                if other.class_id == source.class_id:
                    continue
                edited, plain = edit_with_plain_baseline(bundle, source.image.pixels, emb[j], cfg, InjectionConfig())
                outcomes.append(edge_iou(edited, source.image.pixels) >= edge_iou(plain, source.image.pixels))
        assert len(outcomes) >= 16
        assert sum(outcomes) > len(outcomes) / 2

class TestAblation:
    """Tests for the ablation registry, runner and report."""

    def test_registry(self):
        """Test all eight configurations are registered in order."""
        names = [spec.name for spec in resolve_ablations()]
        assert names == [
            "full", "no_contrastive", "no_mse", "no_stage1", "frozen_projector_stage2",
            "single_token", "insertion_layers_6_11", "insertion_all",
        ]
        assert resolve_ablations(["no_mse"])[0].overrides == {"stage1": {"alpha_mse": 0.0}}
        with pytest.raises(ArgumentError):
            resolve_ablations(["everything"])

    def test_overrides_validate(self, tiny_config):
        """Test every ablation's overrides produce a valid config."""
        for spec in ABLATIONS.values():
            tiny_config.override(**{k: dict(v) for k, v in spec.overrides.items()})

    def test_runner_shares_stage1(self, trained_run, tiny_config, tiny_dataset, tmp_path):
        """Test rows with the same stage-1 settings reuse one projector checkpoint."""
        report = run_ablations(
            tiny_config, tiny_dataset, tmp_path, run_id="ablate-test",
            names=["full", "frozen_projector_stage2"],
            backbone_checkpoint=trained_run / "checkpoints" / "backbone.pt",
        )
        assert [row.status for row in report.rows] == [Status.COMPLETED, Status.COMPLETED]
        assert (tmp_path / "full" / "projector.pt").exists()
        assert not (tmp_path / "frozen_projector_stage2" / "projector.pt").exists()
        assert (tmp_path / "frozen_projector_stage2" / "adapters.pt").exists()
        assert report.rows[0].stage1_final_loss == report.rows[1].stage1_final_loss
        assert (tmp_path / "ablation.json").exists() and (tmp_path / "ablation.md").exists()

    def test_runtime_error_marks_rows_failed(self, trained_run, tiny_config, tiny_dataset, tmp_path, mocker):
        """Test a torch RuntimeError marks its row failed and later rows still run."""
        mocker.patch(
            "src.pipeline.ablation.train_stage2",
            side_effect=RuntimeError("mat1 and mat2 shapes cannot be multiplied"),
        )
        report = run_ablations(
            tiny_config, tiny_dataset, tmp_path, run_id="ablate-errors",
            names=["full", "no_mse"],
            backbone_checkpoint=trained_run / "checkpoints" / "backbone.pt",
        )
        assert [row.name for row in report.rows] == ["full", "no_mse"]
        assert all(row.status == Status.FAILED for row in report.rows)
        assert "shapes cannot be multiplied" in report.rows[1].error_message
        assert (tmp_path / "ablation.md").exists()

    def test_report_markdown(self, tmp_path):
        """Test the markdown table renders metrics and failed rows."""
        metrics = MetricsReport(
            ais=0.5, aic=0.25, iis=0.75, fid=12.5, num_samples=2, num_audio_references=4, num_image_references=4
        )
        report = AblationReport(
            metadata=RunMetadata(run_id="r", command="ablate", seed=0),
            rows=[
                AblationRow(name="full", description="base", metrics=metrics, stage1_final_loss=1.0),
                AblationRow(name="no_mse", description="x", status=Status.FAILED, error_message="diverged"),
            ],
        )
        json_path, md_path = write_ablation_report(report, tmp_path)
        text = md_path.read_text(encoding="utf-8")
        assert "| full | 0.5000 | 0.2500 | 0.7500 | 12.50 | 1.0000 | n/a | completed |" in text
        assert "failed: diverged" in text
        assert validate_report("ablation", json.loads(json_path.read_text(encoding="utf-8"))).rows[1].status == Status.FAILED
