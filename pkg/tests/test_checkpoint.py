"""Unit tests for versioned checkpoint archives."""

import pytest
import torch

from src.audio.projector import AudioProjector
from src.diffusion.adapters import build_adapters
from src.pipeline.checkpoint import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint
from src.pipeline.models import build_bundle
from src.utils.validation_utils import ArtifactNotFoundError, ConfigurationError

VOCAB = 7


def full_bundle(config, insertion_set="middle_decoder"):
    torch.manual_seed(0)
    bundle = build_bundle(config, VOCAB)
    bundle.adapters = build_adapters(bundle.backbone, insertion_set, config.projector.token_dim)
    bundle.adapters.set_gammas(0.3)
    bundle.adapters.beta = 1.5
    bundle.adapters.site_beta = {7: 0.5}
    return bundle


def forward(bundle, seed=0):
    generator = torch.Generator().manual_seed(seed)
    z = torch.randn(2, 3, 8, 8, generator=generator)
    emb = torch.randn(2, bundle.projector.embed_dim, generator=generator)
    ids = torch.randint(0, VOCAB, (2, bundle.text_embedder.num_tokens), generator=generator)
    with torch.no_grad():
        bundle.backbone.eval()
        bundle.text_embedder.eval()
        bundle.projector.eval()
        return bundle.backbone(z, 11, bundle.text_embedder(ids), bundle.projector(emb), bundle.adapters)


class TestCheckpointRoundTrip:
    """Tests for save_checkpoint / load_checkpoint."""

    def test_outputs_reproduced(self, tmp_path, tiny_config):
        """Test a reloaded bundle reproduces the forward pass."""
        bundle = full_bundle(tiny_config)
        path = save_checkpoint(tmp_path / "ckpt.pt", bundle, tiny_config, stage="stage2", step=9, extras={"k": 1})
        loaded = load_checkpoint(path, ("backbone", "text_embedder", "adapters", "projector"))
        assert torch.allclose(forward(bundle), forward(loaded.bundle), atol=1e-7)
        assert loaded.version == CHECKPOINT_VERSION
        assert loaded.stage == "stage2"
        assert loaded.step == 9
        assert loaded.extras == {"k": 1}
        assert loaded.config == tiny_config

    def test_adapter_settings_restored(self, tmp_path, tiny_config):
        """Test insertion set, gates, beta and per-site beta survive the archive."""
        bundle = full_bundle(tiny_config, "layers_6_11")
        loaded = load_checkpoint(save_checkpoint(tmp_path / "c.pt", bundle, tiny_config, stage="stage2"))
        adapters = loaded.bundle.adapters
        assert adapters.insertion_set == "layers_6_11"
        assert adapters.sites == tuple(range(6, 12))
        assert adapters.beta == 1.5
        assert adapters.site_beta == {7: 0.5}
        assert adapters.gammas() == pytest.approx(bundle.adapters.gammas())

    def test_absent_groups_stay_absent(self, tmp_path, tiny_config):
        """Test a backbone-only archive loads without projector or adapters."""
        bundle = build_bundle(tiny_config, VOCAB, with_projector=False)
        loaded = load_checkpoint(save_checkpoint(tmp_path / "b.pt", bundle, tiny_config, stage="stage0"))
        assert loaded.groups == ("backbone", "text_embedder")
        assert loaded.bundle.projector is None


class TestCheckpointErrors:
    """Tests for rejected archives."""

    def test_missing_file(self, tmp_path):
        """Test a missing path raises ArtifactNotFoundError."""
        with pytest.raises(ArtifactNotFoundError):
            load_checkpoint(tmp_path / "none.pt")

    def test_wrong_version(self, tmp_path):
        """Test a foreign version string is rejected."""
        torch.save({"version": "other/9"}, tmp_path / "v.pt")
        with pytest.raises(ConfigurationError):
            load_checkpoint(tmp_path / "v.pt")

    def test_unreadable(self, tmp_path):
        """Test garbage bytes are rejected as a configuration error."""
        (tmp_path / "g.pt").write_bytes(b"not a checkpoint")
        with pytest.raises(ConfigurationError):
            load_checkpoint(tmp_path / "g.pt")

    def test_missing_required_group(self, tmp_path, tiny_config):
        """Test requiring adapters from a stage-1 archive fails."""
        bundle = build_bundle(tiny_config, VOCAB)
        path = save_checkpoint(tmp_path / "p.pt", bundle, tiny_config, stage="stage1")
        with pytest.raises(ConfigurationError):
            load_checkpoint(path, ("backbone", "text_embedder", "adapters"))

    def test_projector_width_mismatch(self, tmp_path, tiny_config):
        """Test a projector whose token width differs from the backbone's is rejected."""
        bundle = build_bundle(tiny_config, VOCAB)
        bundle.projector = AudioProjector(
            embed_dim=tiny_config.audio.embed_dim, num_tokens=4, token_dim=8, hidden_channels=8
        )
        path = save_checkpoint(tmp_path / "w.pt", bundle, tiny_config, stage="stage1")
        with pytest.raises(ConfigurationError):
            load_checkpoint(path)

    def test_adapter_insertion_set_mismatch(self, tmp_path, tiny_config):
        """Test adapter weights that do not fit their recorded insertion set are rejected."""
        bundle = full_bundle(tiny_config, "layers_6_11")
        path = save_checkpoint(tmp_path / "a.pt", bundle, tiny_config, stage="stage2")
        archive = torch.load(path, weights_only=False)
        archive["headers"]["adapters"]["insertion_set"] = "all"
        torch.save(archive, path)
        with pytest.raises(ConfigurationError):
            load_checkpoint(path)
