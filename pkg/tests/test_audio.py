"""Unit tests for the frozen audio encoder and the audio projector."""

import numpy as np
import pytest
import torch

from src.audio.encoder import FrozenAudioEncoder, encode_audio
from src.audio.projector import (
    NUM_SELF_ATTENTION_BLOCKS,
    AudioProjector,
    load_projector,
    null_audio_tokens,
    project,
    save_projector,
)
from src.config.run_config import build_run_config
from src.data.preprocessing import compute_logmel
from src.pipeline.models import build_encoder, tensorize_examples
from src.utils.validation_utils import ArgumentError, ArtifactNotFoundError, ConfigurationError
from tests.conftest import tiny_config_dict


class TestFrozenAudioEncoder:
    """Tests for the deterministic featurizer."""

    def test_unit_norm_output(self):
        """Test embeddings are L2-normalized with the configured width."""
        encoder = FrozenAudioEncoder(n_mels=16, embed_dim=32)
        out = encoder(torch.randn(3, 16, 10))
        assert out.shape == (3, 32)
        assert torch.allclose(out.norm(dim=-1), torch.ones(3), atol=1e-5)

    def test_same_seed_same_projection(self):
        """Test two encoders with one seed agree exactly."""
        mel = torch.randn(16, 10)
        assert torch.equal(FrozenAudioEncoder(16, 32, seed=5)(mel), FrozenAudioEncoder(16, 32, seed=5)(mel))

    def test_encode_audio_defaults(self, tiny_dataset):
        """Test encode_audio builds a default encoder sized to the spectrogram."""
        mel = compute_logmel(tiny_dataset.val[0].audio, 128, 256, 16)
        embedding = encode_audio(mel)
        assert embedding.shape == (512,)
        assert torch.equal(embedding, FrozenAudioEncoder(n_mels=16)(mel))
        assert embedding.norm().item() == pytest.approx(1.0, abs=1e-5)

    def test_wrong_mel_bins(self):
        """Test a mel count mismatch raises."""
        with pytest.raises(ArgumentError):
            FrozenAudioEncoder(n_mels=16)(torch.randn(8, 10))

    def test_same_class_more_similar(self, tiny_dataset):
        """Test same-class val clips are on average more similar than cross-class ones."""
        config = build_run_config(tiny_config_dict())
        encoder = build_encoder(config)
        tensors = tensorize_examples(tiny_dataset.val, config, encoder, tiny_dataset.tokenizer)
        sims = (tensors.audio_embeddings @ tensors.audio_embeddings.t()).numpy()
        labels = tensors.labels.numpy()
        same = labels[:, None] == labels[None, :]
        off_diagonal = ~np.eye(len(labels), dtype=bool)
        assert sims[same & off_diagonal].mean() > sims[~same].mean()


class TestAudioProjector:
    """Tests for AudioProjector."""

    def test_output_shapes(self):
        """Test batched and single embeddings map to K x C tokens."""
        projector = AudioProjector(embed_dim=32, num_tokens=5, token_dim=16, hidden_channels=8)
        assert projector(torch.randn(2, 32)).shape == (2, 5, 16)
        assert project(torch.randn(32), projector).shape == (5, 16)

    def test_single_token(self):
        """Test K = 1 is supported."""
        projector = AudioProjector(embed_dim=32, num_tokens=1, token_dim=16, hidden_channels=8)
        assert projector(torch.randn(4, 32)).shape == (4, 1, 16)

    def test_wrong_embedding_width(self):
        """Test a mismatched embedding dimension raises."""
        projector = AudioProjector(embed_dim=32, num_tokens=4, token_dim=16, hidden_channels=8)
        with pytest.raises(ArgumentError):
            projector(torch.randn(2, 31))
        with pytest.raises(ArgumentError):
            projector(torch.randn(2, 3, 32))

    def test_header(self):
        """Test the header carries K, C, D_a and the block count."""
        header = AudioProjector(embed_dim=32, num_tokens=4, token_dim=16, hidden_channels=8).header()
        assert header["num_tokens"] == 4
        assert header["token_dim"] == 16
        assert header["embed_dim"] == 32
        assert header["num_blocks"] == NUM_SELF_ATTENTION_BLOCKS

    def test_null_tokens_match_zero_embedding(self):
        """Test null tokens are the projection of the zero embedding."""
        projector = AudioProjector(embed_dim=32, num_tokens=4, token_dim=16, hidden_channels=8).eval()
        with torch.no_grad():
            expected = projector(torch.zeros(32))
            assert torch.allclose(null_audio_tokens(projector), expected)
            assert null_audio_tokens(projector, 3).shape == (3, 4, 16)

    def test_finite_difference_gradient(self):
        """Test one output coordinate's gradient against central differences."""
        torch.manual_seed(0)
        projector = AudioProjector(embed_dim=8, num_tokens=2, token_dim=8, hidden_channels=4).double().eval()
        x = torch.randn(1, 8, dtype=torch.float64, requires_grad=True)
        projector(x)[0, 1, 3].backward()
        analytic = x.grad[0, 2].item()

        h = 1e-3
        with torch.no_grad():
            plus, minus = x.detach().clone(), x.detach().clone()
            plus[0, 2] += h
            minus[0, 2] -= h
            numeric = (projector(plus)[0, 1, 3] - projector(minus)[0, 1, 3]).item() / (2 * h)
        assert abs(analytic - numeric) <= 1e-4 * max(abs(numeric), 1.0)

    def test_save_and_load(self, tmp_path):
        """Test the archive reproduces outputs and null tokens."""
        projector = AudioProjector(embed_dim=32, num_tokens=4, token_dim=16, hidden_channels=8).eval()
        restored = load_projector(save_projector(projector, tmp_path / "p.pt")).eval()
        x = torch.randn(3, 32)
        with torch.no_grad():
            assert torch.allclose(projector(x), restored(x), atol=1e-7)
            assert torch.allclose(null_audio_tokens(projector), null_audio_tokens(restored), atol=1e-7)

    def test_load_missing(self, tmp_path):
        """Test a missing archive raises ArtifactNotFoundError."""
        with pytest.raises(ArtifactNotFoundError):
            load_projector(tmp_path / "missing.pt")

    def test_load_bad_header(self, tmp_path):
        """Test a header with the wrong block count is rejected."""
        projector = AudioProjector(embed_dim=32, num_tokens=4, token_dim=16, hidden_channels=8)
        header = projector.header()
        header["num_blocks"] = 2
        torch.save({"header": header, "state_dict": projector.state_dict()}, tmp_path / "bad.pt")
        with pytest.raises(ConfigurationError):
            load_projector(tmp_path / "bad.pt")
