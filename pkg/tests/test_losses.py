"""Unit tests for the training objectives."""

import math
from decimal import Decimal, getcontext

import pytest
import torch
from torch.autograd import gradcheck

from src.audio.projector import AudioProjector
from src.diffusion.schedule import NoiseSchedule, add_noise
from src.losses.objectives import (
    LossWeights,
    Stage1Batch,
    contrastive_alignment_loss,
    ddpm_loss,
    infonce_loss,
    infonce_per_token,
    mse_token_loss,
    stage1_loss,
    token_weight,
    token_weights,
)
from src.utils.validation_utils import ArgumentError

GRADCHECK = dict(eps=1e-3, atol=1e-6, rtol=1e-4)


def random_batch(b=2, n=2, k=2, c=3, seed=0, requires_grad=False):
    g = torch.Generator().manual_seed(seed)

    def draw(*shape):
        return torch.randn(*shape, generator=g, dtype=torch.float64).requires_grad_(requires_grad)

    return draw(b, k, c), draw(b, k, c), draw(b, n, k, c), draw(b, k, c)


class TestTokenWeights:
    """Tests for the reverse-sigmoid token weighting."""

    def test_matches_high_precision(self):
        """Test weights agree with a 50-digit evaluation within 1e-9."""
        getcontext().prec = 50
        weights = token_weights(77, 5.0, dtype=torch.float64)
        for i in range(1, 78):
            t = Decimal(5)
            exact = t / (t + (Decimal(i) / t).exp())
            assert abs(weights[i - 1].item() - float(exact)) < 1e-9

    def test_strictly_decreasing(self):
        """Test weights strictly decrease over K = 77 positions."""
        weights = token_weights(77, 5.0, dtype=torch.float64)
        assert bool((weights[1:] < weights[:-1]).all())

    def test_uniform(self):
        """Test uniform weighting gives 1/K."""
        assert torch.allclose(token_weights(4, weighting="uniform"), torch.full((4,), 0.25))

    def test_one_based_index(self):
        """Test index 0 is rejected."""
        with pytest.raises(ArgumentError):
            token_weight(0, 5.0)


class TestInfoNCE:
    """Tests for the per-token InfoNCE term."""

    def test_equal_similarities_give_log_n_plus_one(self):
        """Test identical tokens with three negatives give ln 4 per token."""
        anchor = torch.ones(1, 2, 3, dtype=torch.float64)
        loss = infonce_per_token(anchor, anchor.clone(), anchor.unsqueeze(1).repeat(1, 3, 1, 1))
        assert torch.allclose(loss, torch.full((1, 2), math.log(4.0), dtype=torch.float64), atol=1e-9)

    def test_needs_a_negative(self):
        """Test zero negatives raise."""
        anchor = torch.ones(1, 2, 3)
        with pytest.raises(ArgumentError):
            infonce_per_token(anchor, anchor, torch.ones(1, 0, 2, 3))

    def test_shape_mismatch(self):
        """Test anchor/positive shape mismatch raises."""
        with pytest.raises(ArgumentError):
            infonce_per_token(torch.ones(1, 2, 3), torch.ones(1, 3, 3), torch.ones(1, 1, 2, 3))

    def test_closer_positive_lowers_loss(self):
        """Test moving the positive onto the anchor reduces the loss."""
        anchor, positive, negatives, text = random_batch()
        far = infonce_loss(Stage1Batch(anchor, positive, negatives, text))
        near = infonce_loss(Stage1Batch(anchor, anchor * 3.0, negatives, text))
        assert near < far

    def test_gradcheck_anchor(self):
        """Test the token-weighted InfoNCE gradient w.r.t. the anchor."""
        anchor, positive, negatives, text = random_batch(b=1, requires_grad=False)
        anchor.requires_grad_(True)
        assert gradcheck(lambda a: infonce_loss(Stage1Batch(a, positive, negatives, text)), (anchor,), **GRADCHECK)

    def test_gradcheck_cosine_clip_reduction(self):
        """Test the cosine / clip-level variant also passes gradcheck."""
        anchor, positive, negatives, text = random_batch(b=1)
        negatives.requires_grad_(True)
        assert gradcheck(
            lambda n: infonce_loss(Stage1Batch(anchor, positive, n, text), similarity="cosine", reduction="clip"),
            (negatives,),
            **GRADCHECK,
        )


class TestMseTokenLoss:
    """Tests for the weighted MSE term."""

    def test_zero_for_identical_tokens(self):
        """Test identical audio and text tokens give zero."""
        tokens = torch.randn(2, 4, 3)
        assert mse_token_loss(tokens, tokens.clone()).item() == 0.0

    def test_weighted_value(self):
        """Test a hand-computed value with K = 2."""
        c_audio = torch.zeros(1, 2, 1, dtype=torch.float64)
        c_text = torch.tensor([[[1.0], [2.0]]], dtype=torch.float64)
        expected = token_weight(1, 5.0) * 1.0 + token_weight(2, 5.0) * 4.0
        assert mse_token_loss(c_audio, c_text).item() == pytest.approx(expected, abs=1e-12)

    def test_gradcheck(self):
        """Test the MSE term gradient."""
        anchor, _, _, text = random_batch(b=1)
        anchor.requires_grad_(True)
        assert gradcheck(lambda a: mse_token_loss(a, text), (anchor,), **GRADCHECK)


class TestStage1Loss:
    """Tests for the combined stage-1 objective."""

    def test_weights_combine_terms(self):
        """Test total = a1 * infonce + a2 * mse."""
        batch = Stage1Batch(*random_batch())
        only_contrastive = stage1_loss(batch, LossWeights(1.0, 0.0))
        only_mse = stage1_loss(batch, LossWeights(0.0, 1.0))
        both = stage1_loss(batch, LossWeights(2.0, 0.5))
        assert both.item() == pytest.approx(2.0 * only_contrastive.item() + 0.5 * only_mse.item(), rel=1e-9)

    def test_negative_weights_rejected(self):
        """Test negative loss weights raise."""
        with pytest.raises(ArgumentError):
            LossWeights(contrastive=-1.0)

    def test_gradcheck(self):
        """Test the combined loss gradient w.r.t. the anchor."""
        anchor, positive, negatives, text = random_batch(b=1)
        anchor.requires_grad_(True)
        assert gradcheck(
            lambda a: stage1_loss(Stage1Batch(a, positive, negatives, text)), (anchor,), **GRADCHECK
        )

    def test_decreases_on_a_fixed_batch(self):
        """Test 50 small gradient steps on one batch lower the loss at every step."""
        torch.manual_seed(0)
        projector = AudioProjector(embed_dim=16, num_tokens=4, token_dim=8, hidden_channels=8).double().eval()
        g = torch.Generator().manual_seed(1)
        anchor_emb, positive_emb = torch.randn(2, 3, 16, generator=g, dtype=torch.float64)
        negative_emb = torch.randn(6, 16, generator=g, dtype=torch.float64)
        text = torch.randn(3, 4, 8, generator=g, dtype=torch.float64)
        optimizer = torch.optim.SGD(projector.parameters(), lr=1e-4)

        losses = []
        for _ in range(50):
            batch = Stage1Batch(
                anchor=projector(anchor_emb),
                positive=projector(positive_emb),
                negatives=projector(negative_emb).view(3, 2, 4, 8),
                text=text,
            )
            loss = stage1_loss(batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        assert all(later < earlier for earlier, later in zip(losses, losses[1:]))


class TestDdpmLoss:
    """Tests for the conditioned denoising loss."""

    def test_exact_noise_oracle_gives_zero(self):
        """Test a model returning the injected noise scores zero."""
        schedule = NoiseSchedule.linear(10)
        z0 = torch.randn(2, 3, 4, 4)
        noise = torch.randn(2, 3, 4, 4)
        assert ddpm_loss(lambda z, t, c: noise, z0, 5, None, noise, schedule).item() == 0.0

    def test_per_sample_sum(self):
        """Test a zero model gives the per-sample squared noise norm averaged."""
        schedule = NoiseSchedule.linear(10)
        noise = torch.ones(2, 1, 2, 2)
        loss = ddpm_loss(lambda z, t, c: torch.zeros_like(z), torch.zeros_like(noise), 3, None, noise, schedule)
        assert loss.item() == pytest.approx(4.0)

    def test_timestep_range(self):
        """Test a timestep outside [0, T) raises."""
        schedule = NoiseSchedule.linear(10)
        z0 = torch.zeros(1, 1, 2, 2)
        with pytest.raises(ArgumentError):
            ddpm_loss(lambda z, t, c: z, z0, 10, None, z0, schedule)

    def test_gradcheck_through_linear_model(self):
        """Test the gradient w.r.t. a small linear denoiser's weights."""
        schedule = NoiseSchedule.linear(10)
        g = torch.Generator().manual_seed(0)
        z0 = torch.randn(2, 4, generator=g, dtype=torch.float64)
        noise = torch.randn(2, 4, generator=g, dtype=torch.float64)
        c_audio = torch.randn(2, 4, generator=g, dtype=torch.float64)
        weight = torch.randn(4, 4, generator=g, dtype=torch.float64, requires_grad=True)
        t = torch.tensor([2, 7])

        def loss(w):
            return ddpm_loss(lambda z, tt, c: z @ w + c, z0, t, c_audio, noise, schedule)

        assert gradcheck(loss, (weight,), **GRADCHECK)

    def test_matches_forward_process(self):
        """Test the loss uses z_t from add_noise."""
        schedule = NoiseSchedule.linear(10)
        z0, noise = torch.randn(1, 1, 2, 2), torch.randn(1, 1, 2, 2)
        seen = {}

        def model(z, t, c):
            seen["z"] = z
            return torch.zeros_like(z)

        ddpm_loss(model, z0, 4, None, noise, schedule)
        assert torch.allclose(seen["z"], add_noise(z0, torch.tensor([4]), noise, schedule))


class TestContrastiveAlignment:
    """Tests for the symmetric loss used by the evaluation embedder."""

    def test_aligned_pairs_score_lower(self):
        """Test matched pairs give lower loss than shuffled ones."""
        a = torch.eye(4)
        assert contrastive_alignment_loss(a, a) < contrastive_alignment_loss(a, a.flip(0))

    def test_label_positives(self):
        """Test same-label pairs count as positives."""
        a = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        labels = torch.tensor([0, 0, 1])
        assert contrastive_alignment_loss(a, a, labels=labels) < contrastive_alignment_loss(a, a)

    def test_batch_mismatch(self):
        """Test differing batch sizes raise."""
        with pytest.raises(ArgumentError):
            contrastive_alignment_loss(torch.ones(2, 3), torch.ones(3, 3))
