import math

import numpy as np
import pytest
import torch

from vltextdet.head import (
    GroundTruthMask,
    ProjectedFeatures,
    Projector,
    SimilarityMap,
    contrastive_loss,
    contrastive_loss_from_logits,
    downsample_mask,
    pixel_logits,
    similarity_map,
    similarity_probs,
)


def make_pf(pixel, text, grid_hw):
    return ProjectedFeatures(pixel=pixel, text=text, grid_hw=grid_hw)


# --- projector ------------------------------------------------------------

def test_zero_weights_give_zero_embeddings():
    proj = Projector(6, 5, embed_dim=4)
    with torch.no_grad():
        for lin in (proj.pixel_proj, proj.text_proj):
            lin.weight.zero_()
            lin.bias.zero_()
    pf = proj(torch.randn(1, 4, 6), (2, 2), torch.randn(5))
    assert torch.equal(pf.pixel, torch.zeros(1, 4, 4))
    assert torch.equal(pf.text, torch.zeros(4))


def test_identity_pixel_projection_passes_features_through():
    proj = Projector(4, 4, embed_dim=4)
    with torch.no_grad():
        proj.pixel_proj.weight.copy_(torch.eye(4))
        proj.pixel_proj.bias.zero_()
    fc = torch.randn(1, 6, 4)
    pf = proj(fc, (2, 3), torch.randn(4))
    assert torch.allclose(pf.pixel, fc, atol=1e-6)


def test_projection_matches_matmul_oracle():
    proj = Projector(5, 3, embed_dim=4).double()
    fc = torch.randn(2, 6, 5, dtype=torch.float64)
    sent = torch.randn(3, dtype=torch.float64)
    pf = proj(fc, (2, 3), sent)
    w = proj.pixel_proj.weight.detach().numpy()
    b = proj.pixel_proj.bias.detach().numpy()
    expected = fc.numpy() @ w.T + b
    assert np.abs(pf.pixel.detach().numpy() - expected).max() <= 1e-6
    wt = proj.text_proj.weight.detach().numpy()
    bt = proj.text_proj.bias.detach().numpy()
    assert np.abs(pf.text.detach().numpy() - (wt @ sent.numpy() + bt)).max() <= 1e-6


def test_projector_upsamples_the_pixel_grid():
    proj = Projector(4, 3, embed_dim=2, upsample_factor=2)
    pf = proj(torch.randn(1, 4, 4), (2, 2), torch.randn(3))
    assert pf.grid_hw == (4, 4)
    assert pf.pixel.shape == (1, 16, 2)


def test_projector_rejects_grid_mismatch():
    proj = Projector(4, 3, embed_dim=2)
    with pytest.raises(ValueError):
        proj(torch.randn(1, 5, 4), (2, 3), torch.randn(3))


# --- similarity -----------------------------------------------------------

def test_zero_text_embedding_gives_half_everywhere():
    pf = make_pf(torch.randn(1, 4, 3), torch.zeros(3), (2, 2))
    probs = similarity_probs(pf)
    assert torch.allclose(probs, torch.full((1, 2, 2), 0.5), atol=1e-7)


def test_matching_pixel_with_norm_ln3_scores_three_quarters():
    # sigmoid(||z_t||^2) = 0.75 exactly when ||z_t||^2 = ln 3.
    z_t = torch.zeros(4, dtype=torch.float64)
    z_t[0] = math.sqrt(math.log(3.0))
    pixel = torch.zeros(1, 2, 4, dtype=torch.float64)
    pixel[0, 0] = z_t
    pf = make_pf(pixel, z_t, (1, 2))
    probs = similarity_probs(pf)
    assert abs(probs[0, 0, 0].item() - 0.75) <= 1e-12
    assert abs(probs[0, 0, 1].item() - 0.5) <= 1e-12


def test_similarity_matches_dot_product_loop():
    pixel = torch.randn(1, 6, 4, dtype=torch.float64)
    text = torch.randn(4, dtype=torch.float64)
    pf = make_pf(pixel, text, (2, 3))
    probs = similarity_probs(pf)[0].numpy()
    for r in range(2):
        for c in range(3):
            dot = sum(pixel[0, r * 3 + c, k].item() * text[k].item()
                      for k in range(4))
            expected = 1.0 / (1.0 + math.exp(-dot))
            assert abs(probs[r, c] - expected) <= 1e-6


def test_similarity_map_upsamples_and_stays_in_range():
    pixel = torch.randn(1, 4, 3) * 5
    pf = make_pf(pixel, torch.randn(3), (2, 2))
    sim = similarity_map(pf, (8, 8))
    assert sim.probabilities.shape == (8, 8)
    assert sim.probabilities.min() >= 0 and sim.probabilities.max() <= 1


def test_similarity_map_requires_single_sample():
    pf = make_pf(torch.randn(2, 4, 3), torch.randn(3), (2, 2))
    with pytest.raises(ValueError):
        similarity_map(pf, (8, 8))


def test_similarity_map_validates_contents():
    with pytest.raises(ValueError):
        SimilarityMap(probabilities=np.full((2, 2), 1.5))
    with pytest.raises(ValueError):
        SimilarityMap(probabilities=np.zeros(4))


# --- mask downsampling ----------------------------------------------------

def test_downsample_majority_rule_at_the_boundary():
    pos = np.zeros((4, 4), dtype=bool)
    pos[:2, :] = True                     # exactly half of the block
    gt = GroundTruthMask(positive=pos, ignore=np.zeros((4, 4), dtype=bool))
    p, i = downsample_mask(gt, 4)
    assert p.shape == (1, 1)
    assert bool(p[0, 0])                  # >= 0.5 counts as positive
    pos2 = pos.copy()
    pos2[1, 3] = False                    # 7/16 < 0.5
    gt2 = GroundTruthMask(positive=pos2, ignore=np.zeros((4, 4), dtype=bool))
    p2, _ = downsample_mask(gt2, 4)
    assert not bool(p2[0, 0])


def test_downsample_any_ignored_pixel_marks_the_cell():
    ign = np.zeros((4, 4), dtype=bool)
    ign[3, 3] = True
    gt = GroundTruthMask(positive=np.zeros((4, 4), dtype=bool), ignore=ign)
    _, i = downsample_mask(gt, 4)
    assert bool(i[0, 0])


def test_downsample_matches_block_loop_oracle():
    rng = np.random.default_rng(17)
    pos = rng.random((8, 12)) < 0.4
    ign = (rng.random((8, 12)) < 0.2) & ~pos
    gt = GroundTruthMask(positive=pos, ignore=ign)
    p, i = downsample_mask(gt, 4)
    for r in range(2):
        for c in range(3):
            block_p = pos[r * 4:(r + 1) * 4, c * 4:(c + 1) * 4]
            block_i = ign[r * 4:(r + 1) * 4, c * 4:(c + 1) * 4]
            assert bool(p[r, c]) == (block_p.mean() >= 0.5)
            assert bool(i[r, c]) == bool(block_i.any())


def test_downsample_rejects_non_divisible_mask():
    gt = GroundTruthMask(positive=np.zeros((5, 5), dtype=bool),
                         ignore=np.zeros((5, 5), dtype=bool))
    with pytest.raises(ValueError):
        downsample_mask(gt, 4)


def test_ground_truth_mask_rejects_overlap():
    a = np.ones((2, 2), dtype=bool)
    with pytest.raises(ValueError):
        GroundTruthMask(positive=a, ignore=a)


# --- contrastive loss -----------------------------------------------------

def test_zero_logits_loss_is_ln2():
    logits = torch.zeros(2, 2, dtype=torch.float64)
    pos = torch.tensor([[True, False], [True, False]])
    ign = torch.zeros(2, 2, dtype=torch.bool)
    loss = contrastive_loss_from_logits(logits, pos, ign)
    assert abs(loss.item() - math.log(2.0)) <= 1e-9


def test_saturated_logits_loss_vanishes():
    logits = torch.tensor([[20.0, -20.0]], dtype=torch.float64)
    pos = torch.tensor([[True, False]])
    ign = torch.zeros(1, 2, dtype=torch.bool)
    loss = contrastive_loss_from_logits(logits, pos, ign)
    assert loss.item() <= 1e-8


def test_hand_computed_two_by_two_grid():
    # logits (1.0, -1.0, 0.5, -0.5) row-major; positives at cells 0 and 2.
    logits = torch.tensor([[1.0, -1.0], [0.5, -0.5]], dtype=torch.float64)
    pos = torch.tensor([[True, False], [True, False]])
    ign = torch.zeros(2, 2, dtype=torch.bool)
    loss = contrastive_loss_from_logits(logits, pos, ign)

    def sigmoid(z):
        return 1.0 / (1.0 + math.exp(-z))

    expected = (-math.log(sigmoid(1.0))
                - math.log(1.0 - sigmoid(-1.0))
                - math.log(sigmoid(0.5))
                - math.log(1.0 - sigmoid(-0.5))) / 4.0
    assert abs(loss.item() - expected) <= 1e-12


def test_label_flip_with_negated_logits_is_symmetric():
    gen = torch.Generator().manual_seed(23)
    logits = torch.randn(3, 4, dtype=torch.float64, generator=gen)
    pos = torch.rand(3, 4, generator=gen) < 0.5
    ign = torch.zeros(3, 4, dtype=torch.bool)
    a = contrastive_loss_from_logits(logits, pos, ign)
    b = contrastive_loss_from_logits(-logits, ~pos, ign)
    assert abs(a.item() - b.item()) <= 1e-12


def test_loss_is_positive_off_saturation():
    gen = torch.Generator().manual_seed(29)
    logits = torch.randn(4, 4, dtype=torch.float64, generator=gen)
    pos = torch.rand(4, 4, generator=gen) < 0.5
    ign = torch.zeros(4, 4, dtype=torch.bool)
    assert contrastive_loss_from_logits(logits, pos, ign).item() > 0


def test_sum_reduction_is_mean_times_count():
    gen = torch.Generator().manual_seed(31)
    logits = torch.randn(2, 6, dtype=torch.float64, generator=gen)
    pos = torch.rand(2, 6, generator=gen) < 0.5
    ign = torch.rand(2, 6, generator=gen) < 0.25
    ign &= ~pos
    count = int((~ign).sum())
    mean = contrastive_loss_from_logits(logits, pos, ign, reduction="mean")
    total = contrastive_loss_from_logits(logits, pos, ign, reduction="sum")
    assert abs(total.item() - mean.item() * count) <= 1e-9
    with pytest.raises(ValueError):
        contrastive_loss_from_logits(logits, pos, ign, reduction="max")


def test_ignored_pixels_cannot_move_the_loss_or_gradient():
    logits = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    pos = torch.tensor([[True, False, True, False]] * 2)
    ign = torch.tensor([[False, True, False, False]] * 2)
    loss = contrastive_loss_from_logits(logits, pos, ign)
    loss.backward()
    assert torch.equal(logits.grad[ign], torch.zeros(2, dtype=torch.float64))
    with torch.no_grad():
        bumped = logits.detach().clone()
        bumped[ign] += 123.0
    loss2 = contrastive_loss_from_logits(bumped, pos, ign)
    assert loss2.item() == loss.item()


def test_all_ignored_raises():
    logits = torch.zeros(1, 4)
    pos = torch.zeros(1, 4, dtype=torch.bool)
    ign = torch.ones(1, 4, dtype=torch.bool)
    with pytest.raises(ValueError):
        contrastive_loss_from_logits(logits, pos, ign)


def test_full_sample_loss_infers_the_stride():
    proj = Projector(4, 3, embed_dim=2).double()
    pf = proj(torch.randn(1, 16, 4, dtype=torch.float64), (4, 4),
              torch.randn(3, dtype=torch.float64))
    pos = np.zeros((16, 16), dtype=bool)
    pos[:8, :] = True
    gt = GroundTruthMask(positive=pos, ignore=np.zeros((16, 16), dtype=bool))
    loss = contrastive_loss(pf, gt)
    assert loss.ndim == 0 and loss.item() > 0
    bad = GroundTruthMask(positive=np.zeros((15, 16), dtype=bool),
                          ignore=np.zeros((15, 16), dtype=bool))
    with pytest.raises(ValueError):
        contrastive_loss(pf, bad)


def test_loss_gradients_match_finite_differences():
    gen = torch.Generator().manual_seed(37)
    pixel = torch.randn(1, 8, 3, dtype=torch.float64, generator=gen)
    text = torch.randn(3, dtype=torch.float64, generator=gen,
                       requires_grad=True)
    pixel.requires_grad_(True)
    pos = np.zeros((8, 16), dtype=bool)
    pos[:4, :8] = True
    ign = np.zeros((8, 16), dtype=bool)
    ign[7, 12] = True
    gt = GroundTruthMask(positive=pos, ignore=ign)

    def value(px, tx):
        pf = make_pf(px, tx, (2, 4))
        return contrastive_loss(pf, gt, pos_threshold=0.5)

    loss = value(pixel, text)
    loss.backward()
    step = 1e-5
    for k in range(3):
        with torch.no_grad():
            t_up = text.detach().clone()
            t_up[k] += step
            t_dn = text.detach().clone()
            t_dn[k] -= step
        fd = (value(pixel.detach(), t_up).item()
              - value(pixel.detach(), t_dn).item()) / (2 * step)
        auto = text.grad[k].item()
        assert abs(fd - auto) / max(abs(fd), abs(auto), 1e-8) <= 1e-4
    for (i, j) in [(0, 0), (3, 2), (5, 1)]:
        with torch.no_grad():
            p_up = pixel.detach().clone()
            p_up[0, i, j] += step
            p_dn = pixel.detach().clone()
            p_dn[0, i, j] -= step
        fd = (value(p_up, text.detach()).item()
              - value(p_dn, text.detach()).item()) / (2 * step)
        auto = pixel.grad[0, i, j].item()
        assert abs(fd - auto) / max(abs(fd), abs(auto), 1e-8) <= 1e-4
