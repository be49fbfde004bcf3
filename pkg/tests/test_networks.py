"""Network forward contracts: shapes, determinism, masking, gradient flow."""

import math

import numpy as np
import pytest
import torch

from layoutgen.conditioning import EmbedderConfig
from layoutgen.elements import BackgroundImage, ForegroundSet, ImageElement, TextElement
from layoutgen.errors import ShapeError, ValidationError
from layoutgen.geometry import Layout, NormalizedBox
from layoutgen.losses import LossWeights, layout_l2_loss
from layoutgen.networks import (
    LatentPosterior,
    ModelBundle,
    NetworkConfig,
    build_bundle,
    load_checkpoint,
    reparameterize,
    save_checkpoint,
)

SMALL_EMB = EmbedderConfig(
    token_dim=32, noise_dim=8, string_dim=12, class_dim=6, length_dim=6,
    patch_dim=24, background_patch_size=16, working_resolution=64,
    patch_encode_resolution=32,
)
SMALL_NET = NetworkConfig(model_dim=32, num_heads=2, encoder_depth=1, decoder_depth=1,
                          ffn_dim=64, max_elements=8, max_chars=16)


@pytest.fixture(scope="module")
def bundle():
    return build_bundle(SMALL_NET, SMALL_EMB, seed=11)


@pytest.fixture(scope="module")
def scene():
    rng = np.random.default_rng(2)
    bg = BackgroundImage(rng.integers(0, 255, (64, 64, 3), dtype=np.uint8))
    fg = ForegroundSet((
        TextElement("Fresh deals", "header"),
        TextElement("every single day", "body"),
        ImageElement(rng.integers(0, 255, (20, 20, 3), dtype=np.uint8)),
        TextElement("Buy now", "button"),
    ))
    return bg, fg


def make_layout(n=4):
    rows = [(0.1 + 0.2 * i, 0.5, 0.12, 0.3) for i in range(n)]
    return Layout(tuple(NormalizedBox(*r) for r in rows))


class TestGenerator:
    def test_shapes_and_range(self, bundle, scene):
        bg, fg = scene
        with torch.no_grad():
            bg_tokens = bundle.embedder.encode_background(bg)
            toks = bundle.embedder.assemble_foreground_tokens(fg, torch.zeros(4, 8))
            out = bundle.generator_forward(bg_tokens, toks)
        assert out.boxes.shape == (4, 4)
        assert (out.boxes >= 0).all() and (out.boxes <= 1).all()
        assert out.last_features.shape == (4, 32)
        lay = out.layout
        assert len(lay) == 4

    def test_empty_foreground_rejected(self, bundle, scene):
        bg, _ = scene
        with torch.no_grad():
            bg_tokens = bundle.embedder.encode_background(bg)
        with pytest.raises(ValidationError):
            bundle.generator_forward(bg_tokens, [])

    def test_deterministic(self, bundle, scene):
        bg, fg = scene
        z = torch.randn(4, 8, generator=torch.Generator().manual_seed(5))
        with torch.no_grad():
            bg_tokens = bundle.embedder.encode_background(bg)
            toks = bundle.embedder.assemble_foreground_tokens(fg, z)
            a = bundle.generator_forward(bg_tokens, toks).boxes
            b = bundle.generator_forward(bg_tokens, toks).boxes
        assert torch.equal(a, b)

    def test_permutation_equivariance(self, bundle, scene):
        bg, fg = scene
        z = torch.randn(4, 8, generator=torch.Generator().manual_seed(9))
        with torch.no_grad():
            bg_tokens = bundle.embedder.encode_background(bg)
            toks = bundle.embedder.assemble_foreground_tokens(fg, z)
            base = bundle.generator_forward(bg_tokens, toks).boxes
            perm = [2, 0, 3, 1]
            permuted = bundle.generator_forward(bg_tokens, [toks[i] for i in perm]).boxes
        assert torch.allclose(permuted, base[perm], atol=1e-5)


class TestCondDiscriminator:
    def test_logit_and_features(self, bundle, scene):
        bg, fg = scene
        lay = make_layout(4)
        with torch.no_grad():
            bg_tokens = bundle.disc_background_tokens(bg)
            toks = bundle.embedder.assemble_foreground_tokens(fg, torch.zeros(4, 8))
            out = bundle.cond_disc_forward(lay, bg_tokens, toks)
        assert torch.isfinite(out.logit)
        assert out.features.shape == (4, 32)

    def test_length_mismatch(self, bundle, scene):
        bg, fg = scene
        with torch.no_grad():
            bg_tokens = bundle.disc_background_tokens(bg)
            toks = bundle.embedder.assemble_foreground_tokens(fg, torch.zeros(4, 8))
        with pytest.raises(ShapeError):
            bundle.cond_disc_forward(make_layout(3), bg_tokens, toks)

    def test_background_sensitivity(self, bundle, scene):
        _, fg = scene
        rng = np.random.default_rng(10)
        bg1 = BackgroundImage(np.zeros((64, 64, 3), dtype=np.uint8))
        bg2 = BackgroundImage(rng.integers(0, 255, (64, 64, 3), dtype=np.uint8))
        lay = make_layout(4)
        with torch.no_grad():
            toks = bundle.embedder.assemble_foreground_tokens(fg, torch.zeros(4, 8))
            l1 = bundle.cond_disc_forward(lay, bundle.disc_background_tokens(bg1), toks).logit
            l2 = bundle.cond_disc_forward(lay, bundle.disc_background_tokens(bg2), toks).logit
        assert float(l1) != pytest.approx(float(l2), abs=1e-6)


class TestUncondDiscriminator:
    def test_shapes(self, bundle):
        lay = make_layout(5)
        with torch.no_grad():
            out = bundle.uncond_disc_forward(lay)
        assert torch.isfinite(out.logit)
        assert out.features.shape == (5, 32)

    def test_layout_sensitivity(self, bundle):
        lay1 = make_layout(3)
        lay2 = lay1.replaced(1, NormalizedBox(0.9, 0.1, 0.05, 0.05))
        with torch.no_grad():
            l1 = bundle.uncond_disc_forward(lay1).logit
            l2 = bundle.uncond_disc_forward(lay2).logit
        assert float(l1) != pytest.approx(float(l2), abs=1e-6)


class TestAuxDecoders:
    def test_cond_decode_shapes(self, bundle, scene):
        _, fg = scene
        feats = torch.randn(4, 32, generator=torch.Generator().manual_seed(3))
        with torch.no_grad():
            boxes, bg_rec, fg_rec = bundle.aux_decode_cond(feats, fg)
        assert boxes.shape == (4, 4)
        assert (boxes >= 0).all() and (boxes <= 1).all()
        assert bg_rec.shape == (3, 32, 32)
        assert len(fg_rec.patches) == 1 and fg_rec.patches[0].shape == (3, 64, 64)
        assert fg_rec.text.class_logits.shape == (3, 4)
        assert fg_rec.text.length_logits.shape == (3, 256)
        assert fg_rec.text.char_logits[0].shape == (len("Fresh deals"), 256)

    def test_cond_decode_deterministic(self, bundle, scene):
        _, fg = scene
        feats = torch.randn(4, 32, generator=torch.Generator().manual_seed(4))
        with torch.no_grad():
            b1, _, _ = bundle.aux_decode_cond(feats, fg)
            b2, _, _ = bundle.aux_decode_cond(feats, fg)
        assert torch.equal(b1, b2)

    def test_uncond_decode(self, bundle):
        feats = torch.randn(6, 32, generator=torch.Generator().manual_seed(6))
        lay = bundle.aux_decode_uncond(feats)
        assert len(lay) == 6

    def test_too_many_slots_rejected(self, bundle):
        feats = torch.randn(9, 32)
        with pytest.raises(ShapeError):
            bundle.aux_decode_uncond(feats)

    def test_gradient_reaches_uncond_positions(self, bundle):
        feats = torch.randn(2, 32, generator=torch.Generator().manual_seed(8))
        bundle.zero_grad()
        boxes = bundle.aux_uncond(feats.unsqueeze(0))
        boxes.sum().backward()
        grad = bundle.aux_uncond.positions.grad
        assert grad is not None
        assert grad[:2].abs().sum() > 0
        assert grad[2:].abs().sum() == 0


class TestLatentEncoder:
    def test_dims(self, bundle):
        post = bundle.latent_encode(make_layout(3))
        assert post.mu.shape == (8,) and post.logvar.shape == (8,)

    def test_deterministic(self, bundle):
        with torch.no_grad():
            p1 = bundle.latent_encode(make_layout(3))
            p2 = bundle.latent_encode(make_layout(3))
        assert torch.equal(p1.mu, p2.mu) and torch.equal(p1.logvar, p2.logvar)

    def test_sensitivity(self, bundle):
        with torch.no_grad():
            p1 = bundle.latent_encode(make_layout(3))
            p2 = bundle.latent_encode(make_layout(4))
        assert not torch.allclose(p1.mu, p2.mu)


class TestReparameterize:
    def test_standard_passthrough(self):
        z0 = torch.tensor([0.3, -1.2])
        out = reparameterize(LatentPosterior(torch.zeros(2), torch.zeros(2)), z0)
        assert torch.equal(out, z0)

    def test_zero_noise_gives_mean(self):
        mu = torch.tensor([0.5, -0.25])
        out = reparameterize(LatentPosterior(mu, torch.randn(2)), torch.zeros(2))
        assert torch.equal(out, mu)

    def test_scale_from_logvar(self):
        out = reparameterize(
            LatentPosterior(torch.zeros(1), torch.tensor([math.log(4.0)])),
            torch.ones(1),
        )
        assert float(out) == pytest.approx(2.0, rel=1e-6)


class TestReconstructor:
    def test_output_shapes(self, bundle, scene):
        _, fg = scene
        feats = torch.randn(4, 32, generator=torch.Generator().manual_seed(12))
        with torch.no_grad():
            rec = bundle.reconstruct_foreground(feats, fg)
        assert len(rec.patches) == 1
        assert rec.text.class_logits.shape == (3, 4)
        assert rec.text.length_logits.shape == (3, 256)

    def test_gradient_flows_to_generator(self, bundle, scene):
        bg, fg = scene
        bundle.zero_grad()
        bg_tokens = bundle.embedder.encode_background(bg)
        toks = bundle.embedder.assemble_foreground_tokens(fg, torch.zeros(4, 8))
        out = bundle.generator_forward(bg_tokens, toks)
        rec = bundle.reconstruct_foreground(out.last_features, fg)
        loss = rec.text.class_logits.sum() + rec.patches[0].sum()
        loss.backward()
        gen_grads = [p.grad for p in bundle.generator.parameters() if p.grad is not None]
        assert gen_grads and any(g.abs().sum() > 0 for g in gen_grads)


class TestMaskingAndBudget:
    def test_pad_invariance(self, bundle, scene):
        bg, fg = scene
        z = torch.randn(4, 8, generator=torch.Generator().manual_seed(21))
        with torch.no_grad():
            mat = bundle.embedder.foreground_matrix(fg, z).unsqueeze(0)
            bg_tokens = bundle.embedder.encode_background(bg).tokens.unsqueeze(0)
            boxes_plain, feats_plain = bundle.generator(mat, bg_tokens)
            padded = torch.cat([mat, torch.zeros(1, 3, 32)], dim=1)
            mask = torch.tensor([[True] * 4 + [False] * 3])
            boxes_padded, feats_padded = bundle.generator(padded, bg_tokens, fg_mask=mask)
        assert torch.allclose(boxes_plain, boxes_padded[:, :4], atol=1e-6)
        assert torch.allclose(feats_plain, feats_padded[:, :4], atol=1e-6)

    def test_pad_invariance_pooled_logit(self, bundle):
        boxes = torch.rand(1, 3, 4, generator=torch.Generator().manual_seed(22))
        with torch.no_grad():
            logit_plain, _ = bundle.disc_uncond(boxes)
            padded = torch.cat([boxes, torch.zeros(1, 2, 4)], dim=1)
            mask = torch.tensor([[True, True, True, False, False]])
            logit_padded, _ = bundle.disc_uncond(padded, fg_mask=mask)
        assert torch.allclose(logit_plain, logit_padded, atol=1e-6)

    def test_default_parameter_budget(self):
        big = build_bundle(NetworkConfig(), EmbedderConfig(), seed=0)
        assert big.parameter_count() < 5_000_000
        assert "parameters:" in big.describe()


class TestCheckpoint:
    def test_round_trip(self, tmp_path, bundle, scene):
        bg, fg = scene
        path = tmp_path / "ckpt.pt"
        save_checkpoint(bundle, path, extra={"step": 3})
        loaded, extra = load_checkpoint(path)
        assert extra == {"step": 3}
        z = torch.randn(4, 8, generator=torch.Generator().manual_seed(2))
        with torch.no_grad():
            toks_a = bundle.embedder.assemble_foreground_tokens(fg, z)
            toks_b = loaded.embedder.assemble_foreground_tokens(fg, z)
            a = bundle.generator_forward(bundle.embedder.encode_background(bg), toks_a).boxes
            b = loaded.generator_forward(loaded.embedder.encode_background(bg), toks_b).boxes
        assert torch.equal(a, b)

    def test_version_check(self, tmp_path, bundle):
        path = tmp_path / "ckpt.pt"
        save_checkpoint(bundle, path)
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = 99
        torch.save(payload, path)
        from layoutgen.errors import ConfigurationError

        with pytest.raises(ConfigurationError):
            load_checkpoint(path)

    def test_same_seed_same_init(self):
        b1 = build_bundle(SMALL_NET, SMALL_EMB, seed=33)
        b2 = build_bundle(SMALL_NET, SMALL_EMB, seed=33)
        for p1, p2 in zip(b1.parameters(), b2.parameters()):
            assert torch.equal(p1, p2)
