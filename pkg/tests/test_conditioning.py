"""Embedding assembly: hashing text encoder, dictionaries, background tokens."""

import numpy as np
import pytest
import torch

from layoutgen.conditioning import (
    BackgroundTokens,
    EmbedderConfig,
    MultimodalEmbedder,
    embed_text_string,
    sinusoidal_grid_encoding,
)
from layoutgen.elements import BackgroundImage, ForegroundSet, ImageElement, TextElement
from layoutgen.errors import ConfigurationError, ShapeError, ValidationError
from layoutgen.losses import quantize_text_length

SMALL = EmbedderConfig(
    token_dim=32, noise_dim=8, string_dim=12, class_dim=6, length_dim=6,
    patch_dim=24, background_patch_size=16, working_resolution=64,
    patch_encode_resolution=32,
)


@pytest.fixture
def embedder():
    torch.manual_seed(7)
    return MultimodalEmbedder(SMALL, model_dim=32, encoder_depth=1, num_heads=2, ffn_dim=64)


def test_config_dim_sums_validated():
    with pytest.raises(ConfigurationError):
        EmbedderConfig(token_dim=128, noise_dim=32, string_dim=64, class_dim=16, length_dim=32)
    with pytest.raises(ConfigurationError):
        EmbedderConfig(working_resolution=250)


class TestStringEmbedding:
    def test_deterministic(self):
        a = embed_text_string("Big Sale Today", 64)
        b = embed_text_string("Big Sale Today", 64)
        assert np.array_equal(a, b)

    def test_empty_string_zero_vector(self):
        assert not embed_text_string("", 64).any()

    def test_case_sensitive(self):
        assert not np.array_equal(embed_text_string("SALE", 64), embed_text_string("sale", 64))

    def test_unit_norm(self):
        v = embed_text_string("hello", 64)
        assert np.linalg.norm(v) == pytest.approx(1.0, rel=1e-5)


class TestClassDictionary:
    def test_distinct_rows(self, embedder):
        h = embedder.embed_text_class("header")
        b = embedder.embed_text_class("body")
        assert not torch.allclose(h, b)

    def test_lookup_stable(self, embedder):
        v1 = embedder.embed_text_class("button")
        v2 = embedder.embed_text_class("button")
        assert torch.equal(v1, v2)

    def test_unknown_class(self, embedder):
        with pytest.raises(ValidationError):
            embedder.embed_text_class("logo")

    def test_gradient_hits_one_row(self, embedder):
        out = embedder.embed_text_class("disclaimer")
        out.sum().backward()
        grad = embedder.class_dict.weight.grad
        nonzero_rows = (grad.abs().sum(dim=1) > 0).nonzero().flatten().tolist()
        assert nonzero_rows == [2]


class TestLengthQuantization:
    @pytest.mark.parametrize("raw,level", [(0, 0), (42, 42), (255, 255), (300, 255)])
    def test_levels(self, raw, level):
        assert quantize_text_length(raw) == level

    def test_dictionary_size(self, embedder):
        assert embedder.length_dict.num_embeddings == 256


class TestPatchEmbedding:
    def test_deterministic(self, embedder):
        patch = (np.arange(24 * 24 * 3) % 255).astype(np.uint8).reshape(24, 24, 3)
        with torch.no_grad():
            v1 = embedder.embed_image_patch(patch)
            v2 = embedder.embed_image_patch(patch)
        assert torch.equal(v1, v2)

    def test_all_zero_image_finite(self, embedder):
        with torch.no_grad():
            v = embedder.embed_image_patch(np.zeros((10, 10, 3), dtype=np.uint8))
        assert torch.isfinite(v).all()

    @pytest.mark.parametrize("size", [(8, 8), (33, 17), (128, 256)])
    def test_output_dim_any_input_size(self, embedder, size):
        patch = np.zeros((*size, 3), dtype=np.uint8)
        with torch.no_grad():
            v = embedder.embed_image_patch(patch)
        assert v.shape == (SMALL.patch_dim,)


def make_foreground():
    patch = np.full((12, 12, 3), 80, dtype=np.uint8)
    return ForegroundSet((
        TextElement("Spring Sale", "header"),
        TextElement("Up to 50% off", "body"),
        ImageElement(patch),
    ))


class TestTokenAssembly:
    def test_empty_foreground(self, embedder):
        toks = embedder.assemble_foreground_tokens(ForegroundSet(()), torch.zeros((0, 8)))
        assert toks == []

    def test_order_and_modalities(self, embedder):
        fg = make_foreground()
        toks = embedder.assemble_foreground_tokens(fg, torch.zeros((3, 8)))
        assert [t.modality for t in toks] == ["text", "text", "image"]
        assert [t.element_index for t in toks] == [0, 1, 2]
        assert all(t.vector.shape == (32,) for t in toks)

    def test_noise_occupies_leading_slice(self, embedder):
        fg = make_foreground()
        z = torch.randn(3, 8)
        with torch.no_grad():
            a = embedder.foreground_matrix(fg, torch.zeros((3, 8)))
            b = embedder.foreground_matrix(fg, z)
        assert torch.allclose(a[:, 8:], b[:, 8:])
        assert torch.allclose(b[:, :8], z)

    def test_noise_length_mismatch(self, embedder):
        with pytest.raises(ShapeError):
            embedder.assemble_foreground_tokens(make_foreground(), torch.zeros((2, 8)))

    def test_zeroing_class_dict_touches_only_class_dims(self, embedder):
        fg = ForegroundSet((TextElement("hello", "body"),))
        with torch.no_grad():
            before = embedder.foreground_matrix(fg, torch.zeros((1, 8)))
            embedder.class_dict.weight.zero_()
            after = embedder.foreground_matrix(fg, torch.zeros((1, 8)))
        # token layout: [noise 8 | string 12 | class 6 | length 6]
        changed = (before != after).squeeze(0)
        assert not changed[:20].any()
        assert not changed[26:].any()

    def test_tokens_finite_for_valid_inputs(self, embedder):
        fg = make_foreground()
        with torch.no_grad():
            mat = embedder.foreground_matrix(fg, torch.randn(3, 8))
        assert torch.isfinite(mat).all()


class TestBackgroundEncoding:
    def test_token_count(self, embedder):
        bg = BackgroundImage(np.zeros((100, 160, 3), dtype=np.uint8))
        with torch.no_grad():
            toks = embedder.encode_background(bg)
        assert isinstance(toks, BackgroundTokens)
        assert toks.tokens.shape == ((64 // 16) ** 2, 32)

    def test_default_config_grid(self):
        torch.manual_seed(0)
        emb = MultimodalEmbedder(EmbedderConfig(), model_dim=64, encoder_depth=1, num_heads=2, ffn_dim=64)
        bg = BackgroundImage(np.zeros((256, 256, 3), dtype=np.uint8))
        with torch.no_grad():
            toks = emb.encode_background(bg)
        assert toks.tokens.shape[0] == 256

    def test_deterministic(self, embedder):
        rng = np.random.default_rng(3)
        bg = BackgroundImage(rng.integers(0, 255, (64, 64, 3), dtype=np.uint8))
        with torch.no_grad():
            t1 = embedder.encode_background(bg).tokens
            t2 = embedder.encode_background(bg).tokens
        assert torch.equal(t1, t2)

    def test_positional_encodings_break_permutation_equivariance(self, embedder):
        rng = np.random.default_rng(5)
        img = rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)
        swapped = img.copy()
        swapped[0:16, 0:16], swapped[16:32, 0:16] = img[16:32, 0:16].copy(), img[0:16, 0:16].copy()
        enc = embedder.background_encoder
        from layoutgen.conditioning import image_to_tensor

        t1 = image_to_tensor(img).unsqueeze(0)
        t2 = image_to_tensor(swapped).unsqueeze(0)
        # patch row order for the swap: tokens 0 and 4 exchange (grid width 4)
        perm = list(range(16))
        perm[0], perm[4] = 4, 0
        with torch.no_grad():
            no_pe_1 = enc(t1, add_positions=False).squeeze(0)
            no_pe_2 = enc(t2, add_positions=False).squeeze(0)
            pe_1 = enc(t1).squeeze(0)
            pe_2 = enc(t2).squeeze(0)
        assert torch.allclose(no_pe_2, no_pe_1[perm], atol=1e-5)
        assert not torch.allclose(pe_2, pe_1[perm], atol=1e-3)


def test_sinusoidal_encoding_shape_and_determinism():
    e1 = sinusoidal_grid_encoding(4, 32)
    e2 = sinusoidal_grid_encoding(4, 32)
    assert e1.shape == (16, 32)
    assert torch.equal(e1, e2)
    # distinct grid cells get distinct encodings
    assert len({tuple(r.tolist()) for r in e1}) == 16
