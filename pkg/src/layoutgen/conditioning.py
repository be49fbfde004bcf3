"""Multimodal conditioning: turn foreground elements and the background image
into token sequences for the networks.

Text strings are embedded by a deterministic character n-gram hashing encoder
so the whole system trains with zero external weights; any drop-in encoder
with the same signature can replace it. Class and length embeddings are
learned dictionaries. Foreground image patches reuse the background encoder
with shared weights, mean-pooled to a single vector.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .elements import TEXT_CLASSES, BackgroundImage, ForegroundSet, ImageElement, TextElement
from .errors import ConfigurationError, ShapeError, ValidationError
from .losses import LENGTH_LEVELS, quantize_text_length


@dataclass(frozen=True)
class EmbedderConfig:
    token_dim: int = 128
    noise_dim: int = 32
    string_dim: int = 64
    class_dim: int = 16
    length_dim: int = 16
    patch_dim: int = 96
    background_patch_size: int = 16
    working_resolution: int = 256
    patch_encode_resolution: int = 64

    def __post_init__(self):
        for name in ("token_dim", "noise_dim", "string_dim", "class_dim", "length_dim", "patch_dim"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        text_total = self.noise_dim + self.string_dim + self.class_dim + self.length_dim
        if text_total != self.token_dim:
            raise ConfigurationError(
                f"text dims {text_total} must sum to token_dim {self.token_dim}"
            )
        if self.noise_dim + self.patch_dim != self.token_dim:
            raise ConfigurationError(
                f"noise_dim + patch_dim = {self.noise_dim + self.patch_dim} "
                f"must equal token_dim {self.token_dim}"
            )
        if self.working_resolution % self.background_patch_size != 0:
            raise ConfigurationError("working_resolution must be divisible by patch size")
        if self.patch_encode_resolution % self.background_patch_size != 0:
            raise ConfigurationError("patch_encode_resolution must be divisible by patch size")


@dataclass
class ForegroundToken:
    vector: torch.Tensor
    modality: str  # "text" | "image"
    element_index: int


@dataclass
class BackgroundTokens:
    tokens: torch.Tensor  # (grid*grid, model_dim), positional encodings added
    grid: int


def embed_text_string(s: str, string_dim: int) -> np.ndarray:
    """Deterministic character n-gram (n=1..3) feature hashing, L2-normalized.

    Case-sensitive; the empty string maps to the zero vector (normalization
    skipped). Stable across processes and platforms (crc32-based buckets).
    """
    vec = np.zeros(string_dim, dtype=np.float64)
    for n in (1, 2, 3):
        for i in range(len(s) - n + 1):
            gram = f"{n}:{s[i:i + n]}".encode("utf-8")
            bucket = zlib.crc32(gram) % string_dim
            sign = 1.0 if zlib.crc32(b"sign/" + gram) & 1 else -1.0
            vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec.astype(np.float32)


def sinusoidal_grid_encoding(grid: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed 2D sin/cos positional encodings for a square token grid."""
    dim_y = dim // 2
    dim_x = dim - dim_y
    out = torch.zeros(grid, grid, dim, dtype=dtype)
    ys = torch.arange(grid, dtype=dtype).unsqueeze(1)
    xs = torch.arange(grid, dtype=dtype).unsqueeze(1)

    def fill(coords, d):
        enc = torch.zeros(grid, d, dtype=dtype)
        div = torch.exp(torch.arange(0, d, 2, dtype=dtype) * (-math.log(10000.0) / max(d, 1)))
        enc[:, 0::2] = torch.sin(coords * div)
        enc[:, 1::2] = torch.cos(coords * div[: enc[:, 1::2].shape[1]])
        return enc

    enc_y = fill(ys, dim_y)
    enc_x = fill(xs, dim_x)
    out[..., :dim_y] = enc_y.unsqueeze(1).expand(grid, grid, dim_y)
    out[..., dim_y:] = enc_x.unsqueeze(0).expand(grid, grid, dim_x)
    return out.reshape(grid * grid, dim)


def image_to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """HxWx3 uint8 -> 3xHxW float in [0, 1]."""
    arr = np.ascontiguousarray(pixels)
    if not arr.flags.writeable:
        arr = arr.copy()  # PIL-backed arrays are read-only
    t = torch.from_numpy(arr).float() / 255.0
    return t.permute(2, 0, 1)


def resize_image_tensor(t: torch.Tensor, size: int) -> torch.Tensor:
    if t.shape[-1] == size and t.shape[-2] == size:
        return t
    return F.interpolate(
        t.unsqueeze(0), size=(size, size), mode="bilinear", align_corners=False
    ).squeeze(0)


class BackgroundEncoder(nn.Module):
    """Patchify + fixed sinusoidal positions + small self-attention encoder.

    Resolution-agnostic: any square image divisible by the patch size yields
    a (res/patch)^2 token sequence, which is what lets foreground patches
    share these weights at a smaller encode resolution.
    """

    def __init__(self, patch_size: int, model_dim: int, depth: int, num_heads: int,
                 ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.patch_size = patch_size
        self.model_dim = model_dim
        self.patch_proj = nn.Linear(3 * patch_size * patch_size, model_dim)
        layer = nn.TransformerEncoderLayer(
            d_model=model_dim, nhead=num_heads, dim_feedforward=ffn_dim,
            dropout=dropout, batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=depth)
        self._pos_cache: dict[int, torch.Tensor] = {}

    def _positions(self, grid: int) -> torch.Tensor:
        if grid not in self._pos_cache:
            self._pos_cache[grid] = sinusoidal_grid_encoding(grid, self.model_dim)
        return self._pos_cache[grid]

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        b, c, hh, ww = images.shape
        p = self.patch_size
        if hh % p or ww % p or hh != ww:
            raise ShapeError(f"encoder needs square images divisible by {p}, got {hh}x{ww}")
        g = hh // p
        x = images.reshape(b, c, g, p, g, p)
        x = x.permute(0, 2, 4, 1, 3, 5).reshape(b, g * g, c * p * p)
        return x

    def forward(self, images: torch.Tensor, add_positions: bool = True) -> torch.Tensor:
        """images: (B, 3, H, W) in [0, 1] -> tokens (B, S, model_dim)."""
        patches = self.patchify(images)
        tokens = self.patch_proj(patches)
        if add_positions:
            grid = int(math.isqrt(tokens.shape[1]))
            tokens = tokens + self._positions(grid).to(tokens.dtype)
        return self.encoder(tokens)


class MultimodalEmbedder(nn.Module):
    """Assembles foreground tokens and background tokens for the generator."""

    def __init__(
        self,
        config: EmbedderConfig,
        model_dim: int,
        encoder_depth: int,
        num_heads: int,
        ffn_dim: int,
        dropout: float = 0.0,
        text_encoder: Optional[Callable[[str], np.ndarray]] = None,
        image_encoder: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ):
        super().__init__()
        self.config = config
        self.class_dict = nn.Embedding(len(TEXT_CLASSES), config.class_dim)
        self.length_dict = nn.Embedding(LENGTH_LEVELS, config.length_dim)
        self.background_encoder = BackgroundEncoder(
            config.background_patch_size, model_dim, encoder_depth, num_heads, ffn_dim, dropout
        )
        self.patch_proj = nn.Linear(model_dim, config.patch_dim)
        self.text_encoder = text_encoder
        self.image_encoder = image_encoder
        self._string_cache: dict[str, torch.Tensor] = {}

    # -- per-modality embeddings -------------------------------------------

    def embed_text_string(self, s: str) -> torch.Tensor:
        if s in self._string_cache:
            return self._string_cache[s]
        if self.text_encoder is not None:
            vec = np.asarray(self.text_encoder(s), dtype=np.float32)
            if vec.shape != (self.config.string_dim,):
                raise ShapeError(
                    f"plug-in text encoder must return ({self.config.string_dim},), got {vec.shape}"
                )
        else:
            vec = embed_text_string(s, self.config.string_dim)
        t = torch.from_numpy(vec)
        if len(self._string_cache) < 4096:
            self._string_cache[s] = t
        return t

    def embed_text_class(self, text_class: str) -> torch.Tensor:
        if text_class not in TEXT_CLASSES:
            raise ValidationError(f"unknown text class {text_class!r}")
        return self.class_dict(torch.tensor(TEXT_CLASSES.index(text_class)))

    def embed_text_length(self, length: int) -> torch.Tensor:
        return self.length_dict(torch.tensor(quantize_text_length(length)))

    def embed_image_patch(self, patch: np.ndarray) -> torch.Tensor:
        if self.image_encoder is not None:
            vec = np.asarray(self.image_encoder(patch), dtype=np.float32)
            if vec.shape != (self.config.patch_dim,):
                raise ShapeError(
                    f"plug-in image encoder must return ({self.config.patch_dim},), got {vec.shape}"
                )
            return torch.from_numpy(vec)
        if patch.size == 0:
            raise ValidationError("empty image patch")
        t = resize_image_tensor(image_to_tensor(patch), self.config.patch_encode_resolution)
        tokens = self.background_encoder(t.unsqueeze(0))
        return self.patch_proj(tokens.mean(dim=1)).squeeze(0)

    # -- token assembly ------------------------------------------------------

    def element_embedding(self, element) -> torch.Tensor:
        if isinstance(element, TextElement):
            return torch.cat(
                [
                    self.embed_text_string(element.string),
                    self.embed_text_class(element.text_class),
                    self.embed_text_length(element.length),
                ]
            )
        if isinstance(element, ImageElement):
            return self.embed_image_patch(element.patch)
        raise ValidationError(f"unsupported element {type(element).__name__}")

    def assemble_foreground_tokens(
        self, fg: ForegroundSet, noise: torch.Tensor
    ) -> list[ForegroundToken]:
        """Token i = concat(noise_i, modality embedding of element i); order preserved."""
        n = len(fg)
        if noise.shape != (n, self.config.noise_dim):
            raise ShapeError(
                f"noise must be ({n}, {self.config.noise_dim}), got {tuple(noise.shape)}"
            )
        tokens = []
        for i, element in enumerate(fg):
            emb = self.element_embedding(element)
            vec = torch.cat([noise[i], emb])
            modality = "text" if isinstance(element, TextElement) else "image"
            tokens.append(ForegroundToken(vector=vec, modality=modality, element_index=i))
        return tokens

    def foreground_matrix(self, fg: ForegroundSet, noise: torch.Tensor) -> torch.Tensor:
        toks = self.assemble_foreground_tokens(fg, noise)
        return torch.stack([t.vector for t in toks]) if toks else torch.zeros((0, self.config.token_dim))

    def encode_background(self, bg: BackgroundImage) -> BackgroundTokens:
        t = resize_image_tensor(image_to_tensor(bg.pixels), self.config.working_resolution)
        tokens = self.background_encoder(t.unsqueeze(0)).squeeze(0)
        grid = self.config.working_resolution // self.config.background_patch_size
        return BackgroundTokens(tokens=tokens, grid=grid)

    def encode_background_batch(self, images: torch.Tensor) -> torch.Tensor:
        """images: (B, 3, R, R) in [0, 1] at the working resolution."""
        return self.background_encoder(images)
