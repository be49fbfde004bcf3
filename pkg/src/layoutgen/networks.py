"""The seven desk-scale networks: generator, the two discriminators, their
auxiliary decoders with learnable positional embeddings, the layout latent
encoder, and the generator-side foreground reconstructor.

All forward passes are deterministic given weights and inputs; sampling stays
with the caller. Variable element counts are handled by key-padding masks so
padded slots never influence real positions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .conditioning import (
    BackgroundEncoder,
    BackgroundTokens,
    EmbedderConfig,
    ForegroundToken,
    MultimodalEmbedder,
    image_to_tensor,
    resize_image_tensor,
)
from .elements import BackgroundImage, ForegroundSet, ImageElement, TextElement
from .errors import ConfigurationError, ShapeError, ValidationError
from .losses import CHAR_VOCAB, LENGTH_LEVELS, NUM_CLASSES, ForegroundRecon, LossWeights, TextRecon
from .geometry import Layout

CHECKPOINT_FORMAT_VERSION = 1
BG_RECON_RES = 32
PATCH_RECON_RES = 64


@dataclass(frozen=True)
class NetworkConfig:
    model_dim: int = 128
    num_heads: int = 4
    encoder_depth: int = 2
    decoder_depth: int = 2
    dropout: float = 0.0
    ffn_dim: int = 256
    max_elements: int = 16
    max_chars: int = 48

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"model_dim {self.model_dim} must be divisible by num_heads {self.num_heads}"
            )
        for name in ("model_dim", "num_heads", "encoder_depth", "decoder_depth", "ffn_dim", "max_elements"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")


@dataclass
class GeneratorOutput:
    boxes: torch.Tensor  # (N, 4) or (B, N, 4), squashed into [0, 1]
    last_features: torch.Tensor  # matching (., N, model_dim)

    @property
    def layout(self) -> Layout:
        if self.boxes.ndim != 2:
            raise ShapeError("layout property is defined for single-sample outputs")
        return Layout.from_tensor(self.boxes.detach().double())


@dataclass
class DiscriminatorOutput:
    logit: torch.Tensor  # scalar or (B,)
    features: torch.Tensor  # (N, D) or (B, N, D)


@dataclass
class LatentPosterior:
    mu: torch.Tensor
    logvar: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise ShapeError("mu and logvar must have equal shape")


def reparameterize(posterior: LatentPosterior, z0: torch.Tensor) -> torch.Tensor:
    """Differentiable draw: mu + exp(logvar / 2) * z0."""
    if z0.shape != posterior.mu.shape:
        raise ShapeError(f"z0 shape {tuple(z0.shape)} != mu shape {tuple(posterior.mu.shape)}")
    return posterior.mu + torch.exp(0.5 * posterior.logvar) * z0


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.to(x.dtype).unsqueeze(-1)
    return (x * m).sum(dim=-2) / m.sum(dim=-2).clamp(min=1.0)


def _self_encoder(cfg: NetworkConfig, depth: Optional[int] = None) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=cfg.model_dim, nhead=cfg.num_heads, dim_feedforward=cfg.ffn_dim,
        dropout=cfg.dropout, batch_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers=depth or cfg.decoder_depth, enable_nested_tensor=False)


def _cross_decoder(cfg: NetworkConfig) -> nn.TransformerDecoder:
    layer = nn.TransformerDecoderLayer(
        d_model=cfg.model_dim, nhead=cfg.num_heads, dim_feedforward=cfg.ffn_dim,
        dropout=cfg.dropout, batch_first=True,
    )
    return nn.TransformerDecoder(layer, num_layers=cfg.decoder_depth)


def _mlp_head(dim: int, out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, out))


class GeneratorNet(nn.Module):
    """Foreground tokens self-attend and cross-attend to background tokens,
    then a squashed 4-way head emits box parameters. Foreground tokens carry
    no positional encoding: queries are content-addressed."""

    def __init__(self, net_cfg: NetworkConfig, token_dim: int):
        super().__init__()
        self.input_proj = nn.Linear(token_dim, net_cfg.model_dim)
        self.decoder = _cross_decoder(net_cfg)
        self.box_head = _mlp_head(net_cfg.model_dim, 4)

    def forward(self, fg_tokens: torch.Tensor, bg_tokens: torch.Tensor,
                fg_mask: Optional[torch.Tensor] = None):
        if fg_tokens.ndim != 3 or fg_tokens.shape[1] == 0:
            raise ValidationError("generator needs at least one foreground token")
        x = self.input_proj(fg_tokens)
        pad = None if fg_mask is None else ~fg_mask.bool()
        h = self.decoder(x, bg_tokens, tgt_key_padding_mask=pad)
        boxes = torch.sigmoid(self.box_head(h))
        return boxes, h


class CondDiscriminatorNet(nn.Module):
    """Judges (layout, background, foreground) jointly: box parameters are
    projected and fused with the foreground tokens, then cross-attend to the
    discriminator's own background encoding."""

    def __init__(self, net_cfg: NetworkConfig, emb_cfg: EmbedderConfig):
        super().__init__()
        self.background_encoder = BackgroundEncoder(
            emb_cfg.background_patch_size, net_cfg.model_dim, net_cfg.encoder_depth,
            net_cfg.num_heads, net_cfg.ffn_dim, net_cfg.dropout,
        )
        self.box_proj = nn.Linear(4, net_cfg.model_dim)
        self.token_proj = nn.Linear(emb_cfg.token_dim, net_cfg.model_dim)
        self.fuse = nn.Linear(2 * net_cfg.model_dim, net_cfg.model_dim)
        self.decoder = _cross_decoder(net_cfg)
        self.logit_head = nn.Linear(net_cfg.model_dim, 1)

    def encode_background(self, images: torch.Tensor) -> torch.Tensor:
        return self.background_encoder(images)

    def forward(self, boxes: torch.Tensor, fg_tokens: torch.Tensor, bg_tokens: torch.Tensor,
                fg_mask: Optional[torch.Tensor] = None):
        if boxes.shape[:-1] != fg_tokens.shape[:-1]:
            raise ShapeError(
                f"boxes {tuple(boxes.shape)} do not match foreground tokens {tuple(fg_tokens.shape)}"
            )
        fused = self.fuse(torch.cat([self.box_proj(boxes), self.token_proj(fg_tokens)], dim=-1))
        pad = None if fg_mask is None else ~fg_mask.bool()
        h = self.decoder(fused, bg_tokens, tgt_key_padding_mask=pad)
        mask = torch.ones(h.shape[:-1], dtype=torch.bool, device=h.device) if fg_mask is None else fg_mask.bool()
        logit = self.logit_head(masked_mean(h, mask)).squeeze(-1)
        return logit, h


class UncondDiscriminatorNet(nn.Module):
    """Judges layout realism alone; sees box parameters and nothing else."""

    def __init__(self, net_cfg: NetworkConfig):
        super().__init__()
        self.box_proj = nn.Linear(4, net_cfg.model_dim)
        self.encoder = _self_encoder(net_cfg)
        self.logit_head = nn.Linear(net_cfg.model_dim, 1)

    def forward(self, boxes: torch.Tensor, fg_mask: Optional[torch.Tensor] = None):
        x = self.box_proj(boxes)
        pad = None if fg_mask is None else ~fg_mask.bool()
        h = self.encoder(x, src_key_padding_mask=pad)
        mask = torch.ones(h.shape[:-1], dtype=torch.bool, device=h.device) if fg_mask is None else fg_mask.bool()
        logit = self.logit_head(masked_mean(h, mask)).squeeze(-1)
        return logit, h


class CharDecoder(nn.Module):
    """Teacher-forced autoregressive byte decoder conditioned on one feature."""

    BOS = CHAR_VOCAB  # extra input-side token

    def __init__(self, model_dim: int, emb_dim: int = 64):
        super().__init__()
        self.embedding = nn.Embedding(CHAR_VOCAB + 1, emb_dim)
        self.gru = nn.GRU(emb_dim, model_dim, batch_first=True)
        self.out = nn.Linear(model_dim, CHAR_VOCAB)

    def teacher_logits(self, feature: torch.Tensor, text: str, max_chars: int) -> torch.Tensor:
        data = text.encode("utf-8")[:max_chars]
        if not data:
            return torch.zeros((0, CHAR_VOCAB))
        inputs = torch.tensor([self.BOS] + list(data[:-1]), dtype=torch.long)
        emb = self.embedding(inputs).unsqueeze(0)
        h0 = torch.tanh(feature).reshape(1, 1, -1)
        out, _ = self.gru(emb, h0)
        return self.out(out.squeeze(0))

    def teacher_logits_batch(self, features: torch.Tensor, texts: Sequence[str],
                             max_chars: int) -> list[torch.Tensor]:
        """One padded GRU pass for many strings; exact because the GRU is
        causal, so padded tails never influence the sliced prefixes."""
        encoded = [t.encode("utf-8")[:max_chars] for t in texts]
        lengths = [len(d) for d in encoded]
        l_max = max(lengths, default=0)
        if l_max == 0:
            return [torch.zeros((0, CHAR_VOCAB)) for _ in texts]
        inputs = torch.full((len(texts), l_max), self.BOS, dtype=torch.long)
        for i, data in enumerate(encoded):
            if len(data) > 1:
                inputs[i, 1:len(data)] = torch.tensor(list(data[:-1]), dtype=torch.long)
        emb = self.embedding(inputs)
        h0 = torch.tanh(features).unsqueeze(0)
        out, _ = self.gru(emb, h0)
        logits = self.out(out)
        return [logits[i, : lengths[i]] for i in range(len(texts))]


class PatchDecoder(nn.Module):
    """Feature vector to a small RGB patch reconstruction."""

    def __init__(self, model_dim: int, out_res: int = PATCH_RECON_RES):
        super().__init__()
        if out_res % 8 != 0:
            raise ConfigurationError("patch reconstruction resolution must be divisible by 8")
        self.base = out_res // 8
        self.fc = nn.Linear(model_dim, 32 * self.base * self.base)
        self.net = nn.Sequential(
            nn.ConvTranspose2d(32, 32, 4, stride=2, padding=1), nn.ReLU(),
            nn.ConvTranspose2d(32, 16, 4, stride=2, padding=1), nn.ReLU(),
            nn.ConvTranspose2d(16, 8, 4, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(8, 3, 3, padding=1),
        )

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        x = self.fc(feature).reshape(-1, 32, self.base, self.base)
        return torch.sigmoid(self.net(x))


class TextHeads(nn.Module):
    """Shared bundle of class / length / character decoding heads."""

    def __init__(self, net_cfg: NetworkConfig):
        super().__init__()
        self.class_head = _mlp_head(net_cfg.model_dim, NUM_CLASSES)
        self.length_head = _mlp_head(net_cfg.model_dim, LENGTH_LEVELS)
        self.char_decoder = CharDecoder(net_cfg.model_dim)
        self.max_chars = net_cfg.max_chars

    def text_recon(self, hidden: torch.Tensor, fg: ForegroundSet) -> Optional[TextRecon]:
        """hidden: (N, D) aligned with fg order; covers text elements only."""
        text_idx = [i for i, e in enumerate(fg) if isinstance(e, TextElement)]
        if not text_idx:
            return None
        feats = hidden[text_idx]
        char_logits = [
            self.char_decoder.teacher_logits(feats[k], fg.elements[text_idx[k]].string, self.max_chars)
            for k in range(len(text_idx))
        ]
        return TextRecon(
            char_logits=char_logits,
            class_logits=self.class_head(feats),
            length_logits=self.length_head(feats),
        )

    def text_recon_batch(self, hidden: torch.Tensor,
                         foregrounds: Sequence[ForegroundSet]) -> list[Optional[TextRecon]]:
        """hidden: (B, N, D); one flattened pass over every text element."""
        feats, strings, owner = [], [], []
        for i, fg in enumerate(foregrounds):
            for j, e in enumerate(fg):
                if isinstance(e, TextElement):
                    feats.append(hidden[i, j])
                    strings.append(e.string)
                    owner.append(i)
        if not feats:
            return [None] * len(foregrounds)
        stacked = torch.stack(feats)
        class_logits = self.class_head(stacked)
        length_logits = self.length_head(stacked)
        char_logits = self.char_decoder.teacher_logits_batch(stacked, strings, self.max_chars)
        out: list[Optional[TextRecon]] = []
        for i in range(len(foregrounds)):
            rows = [k for k, o in enumerate(owner) if o == i]
            if not rows:
                out.append(None)
                continue
            out.append(TextRecon(
                char_logits=[char_logits[k] for k in rows],
                class_logits=class_logits[rows],
                length_logits=length_logits[rows],
            ))
        return out


class AuxDecoderCond(nn.Module):
    """Reconstructs the conditional discriminator's full input from its
    features plus learnable positional embeddings."""

    def __init__(self, net_cfg: NetworkConfig):
        super().__init__()
        self.positions = nn.Parameter(torch.randn(net_cfg.max_elements, net_cfg.model_dim) * 0.02)
        self.blocks = _self_encoder(net_cfg)
        self.box_head = _mlp_head(net_cfg.model_dim, 4)
        self.text_heads = TextHeads(net_cfg)
        self.patch_decoder = PatchDecoder(net_cfg.model_dim)
        self.bg_fc = nn.Linear(net_cfg.model_dim, 32 * (BG_RECON_RES // 4) ** 2)
        self.bg_net = nn.Sequential(
            nn.ConvTranspose2d(32, 16, 4, stride=2, padding=1), nn.ReLU(),
            nn.ConvTranspose2d(16, 8, 4, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(8, 3, 3, padding=1),
        )

    def transform(self, features: torch.Tensor, fg_mask: Optional[torch.Tensor] = None):
        n = features.shape[-2]
        if n > self.positions.shape[0]:
            raise ShapeError(
                f"{n} features exceed the {self.positions.shape[0]} positional embeddings"
            )
        x = features + self.positions[:n]
        pad = None if fg_mask is None else ~fg_mask.bool()
        h = self.blocks(x, src_key_padding_mask=pad)
        mask = torch.ones(h.shape[:-1], dtype=torch.bool, device=h.device) if fg_mask is None else fg_mask.bool()
        return h, masked_mean(h, mask)

    def decode_background(self, pooled: torch.Tensor) -> torch.Tensor:
        base = BG_RECON_RES // 4
        x = self.bg_fc(pooled).reshape(-1, 32, base, base)
        return torch.sigmoid(self.bg_net(x))

    def forward(self, features: torch.Tensor, fg: ForegroundSet,
                fg_mask: Optional[torch.Tensor] = None):
        """Single-sample decode: features (N, D) -> (boxes, bg recon, foreground recon)."""
        h, pooled = self.transform(features.unsqueeze(0), fg_mask)
        h = h.squeeze(0)
        boxes = torch.sigmoid(self.box_head(h))
        image_idx = [i for i, e in enumerate(fg) if isinstance(e, ImageElement)]
        patches = [self.patch_decoder(h[i]).squeeze(0) for i in image_idx]
        recon = ForegroundRecon(patches=patches, text=self.text_heads.text_recon(h, fg))
        return boxes, self.decode_background(pooled).squeeze(0), recon

    def forward_batch(self, features: torch.Tensor, foregrounds: Sequence[ForegroundSet],
                      fg_mask: Optional[torch.Tensor] = None):
        """Batched decode: features (B, N, D) -> boxes, bg recons, per-sample recons."""
        h, pooled = self.transform(features, fg_mask)
        boxes = torch.sigmoid(self.box_head(h))
        bg = self.decode_background(pooled)
        recons = _batched_foreground_recons(h, foregrounds, self.text_heads, self.patch_decoder)
        return boxes, bg, recons


def _batched_foreground_recons(hidden: torch.Tensor, foregrounds: Sequence[ForegroundSet],
                               text_heads: "TextHeads", patch_decoder: "PatchDecoder"
                               ) -> list[ForegroundRecon]:
    """Shared flattened decoding of text and patch heads over a batch."""
    texts = text_heads.text_recon_batch(hidden, foregrounds)
    patch_feats, owner = [], []
    for i, fg in enumerate(foregrounds):
        for j, e in enumerate(fg):
            if isinstance(e, ImageElement):
                patch_feats.append(hidden[i, j])
                owner.append(i)
    patches_by_owner: dict[int, list[torch.Tensor]] = {}
    if patch_feats:
        decoded = patch_decoder(torch.stack(patch_feats))
        for k, o in enumerate(owner):
            patches_by_owner.setdefault(o, []).append(decoded[k])
    return [
        ForegroundRecon(patches=patches_by_owner.get(i, []), text=texts[i])
        for i in range(len(foregrounds))
    ]


class AuxDecoderUncond(nn.Module):
    """Reconstructs box parameters from unconditional discriminator features."""

    def __init__(self, net_cfg: NetworkConfig):
        super().__init__()
        self.positions = nn.Parameter(torch.randn(net_cfg.max_elements, net_cfg.model_dim) * 0.02)
        self.blocks = _self_encoder(net_cfg)
        self.box_head = _mlp_head(net_cfg.model_dim, 4)

    def forward(self, features: torch.Tensor, fg_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        n = features.shape[-2]
        if n > self.positions.shape[0]:
            raise ShapeError(
                f"{n} features exceed the {self.positions.shape[0]} positional embeddings"
            )
        x = features + self.positions[:n]
        pad = None if fg_mask is None else ~fg_mask.bool()
        h = self.blocks(x, src_key_padding_mask=pad)
        return torch.sigmoid(self.box_head(h))


class LatentEncoderNet(nn.Module):
    """Pools a layout's box tokens into a diagonal-Gaussian posterior."""

    def __init__(self, net_cfg: NetworkConfig, latent_dim: int):
        super().__init__()
        self.box_proj = nn.Linear(4, net_cfg.model_dim)
        self.encoder = _self_encoder(net_cfg)
        self.mu_head = nn.Linear(net_cfg.model_dim, latent_dim)
        self.logvar_head = nn.Linear(net_cfg.model_dim, latent_dim)

    def forward(self, boxes: torch.Tensor, fg_mask: Optional[torch.Tensor] = None) -> LatentPosterior:
        squeeze = boxes.ndim == 2
        if squeeze:
            boxes = boxes.unsqueeze(0)
            fg_mask = fg_mask.unsqueeze(0) if fg_mask is not None else None
        x = self.box_proj(boxes)
        pad = None if fg_mask is None else ~fg_mask.bool()
        h = self.encoder(x, src_key_padding_mask=pad)
        mask = torch.ones(h.shape[:-1], dtype=torch.bool, device=h.device) if fg_mask is None else fg_mask.bool()
        pooled = masked_mean(h, mask)
        mu, logvar = self.mu_head(pooled), self.logvar_head(pooled)
        if squeeze:
            mu, logvar = mu.squeeze(0), logvar.squeeze(0)
        return LatentPosterior(mu=mu, logvar=logvar)


class ReconstructorNet(nn.Module):
    """Rebuilds the foreground conditions from the generator's last features,
    tying layout decisions back to what drove them."""

    def __init__(self, net_cfg: NetworkConfig):
        super().__init__()
        self.blocks = _self_encoder(net_cfg)
        self.text_heads = TextHeads(net_cfg)
        self.patch_decoder = PatchDecoder(net_cfg.model_dim)

    def forward(self, last_features: torch.Tensor, fg: ForegroundSet,
                fg_mask: Optional[torch.Tensor] = None) -> ForegroundRecon:
        squeeze = last_features.ndim == 2
        x = last_features.unsqueeze(0) if squeeze else last_features
        pad = None if fg_mask is None else ~fg_mask.bool().reshape(1, -1)
        h = self.blocks(x, src_key_padding_mask=pad).squeeze(0)
        image_idx = [i for i, e in enumerate(fg) if isinstance(e, ImageElement)]
        patches = [self.patch_decoder(h[i]).squeeze(0) for i in image_idx]
        return ForegroundRecon(patches=patches, text=self.text_heads.text_recon(h, fg))

    def forward_batch(self, last_features: torch.Tensor,
                      foregrounds: Sequence[ForegroundSet],
                      fg_mask: Optional[torch.Tensor] = None) -> list[ForegroundRecon]:
        pad = None if fg_mask is None else ~fg_mask.bool()
        h = self.blocks(last_features, src_key_padding_mask=pad)
        return _batched_foreground_recons(h, foregrounds, self.text_heads, self.patch_decoder)


class ModelBundle(nn.Module):
    """Owns every network plus the embedder; the single checkpointable unit."""

    def __init__(self, net_cfg: NetworkConfig, emb_cfg: EmbedderConfig,
                 loss_weights: LossWeights = LossWeights()):
        super().__init__()
        self.net_cfg = net_cfg
        self.emb_cfg = emb_cfg
        self.loss_weights = loss_weights
        self.embedder = MultimodalEmbedder(
            emb_cfg, net_cfg.model_dim, net_cfg.encoder_depth, net_cfg.num_heads,
            net_cfg.ffn_dim, net_cfg.dropout,
        )
        self.generator = GeneratorNet(net_cfg, emb_cfg.token_dim)
        self.disc_cond = CondDiscriminatorNet(net_cfg, emb_cfg)
        self.disc_uncond = UncondDiscriminatorNet(net_cfg)
        self.aux_cond = AuxDecoderCond(net_cfg)
        self.aux_uncond = AuxDecoderUncond(net_cfg)
        self.latent_encoder = LatentEncoderNet(net_cfg, emb_cfg.noise_dim)
        self.reconstructor = ReconstructorNet(net_cfg)

    # -- parameter bookkeeping ------------------------------------------------

    def generator_side_parameters(self):
        mods = [self.embedder, self.generator, self.latent_encoder, self.reconstructor]
        for m in mods:
            yield from m.parameters()

    def discriminator_side_parameters(self):
        mods = [self.disc_cond, self.disc_uncond, self.aux_cond, self.aux_uncond]
        for m in mods:
            yield from m.parameters()

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def describe(self) -> str:
        per = {
            "embedder": self.embedder, "generator": self.generator,
            "disc_cond": self.disc_cond, "disc_uncond": self.disc_uncond,
            "aux_cond": self.aux_cond, "aux_uncond": self.aux_uncond,
            "latent_encoder": self.latent_encoder, "reconstructor": self.reconstructor,
        }
        lines = [f"  {name}: {sum(p.numel() for p in m.parameters()):,}" for name, m in per.items()]
        return "\n".join([f"parameters: {self.parameter_count():,}"] + lines)

    # -- single-sample forward operations --------------------------------------

    def generator_forward(self, bg_tokens: BackgroundTokens,
                          fg_tokens: Sequence[ForegroundToken]) -> GeneratorOutput:
        if not fg_tokens:
            raise ValidationError("generator needs at least one foreground element")
        mat = torch.stack([t.vector for t in fg_tokens]).unsqueeze(0)
        boxes, feats = self.generator(mat, bg_tokens.tokens.unsqueeze(0))
        return GeneratorOutput(boxes=boxes.squeeze(0), last_features=feats.squeeze(0))

    def disc_background_tokens(self, bg: BackgroundImage) -> BackgroundTokens:
        t = resize_image_tensor(image_to_tensor(bg.pixels), self.emb_cfg.working_resolution)
        tokens = self.disc_cond.encode_background(t.unsqueeze(0)).squeeze(0)
        grid = self.emb_cfg.working_resolution // self.emb_cfg.background_patch_size
        return BackgroundTokens(tokens=tokens, grid=grid)

    def cond_disc_forward(self, layout: Layout, bg_tokens: BackgroundTokens,
                          fg_tokens: Sequence[ForegroundToken]) -> DiscriminatorOutput:
        if len(layout) != len(fg_tokens):
            raise ShapeError(
                f"layout has {len(layout)} boxes for {len(fg_tokens)} foreground tokens"
            )
        boxes = layout.to_tensor(torch.float32).unsqueeze(0)
        mat = torch.stack([t.vector for t in fg_tokens]).unsqueeze(0)
        logit, feats = self.disc_cond(boxes, mat, bg_tokens.tokens.unsqueeze(0))
        return DiscriminatorOutput(logit=logit.squeeze(0), features=feats.squeeze(0))

    def uncond_disc_forward(self, layout: Layout) -> DiscriminatorOutput:
        boxes = layout.to_tensor(torch.float32).unsqueeze(0)
        logit, feats = self.disc_uncond(boxes)
        return DiscriminatorOutput(logit=logit.squeeze(0), features=feats.squeeze(0))

    def aux_decode_cond(self, features: torch.Tensor, fg: ForegroundSet):
        return self.aux_cond(features, fg)

    def aux_decode_uncond(self, features: torch.Tensor) -> Layout:
        boxes = self.aux_uncond(features.unsqueeze(0)).squeeze(0)
        return Layout.from_tensor(boxes.detach().double())

    def latent_encode(self, layout: Layout) -> LatentPosterior:
        return self.latent_encoder(layout.to_tensor(torch.float32))

    def reconstruct_foreground(self, last_features: torch.Tensor, fg: ForegroundSet) -> ForegroundRecon:
        return self.reconstructor(last_features, fg)

    def generate(self, background: BackgroundImage, fg: ForegroundSet,
                 noise: Optional[torch.Tensor] = None,
                 generator: Optional[torch.Generator] = None) -> GeneratorOutput:
        """Inference path: encode conditions, draw per-element noise, emit boxes."""
        if len(fg) == 0:
            raise ValidationError("generation needs at least one foreground element")
        if noise is None:
            noise = torch.randn(len(fg), self.emb_cfg.noise_dim, generator=generator)
        with torch.no_grad():
            bg_tokens = self.embedder.encode_background(background)
            tokens = self.embedder.assemble_foreground_tokens(fg, noise)
            return self.generator_forward(bg_tokens, tokens)


def build_bundle(net_cfg: NetworkConfig = NetworkConfig(),
                 emb_cfg: EmbedderConfig = EmbedderConfig(),
                 loss_weights: LossWeights = LossWeights(),
                 seed: int = 0) -> ModelBundle:
    """Deterministically initialized bundle; same seed, same weights."""
    torch.manual_seed(seed)
    return ModelBundle(net_cfg, emb_cfg, loss_weights)


def save_checkpoint(bundle: ModelBundle, path, extra: Optional[dict] = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "network_config": asdict(bundle.net_cfg),
        "embedder_config": asdict(bundle.emb_cfg),
        "loss_weights": asdict(bundle.loss_weights),
        "state_dict": bundle.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[ModelBundle, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format version {version!r}")
    bundle = ModelBundle(
        NetworkConfig(**payload["network_config"]),
        EmbedderConfig(**payload["embedder_config"]),
        LossWeights(**payload["loss_weights"]),
    )
    bundle.load_state_dict(payload["state_dict"])
    return bundle, payload.get("extra", {})
