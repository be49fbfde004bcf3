"""Loss terms and their composition into the GAN / VAE / VAE-GAN objectives.

Everything is written against torch tensors so gradients flow; the scalar
convenience paths accept Layout objects and plain sequences. Weights default
to the published calibration constants and are snapshot-tested.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .elements import ForegroundSet, TextElement
from .errors import ConfigurationError, NumericError, ShapeError, ValidationError
from .geometry import (
    Layout,
    as_box_tensor,
    pair_alignment_deltas,
    pair_giou,
    pair_overlap_fraction,
)

CHAR_VOCAB = 256  # output alphabet: raw utf-8 bytes
NUM_CLASSES = 4
LENGTH_LEVELS = 256
PATCH_WORKING_RES = 64  # common resolution for comparing mismatched patches

VARIANTS = ("gan", "vae", "vaegan")


@dataclass(frozen=True)
class LossWeights:
    """Calibration constants for every loss term; defaults are the published values."""

    lambda_layout: float = 500.0
    lambda_im: float = 0.5
    lambda_str: float = 0.1
    lambda_cls: float = 50.0
    lambda_len: float = 2.0
    lambda_kl: float = 1.0
    lambda_giou: float = 4.0
    lambda_overlap: float = 7.0
    lambda_misalign: float = 17.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ValidationError(f"{name} must be non-negative, got {v}")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(**{k: v * factor for k, v in asdict(self).items()})


@dataclass
class LossReport:
    """Itemized scalar losses plus their total; terms are stored already weighted."""

    terms: dict[str, float] = field(default_factory=dict)
    total: float = 0.0

    @classmethod
    def from_terms(cls, terms: Mapping[str, float]) -> "LossReport":
        clean = {k: float(v) for k, v in terms.items()}
        return cls(terms=clean, total=float(sum(clean.values())))

    def to_dict(self) -> dict:
        out = dict(self.terms)
        out["total"] = self.total
        return out


def _norm_mask(mask: Optional[torch.Tensor], boxes: torch.Tensor) -> torch.Tensor:
    if mask is None:
        return torch.ones(boxes.shape[:-1], dtype=torch.bool, device=boxes.device)
    return mask.bool()


# ---------------------------------------------------------------------------
# Reconstruction losses


def layout_l2_loss(fake, real, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean per-box Euclidean distance over the four box parameters."""
    f = as_box_tensor(fake)
    r = as_box_tensor(real, dtype=f.dtype)
    if f.shape != r.shape:
        raise ShapeError(f"layout shapes differ: {tuple(f.shape)} vs {tuple(r.shape)}")
    norms = torch.linalg.vector_norm(f - r, dim=-1)
    m = _norm_mask(mask, f)
    norms = norms * m
    per_sample = norms.sum(dim=-1) / m.sum(dim=-1).clamp(min=1)
    return per_sample.mean()


def _to_unit_image(arr) -> torch.Tensor:
    """Accept HxWxC uint8 arrays or CxHxW float tensors; return CxHxW in [0, 1]."""
    if isinstance(arr, torch.Tensor):
        t = arr
        if t.ndim == 3 and t.shape[-1] == 3 and t.shape[0] != 3:
            t = t.permute(2, 0, 1)
        return t.float() / 255.0 if t.dtype == torch.uint8 else t.float()
    a = np.asarray(arr)
    if a.dtype == np.uint8:
        a = a.astype(np.float32) / 255.0
    t = torch.from_numpy(np.ascontiguousarray(a)).float()
    if t.ndim == 3 and t.shape[-1] == 3 and t.shape[0] != 3:
        t = t.permute(2, 0, 1)
    return t


def _resize_chw(t: torch.Tensor, size: int) -> torch.Tensor:
    return F.interpolate(
        t.unsqueeze(0), size=(size, size), mode="bilinear", align_corners=False
    ).squeeze(0)


def image_rec_loss(p1: Sequence, p2: Sequence) -> torch.Tensor:
    """Mean per-element L2 distance between patch pairs scaled to [0, 1].

    Same-shape pairs are compared at native resolution; mismatched pairs are
    both resized to the common working resolution so the distance stays
    well-defined. Empty sequences cost 0 by convention.
    """
    if len(p1) != len(p2):
        raise ShapeError(f"patch sequences differ in length: {len(p1)} vs {len(p2)}")
    if not p1:
        return torch.tensor(0.0)
    dists = []
    for a, b in zip(p1, p2):
        ta, tb = _to_unit_image(a), _to_unit_image(b)
        if ta.shape != tb.shape:
            ta = _resize_chw(ta, PATCH_WORKING_RES)
            tb = _resize_chw(tb, PATCH_WORKING_RES)
        dists.append(torch.linalg.vector_norm(ta - tb))
    return torch.stack(dists).mean()


@dataclass
class TextRecon:
    """Decoded text predictions: per-character byte logits (teacher-forced to the
    real string), 4-way class logits, and 256-way length-level logits."""

    char_logits: list  # per element: (L_i, CHAR_VOCAB) tensor; L_i may be 0
    class_logits: torch.Tensor  # (N, NUM_CLASSES)
    length_logits: torch.Tensor  # (N, LENGTH_LEVELS)


def quantize_text_length(length: int) -> int:
    """Clamp a character count onto the 256 quantization levels [0, 255]."""
    if length < 0:
        raise ValidationError(f"text length must be non-negative, got {length}")
    return min(int(length), LENGTH_LEVELS - 1)


def class_index(text_class: str) -> int:
    from .elements import TEXT_CLASSES

    return TEXT_CLASSES.index(text_class)


def text_bytes(s: str, max_chars: Optional[int] = None) -> torch.Tensor:
    data = s.encode("utf-8")
    if max_chars is not None:
        data = data[:max_chars]
    return torch.tensor(list(data), dtype=torch.long)


def text_rec_loss(
    t_rec: Optional[TextRecon],
    t_real: Sequence[TextElement],
    weights: LossWeights = LossWeights(),
) -> torch.Tensor:
    """Weighted sum of string / class / length cross-entropies, meaned over elements."""
    if not t_real:
        return torch.tensor(0.0)
    if t_rec is None:
        raise ShapeError("text reconstruction missing for non-empty text sequence")
    n = len(t_real)
    if len(t_rec.char_logits) != n or t_rec.class_logits.shape[0] != n or t_rec.length_logits.shape[0] != n:
        raise ShapeError("text reconstruction length does not match real elements")
    if t_rec.class_logits.shape[-1] != NUM_CLASSES:
        raise ShapeError(f"class logits must be {NUM_CLASSES}-way")
    if t_rec.length_logits.shape[-1] != LENGTH_LEVELS:
        raise ShapeError(f"length logits must be {LENGTH_LEVELS}-way")

    per_element = []
    for i, elem in enumerate(t_real):
        cl = t_rec.char_logits[i]
        if cl.numel() and cl.shape[-1] != CHAR_VOCAB:
            raise ShapeError(f"char logits must be {CHAR_VOCAB}-way")
        target = text_bytes(elem.string, max_chars=cl.shape[0] if cl.ndim == 2 else 0)
        if cl.ndim == 2 and cl.shape[0] > target.shape[0]:
            raise ShapeError(
                f"char logits longer than target string for element {i}"
            )
        if cl.ndim == 2 and cl.shape[0] > 0:
            str_ce = F.cross_entropy(cl, target[: cl.shape[0]])
        else:
            str_ce = torch.tensor(0.0)
        cls_ce = F.cross_entropy(
            t_rec.class_logits[i : i + 1],
            torch.tensor([class_index(elem.text_class)]),
        )
        len_ce = F.cross_entropy(
            t_rec.length_logits[i : i + 1],
            torch.tensor([quantize_text_length(elem.length)]),
        )
        per_element.append(
            weights.lambda_str * str_ce + weights.lambda_cls * cls_ce + weights.lambda_len * len_ce
        )
    return torch.stack(per_element).mean()


@dataclass
class ForegroundRecon:
    """Per-element reconstructions of the multimodal conditions."""

    patches: list  # one CxHxW tensor per image element, in foreground order
    text: Optional[TextRecon]  # covers the text elements, in foreground order


def background_l2(b1, b2) -> torch.Tensor:
    """L2 distance between two backgrounds in [0, 1], resized to the smaller side."""
    t1, t2 = _to_unit_image(b1), _to_unit_image(b2)
    if t1.shape != t2.shape:
        size = min(t1.shape[-1], t2.shape[-1], t1.shape[-2], t2.shape[-2])
        t1, t2 = _resize_chw(t1, size), _resize_chw(t2, size)
    return torch.linalg.vector_norm(t1 - t2)


def dec_rec_loss(reconstructed, real, weights: LossWeights = LossWeights()) -> torch.Tensor:
    """Full decoder reconstruction objective over (layout, background, foreground)."""
    rec_layout, rec_bg, rec_fg = reconstructed
    real_layout, real_bg, real_fg = real
    total = weights.lambda_layout * layout_l2_loss(rec_layout, real_layout)
    if rec_bg is not None:
        total = total + weights.lambda_im * background_l2(rec_bg, real_bg)
    if isinstance(real_fg, ForegroundSet):
        real_patches = [e.patch for e in real_fg.images]
        real_texts = list(real_fg.texts)
    else:
        real_patches, real_texts = real_fg
    if rec_fg is not None:
        total = total + weights.lambda_im * image_rec_loss(rec_fg.patches, real_patches)
        if real_texts:
            total = total + text_rec_loss(rec_fg.text, real_texts, weights)
    return total


# ---------------------------------------------------------------------------
# Box supervision and regularity losses


def giou_loss(fake, real, weights: LossWeights = LossWeights(), mask=None) -> torch.Tensor:
    """Weighted mean generalized-IoU dissimilarity between matched box pairs.

    Implemented as lambda * mean(1 - gIoU): gIoU is a similarity, and the
    total objective is minimized, so the dissimilarity form is the one that
    actually pulls generated boxes onto their ground truth.
    """
    f = as_box_tensor(fake)
    r = as_box_tensor(real, dtype=f.dtype)
    if f.shape != r.shape:
        raise ShapeError(f"layout shapes differ: {tuple(f.shape)} vs {tuple(r.shape)}")
    g = pair_giou(f, r)
    m = _norm_mask(mask, f)
    per_sample = ((1.0 - g) * m).sum(dim=-1) / m.sum(dim=-1).clamp(min=1)
    return weights.lambda_giou * per_sample.mean()


def overlap_loss(layout, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean pairwise covered fraction over ordered pairs (i, j), i != j.

    Zero for single-box layouts. Unweighted: the composition applies the
    overlap calibration constant.
    """
    b = as_box_tensor(layout)
    if b.ndim == 2:
        b = b.unsqueeze(0)
        mask = mask.unsqueeze(0) if mask is not None else None
    m = _norm_mask(mask, b)
    n = b.shape[1]
    if n < 2:
        return torch.zeros((), dtype=b.dtype)
    a_exp = b.unsqueeze(2).expand(-1, n, n, 4)
    b_exp = b.unsqueeze(1).expand(-1, n, n, 4)
    frac = pair_overlap_fraction(a_exp, b_exp)
    pair_mask = m.unsqueeze(2) & m.unsqueeze(1)
    eye = torch.eye(n, dtype=torch.bool, device=b.device).unsqueeze(0)
    pair_mask = pair_mask & ~eye
    counts = pair_mask.sum(dim=(1, 2))
    sums = (frac * pair_mask).sum(dim=(1, 2))
    per_sample = torch.where(counts > 0, sums / counts.clamp(min=1), torch.zeros_like(sums))
    return per_sample.mean()


def misalignment_loss(layout, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Per-box minimum over the six alignment deltas to its nearest neighbor,
    meaned over boxes. Zero for single-box layouts; hard min, so gradients
    follow the active alignment relation."""
    b = as_box_tensor(layout)
    if b.ndim == 2:
        b = b.unsqueeze(0)
        mask = mask.unsqueeze(0) if mask is not None else None
    m = _norm_mask(mask, b)
    n = b.shape[1]
    if n < 2:
        return torch.zeros((), dtype=b.dtype)
    a_exp = b.unsqueeze(2).expand(-1, n, n, 4)
    b_exp = b.unsqueeze(1).expand(-1, n, n, 4)
    deltas = pair_alignment_deltas(a_exp, b_exp).min(dim=-1).values  # (B, N, N)
    pair_mask = m.unsqueeze(2) & m.unsqueeze(1)
    eye = torch.eye(n, dtype=torch.bool, device=b.device).unsqueeze(0)
    pair_mask = pair_mask & ~eye
    big = torch.finfo(b.dtype).max
    deltas = torch.where(pair_mask, deltas, torch.full_like(deltas, big))
    nearest = deltas.min(dim=2).values  # (B, N)
    has_neighbor = pair_mask.any(dim=2)
    nearest = torch.where(has_neighbor, nearest, torch.zeros_like(nearest))
    valid_counts = m.sum(dim=1).clamp(min=1)
    per_sample = (nearest * m).sum(dim=1) / valid_counts
    return per_sample.mean()


# ---------------------------------------------------------------------------
# Adversarial and variational terms


def _check_finite(name: str, t: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite logits in {name}")
    return t


def gan_losses(
    d_real_c: torch.Tensor,
    d_fake_c: torch.Tensor,
    d_real_u: Optional[torch.Tensor] = None,
    d_fake_u: Optional[torch.Tensor] = None,
    saturating: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Generator and discriminator adversarial losses from raw logits.

    Discriminator minimizes -log D(real) - log(1 - D(fake)) per branch; the
    generator default is the non-saturating -log D(fake), with the original
    minimax log(1 - D(fake)) behind the `saturating` switch. Probabilities
    come from logistic squashing, expressed through softplus for stability.
    """
    terms = gan_loss_terms(d_real_c, d_fake_c, d_real_u, d_fake_u, saturating)
    gen = terms["gen_cond"] + terms.get("gen_uncond", torch.zeros(()))
    disc = (
        terms["disc_real_cond"]
        + terms["disc_fake_cond"]
        + terms.get("disc_real_uncond", torch.zeros(()))
        + terms.get("disc_fake_uncond", torch.zeros(()))
    )
    return gen, disc


def gan_loss_terms(
    d_real_c, d_fake_c, d_real_u=None, d_fake_u=None, saturating: bool = False
) -> dict[str, torch.Tensor]:
    d_real_c = _check_finite("d_real_c", torch.as_tensor(d_real_c, dtype=torch.get_default_dtype()) if not isinstance(d_real_c, torch.Tensor) else d_real_c)
    d_fake_c = _check_finite("d_fake_c", torch.as_tensor(d_fake_c, dtype=torch.get_default_dtype()) if not isinstance(d_fake_c, torch.Tensor) else d_fake_c)

    def gen_term(logits):
        if saturating:
            return -F.softplus(logits).mean()  # log(1 - D(fake))
        return F.softplus(-logits).mean()  # -log D(fake)

    terms = {
        "disc_real_cond": F.softplus(-d_real_c).mean(),
        "disc_fake_cond": F.softplus(d_fake_c).mean(),
        "gen_cond": gen_term(d_fake_c),
    }
    if d_real_u is not None or d_fake_u is not None:
        if d_real_u is None or d_fake_u is None:
            raise ConfigurationError("unconditional branch needs both real and fake logits")
        d_real_u = _check_finite("d_real_u", d_real_u if isinstance(d_real_u, torch.Tensor) else torch.as_tensor(d_real_u, dtype=torch.get_default_dtype()))
        d_fake_u = _check_finite("d_fake_u", d_fake_u if isinstance(d_fake_u, torch.Tensor) else torch.as_tensor(d_fake_u, dtype=torch.get_default_dtype()))
        terms["disc_real_uncond"] = F.softplus(-d_real_u).mean()
        terms["disc_fake_uncond"] = F.softplus(d_fake_u).mean()
        terms["gen_uncond"] = gen_term(d_fake_u)
    return terms


def generator_adversarial(d_fake_c: torch.Tensor,
                          d_fake_u: Optional[torch.Tensor] = None,
                          saturating: bool = False) -> torch.Tensor:
    """Generator-side adversarial term summed over active branches."""
    def term(logits):
        logits = _check_finite("generator fake logits", logits)
        return (-F.softplus(logits) if saturating else F.softplus(-logits)).mean()

    total = term(d_fake_c)
    if d_fake_u is not None:
        total = total + term(d_fake_u)
    return total


def kl_to_standard_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL divergence from a diagonal Gaussian to the standard normal.

    Per vector: 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar); batched inputs
    are meaned over leading dimensions.
    """
    mu = torch.as_tensor(mu) if not isinstance(mu, torch.Tensor) else mu
    logvar = torch.as_tensor(logvar) if not isinstance(logvar, torch.Tensor) else logvar
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu shape {tuple(mu.shape)} != logvar shape {tuple(logvar.shape)}")
    per_vec = 0.5 * (logvar.exp() + mu.pow(2) - 1.0 - logvar).sum(dim=-1)
    return per_vec.mean()


def vae_objective(fake, real, mu, logvar, weights: LossWeights = LossWeights(), mask=None) -> torch.Tensor:
    """Layout reconstruction plus KL regularization of the encoded posterior."""
    return weights.lambda_layout * layout_l2_loss(fake, real, mask=mask) + weights.lambda_kl * kl_to_standard_normal(mu, logvar)


# ---------------------------------------------------------------------------
# Variant composition

_GENERATOR_TERMS = ("gan", "vae", "giou", "rec", "overlap", "misalign")


def compose_objective(
    variant: str,
    components: Mapping[str, object],
    weights: LossWeights = LossWeights(),
) -> dict:
    """Select and weight the generator-side terms for one training variant.

    Values pass through unchanged in type, so tensor components keep their
    autograd graph. gan/vae/giou/rec arrive already weighted per their own
    definitions; overlap and misalign arrive raw and are weighted here.
    Inactive-variant components may be absent and are ignored when supplied.
    """
    variant = variant.lower()
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    wants_gan = variant in ("gan", "vaegan")
    wants_vae = variant in ("vae", "vaegan")

    terms: dict = {}
    if wants_gan:
        if components.get("gan") is None:
            raise ConfigurationError(f"variant {variant} requires a 'gan' component")
        terms["gan"] = components["gan"]
    if wants_vae:
        if components.get("vae") is None:
            raise ConfigurationError(f"variant {variant} requires a 'vae' component")
        terms["vae"] = components["vae"]
    if components.get("giou") is not None:
        terms["giou"] = components["giou"]
    if components.get("rec") is not None:
        terms["rec"] = components["rec"]
    if components.get("overlap") is not None:
        terms["overlap"] = weights.lambda_overlap * components["overlap"]
    if components.get("misalign") is not None:
        terms["misalign"] = weights.lambda_misalign * components["misalign"]
    return terms


def total_objective(
    variant: str,
    components: Mapping[str, object],
    weights: LossWeights = LossWeights(),
) -> LossReport:
    """Itemized report of the variant objective; total is the term sum."""
    terms = compose_objective(variant, components, weights)
    return LossReport.from_terms({k: float(v) for k, v in terms.items()})
