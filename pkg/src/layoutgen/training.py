"""Optimization loops for the three training variants, alternating one
discriminator-side and one generator-side update per batch.

Determinism contract: all sampling flows through generators owned by the
Trainer and serialized into checkpoints, so an identical seed and config
reproduces the loss trajectory bit for bit, including across a resume.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .conditioning import resize_image_tensor, image_to_tensor
from .data import mask_random_regions
from .elements import DesignSample, ForegroundSet
from .errors import ConfigurationError, NumericError
from .geometry import Layout
from .losses import (
    LossReport,
    LossWeights,
    compose_objective,
    dec_rec_loss,
    gan_loss_terms,
    generator_adversarial,
    giou_loss,
    image_rec_loss,
    kl_to_standard_normal,
    layout_l2_loss,
    misalignment_loss,
    overlap_loss,
    text_rec_loss,
)
from .metrics import MetricReport, evaluate_layout_sets, surrogate_layout_extractor
from .networks import ModelBundle, load_checkpoint, reparameterize, save_checkpoint

VARIANT_CHOICES = ("gan", "vae", "vaegan")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "gan"
    learning_rate: float = 1e-5
    batch_size: int = 64
    max_steps: int = 1000
    seed: int = 0
    # Objective toggles: the ablation axes.
    enable_giou: bool = True
    enable_overlap: bool = True
    enable_misalign: bool = True
    enable_gen_rec: bool = True
    enable_uncond_disc: bool = True
    saturating_gan: bool = False
    grad_clip: Optional[float] = 1.0
    checkpoint_every: int = 500
    eval_every: int = 500
    split_seed: int = 0
    augment_backgrounds: bool = False

    def __post_init__(self):
        if self.variant not in VARIANT_CHOICES:
            raise ConfigurationError(f"variant must be one of {VARIANT_CHOICES}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.max_steps < 0 or self.batch_size < 1:
            raise ConfigurationError("steps must be >= 0 and batch size >= 1")


def ablation_ladder(base: Optional[TrainConfig] = None) -> list[TrainConfig]:
    """The progressive loss-configuration ladder, from the bare conditional
    adversarial baseline up to the full objective."""
    from dataclasses import replace

    b = base or TrainConfig()
    row1 = replace(b, variant="gan", enable_gen_rec=False, enable_uncond_disc=False,
                   enable_giou=False, enable_overlap=False, enable_misalign=False)
    row2 = replace(row1, enable_gen_rec=True)
    row3 = replace(row2, enable_uncond_disc=True)
    row4 = replace(row3, enable_giou=True)
    row5 = replace(row4, enable_overlap=True, enable_misalign=True)
    return [row1, row2, row3, row4, row5]


@dataclass
class Batch:
    backgrounds: torch.Tensor  # (B, 3, R, R) in [0, 1] at working resolution
    boxes: torch.Tensor  # (B, N, 4) float32, padded
    mask: torch.Tensor  # (B, N) bool
    foregrounds: list[ForegroundSet]
    samples: list[DesignSample]


def collate(samples: Sequence[DesignSample], working_resolution: int) -> Batch:
    if not samples:
        raise ConfigurationError("batch must be non-empty")
    n_max = max(len(s.foreground) for s in samples)
    b = len(samples)
    boxes = torch.zeros((b, n_max, 4), dtype=torch.float32)
    mask = torch.zeros((b, n_max), dtype=torch.bool)
    bgs = []
    for i, s in enumerate(samples):
        n = len(s.foreground)
        boxes[i, :n] = s.layout.to_tensor(torch.float32)
        mask[i, :n] = True
        bgs.append(resize_image_tensor(image_to_tensor(s.background.pixels), working_resolution))
    return Batch(
        backgrounds=torch.stack(bgs),
        boxes=boxes,
        mask=mask,
        foregrounds=[s.foreground for s in samples],
        samples=list(samples),
    )


class Trainer:
    """Owns the bundle parameters, both optimizers, and all RNG state."""

    def __init__(self, bundle: ModelBundle, config: TrainConfig,
                 loss_weights: Optional[LossWeights] = None):
        self.bundle = bundle
        self.config = config
        self.weights = loss_weights if loss_weights is not None else bundle.loss_weights
        self.gen_opt = torch.optim.Adam(
            list(bundle.generator_side_parameters()), lr=config.learning_rate
        )
        self.disc_opt = torch.optim.Adam(
            list(bundle.discriminator_side_parameters()), lr=config.learning_rate
        )
        self.torch_gen = torch.Generator().manual_seed(config.seed)
        self.np_rng = np.random.default_rng(config.seed)
        self.step = 0
        self.ema: dict[str, float] = {}

    # -- bookkeeping -----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "step": self.step,
            "ema": dict(self.ema),
            "gen_opt": self.gen_opt.state_dict(),
            "disc_opt": self.disc_opt.state_dict(),
            "torch_gen_state": self.torch_gen.get_state(),
            "np_rng_state": self.np_rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict) -> None:
        self.step = state["step"]
        self.ema = dict(state["ema"])
        self.gen_opt.load_state_dict(state["gen_opt"])
        self.disc_opt.load_state_dict(state["disc_opt"])
        self.torch_gen.set_state(state["torch_gen_state"])
        self.np_rng.bit_generator.state = state["np_rng_state"]

    def _update_ema(self, report: LossReport, decay: float = 0.98) -> None:
        for k, v in report.to_dict().items():
            prev = self.ema.get(k)
            self.ema[k] = v if prev is None else decay * prev + (1 - decay) * v

    def _check_finite(self, name: str, value: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(value).all():
            raise NumericError(f"non-finite loss term {name!r} at step {self.step}")
        return value

    def _clip(self, params) -> None:
        if self.config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(params, self.config.grad_clip)

    # -- shared pieces ---------------------------------------------------------

    def _noise(self, shape) -> torch.Tensor:
        return torch.randn(*shape, generator=self.torch_gen)

    def _fg_token_matrix(self, batch: Batch, noise: torch.Tensor) -> torch.Tensor:
        """Per-sample token assembly padded to the batch width."""
        b, n_max = batch.mask.shape
        out = torch.zeros((b, n_max, self.bundle.emb_cfg.token_dim))
        for i, fg in enumerate(batch.foregrounds):
            n = len(fg)
            if n:
                out[i, :n] = self.bundle.embedder.foreground_matrix(fg, noise[i, :n])
        return out

    def _latent_noise(self, batch: Batch):
        """Variant-specific per-element noise, plus the posterior when encoding."""
        b, n_max = batch.mask.shape
        dim = self.bundle.emb_cfg.noise_dim
        if self.config.variant == "gan":
            return self._noise((b, n_max, dim)), None
        posterior = self.bundle.latent_encoder(batch.boxes, batch.mask)
        z0 = self._noise((b, dim))
        z = reparameterize(posterior, z0)
        return z.unsqueeze(1).expand(b, n_max, dim), posterior

    def _generator_recon_loss(self, feats: torch.Tensor, batch: Batch) -> torch.Tensor:
        recons = self.bundle.reconstructor.forward_batch(feats, batch.foregrounds, batch.mask)
        total = torch.zeros(())
        for fg, rec in zip(batch.foregrounds, recons):
            term = self.weights.lambda_im * image_rec_loss(
                rec.patches, [e.patch for e in fg.images]
            )
            if fg.texts:
                term = term + text_rec_loss(rec.text, list(fg.texts), self.weights)
            total = total + term
        return total / len(batch.foregrounds)

    def _aux_cond_recon_loss(self, feats: torch.Tensor, batch: Batch) -> torch.Tensor:
        boxes_dec, bg_dec, recons = self.bundle.aux_cond.forward_batch(
            feats, batch.foregrounds, batch.mask
        )
        total = torch.zeros(())
        for i, (fg, rec) in enumerate(zip(batch.foregrounds, recons)):
            n = len(fg)
            total = total + dec_rec_loss(
                (boxes_dec[i, :n], bg_dec[i], rec),
                (batch.boxes[i, :n], batch.backgrounds[i], fg),
                self.weights,
            )
        return total / len(batch.foregrounds)

    # -- half-steps -------------------------------------------------------------

    def _discriminator_half_step(self, batch: Batch) -> dict[str, float]:
        cfg = self.config
        self.gen_opt.zero_grad(set_to_none=True)
        self.disc_opt.zero_grad(set_to_none=True)

        with torch.no_grad():
            noise, _ = self._latent_noise(batch)
            fg_tokens = self._fg_token_matrix(batch, noise)
            bg_tokens_gen = self.bundle.embedder.encode_background_batch(batch.backgrounds)
            fake_boxes, _ = self.bundle.generator(fg_tokens, bg_tokens_gen, batch.mask)

        bg_tokens_disc = self.bundle.disc_cond.encode_background(batch.backgrounds)
        d_real_c, feats_real_c = self.bundle.disc_cond(batch.boxes, fg_tokens, bg_tokens_disc, batch.mask)
        d_fake_c, _ = self.bundle.disc_cond(fake_boxes, fg_tokens, bg_tokens_disc, batch.mask)
        d_real_u = d_fake_u = None
        feats_real_u = None
        if cfg.enable_uncond_disc:
            d_real_u, feats_real_u = self.bundle.disc_uncond(batch.boxes, batch.mask)
            d_fake_u, _ = self.bundle.disc_uncond(fake_boxes, batch.mask)

        adv = gan_loss_terms(d_real_c, d_fake_c, d_real_u, d_fake_u, cfg.saturating_gan)
        disc_terms = {k: v for k, v in adv.items() if k.startswith("disc_")}
        total = sum(disc_terms.values())

        dec_c = self._aux_cond_recon_loss(feats_real_c, batch)
        total = total + dec_c
        report = {k: float(v.detach()) for k, v in disc_terms.items()}
        report["disc_dec_cond"] = float(dec_c.detach())
        if cfg.enable_uncond_disc:
            boxes_dec_u = self.bundle.aux_uncond(feats_real_u, batch.mask)
            dec_u = self.weights.lambda_layout * layout_l2_loss(boxes_dec_u, batch.boxes, batch.mask)
            total = total + dec_u
            report["disc_dec_uncond"] = float(dec_u.detach())

        self._check_finite("discriminator total", total)
        total.backward()
        self._clip(list(self.bundle.discriminator_side_parameters()))
        self.disc_opt.step()
        return report

    def _generator_half_step(self, batch: Batch) -> dict[str, float]:
        cfg = self.config
        self.gen_opt.zero_grad(set_to_none=True)
        self.disc_opt.zero_grad(set_to_none=True)

        noise, posterior = self._latent_noise(batch)
        fg_tokens = self._fg_token_matrix(batch, noise)
        bg_tokens_gen = self.bundle.embedder.encode_background_batch(batch.backgrounds)
        fake_boxes, feats = self.bundle.generator(fg_tokens, bg_tokens_gen, batch.mask)

        components: dict[str, torch.Tensor] = {}
        if cfg.variant in ("gan", "vaegan"):
            bg_tokens_disc = self.bundle.disc_cond.encode_background(batch.backgrounds)
            d_fake_c, _ = self.bundle.disc_cond(fake_boxes, fg_tokens, bg_tokens_disc, batch.mask)
            d_fake_u = None
            if cfg.enable_uncond_disc:
                d_fake_u, _ = self.bundle.disc_uncond(fake_boxes, batch.mask)
            components["gan"] = generator_adversarial(d_fake_c, d_fake_u, cfg.saturating_gan)
        if cfg.variant in ("vae", "vaegan"):
            components["vae"] = (
                self.weights.lambda_layout * layout_l2_loss(fake_boxes, batch.boxes, batch.mask)
                + self.weights.lambda_kl * kl_to_standard_normal(posterior.mu, posterior.logvar)
            )
        if cfg.enable_giou:
            components["giou"] = giou_loss(fake_boxes, batch.boxes, self.weights, batch.mask)
        if cfg.enable_gen_rec:
            components["rec"] = self._generator_recon_loss(feats, batch)
        if cfg.enable_overlap:
            components["overlap"] = overlap_loss(fake_boxes, batch.mask)
        if cfg.enable_misalign:
            components["misalign"] = misalignment_loss(fake_boxes, batch.mask)

        weighted = compose_objective(cfg.variant, components, self.weights)
        for name, value in weighted.items():
            self._check_finite(name, value)
        total = sum(weighted.values())
        total.backward()
        self._clip(list(self.bundle.generator_side_parameters()))
        self.gen_opt.step()
        return {k: float(v.detach()) for k, v in weighted.items()}

    # -- public steps -----------------------------------------------------------

    def train_step_gan(self, batch: Batch) -> LossReport:
        disc = self._discriminator_half_step(batch)
        gen = self._generator_half_step(batch)
        return self._finish_step({**disc, **gen})

    def train_step_vae(self, batch: Batch) -> LossReport:
        gen = self._generator_half_step(batch)
        return self._finish_step(gen)

    def train_step_vaegan(self, batch: Batch) -> LossReport:
        disc = self._discriminator_half_step(batch)
        gen = self._generator_half_step(batch)
        return self._finish_step({**disc, **gen})

    def train_step(self, batch: Batch) -> LossReport:
        step_fn = {
            "gan": self.train_step_gan,
            "vae": self.train_step_vae,
            "vaegan": self.train_step_vaegan,
        }[self.config.variant]
        return step_fn(batch)

    def _finish_step(self, terms: dict[str, float]) -> LossReport:
        report = LossReport.from_terms(terms)
        self.step += 1
        self._update_ema(report)
        return report


# ---------------------------------------------------------------------------
# Loop and evaluation


def _split_samples(samples: Sequence[DesignSample], seed: int):
    n = len(samples)
    if n < 10:
        raise ConfigurationError(f"need at least 10 samples to split 90/10, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(0.9 * n)), 1), n - 1)
    train = [samples[i] for i in sorted(order[:n_train].tolist())]
    test = [samples[i] for i in sorted(order[n_train:].tolist())]
    return train, test


def generate_layouts(bundle: ModelBundle, samples: Sequence[DesignSample],
                     seed: int = 0) -> list[Layout]:
    """Prior-noise generation for each sample's conditions."""
    gen = torch.Generator().manual_seed(seed)
    outputs = []
    for s in samples:
        out = bundle.generate(s.background, s.foreground, generator=gen)
        outputs.append(out.layout)
    return outputs


def evaluate_on_samples(bundle: ModelBundle, samples: Sequence[DesignSample],
                        seed: int = 0, extractor=None) -> MetricReport:
    fakes = generate_layouts(bundle, samples, seed=seed)
    reals = [s.layout for s in samples]
    return evaluate_layout_sets(fakes, reals, extractor or surrogate_layout_extractor())


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_log_path: Path
    final_report: Optional[LossReport]
    eval_report: Optional[MetricReport]


def train_loop(samples: Sequence[DesignSample], config: TrainConfig,
               bundle: ModelBundle, out_dir,
               loss_weights: Optional[LossWeights] = None,
               resume_from=None) -> TrainResult:
    """Split, iterate steps, checkpoint, and log metrics as ndjson records."""
    if not samples:
        raise ConfigurationError("training needs a non-empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_samples, test_samples = _split_samples(samples, config.split_seed)

    trainer = Trainer(bundle, config, loss_weights)
    if resume_from is not None:
        restored, extra = load_checkpoint(resume_from)
        bundle.load_state_dict(restored.state_dict())
        trainer.load_state_dict(extra["trainer"])

    log_path = out_dir / "metrics.ndjson"
    ckpt_path = out_dir / "checkpoint.pt"
    log = log_path.open("a", encoding="utf-8")

    def write_log(kind: str, payload: dict) -> None:
        record = {"kind": kind, "step": trainer.step}
        record.update(payload)
        log.write(json.dumps(record, sort_keys=True) + "\n")
        log.flush()

    def save(path) -> None:
        save_checkpoint(bundle, path, extra={"trainer": trainer.state_dict(),
                                             "train_config": asdict(config)})

    save(ckpt_path)  # step-0 checkpoint, also the max_steps=0 contract
    report = None
    eval_report = None
    start = time.time()
    while trainer.step < config.max_steps:
        idx = trainer.np_rng.choice(len(train_samples),
                                    size=min(config.batch_size, len(train_samples)),
                                    replace=False)
        batch_samples = [train_samples[i] for i in idx]
        if config.augment_backgrounds:
            batch_samples = [
                DesignSample(
                    background=mask_random_regions(
                        s.background, seed=int(trainer.np_rng.integers(0, 2**31)),
                        avoid=s.layout.boxes,
                    ),
                    foreground=s.foreground, layout=s.layout, sample_id=s.sample_id,
                )
                for s in batch_samples
            ]
        batch = collate(batch_samples, bundle.emb_cfg.working_resolution)
        report = trainer.train_step(batch)
        write_log("train", report.to_dict())
        if config.eval_every and trainer.step % config.eval_every == 0 and test_samples:
            eval_seed = (config.seed * 1_000_003 + trainer.step) % (2**31)
            eval_report = evaluate_on_samples(bundle, test_samples, seed=eval_seed)
            write_log("eval", eval_report.to_record())
        if config.checkpoint_every and trainer.step % config.checkpoint_every == 0:
            save(ckpt_path)
    save(ckpt_path)
    write_log("done", {"elapsed_sec": time.time() - start})
    log.close()
    return TrainResult(checkpoint_path=ckpt_path, metrics_log_path=log_path,
                       final_report=report, eval_report=eval_report)
