"""Command-line entry points: train, eval, generate, serve, synth-data.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import RunConfig, load_run_config
from .data import (
    load_dataset,
    samples_from_manifest,
    synth_dataset_generate,
    synth_samples,
    SynthGrammar,
)
from .elements import BackgroundImage, DesignSample, ForegroundSet, TextElement, canonical_text_class
from .errors import ConfigurationError, LayoutGenError, ValidationError
from .geometry import Layout
from .networks import build_bundle, load_checkpoint
from .rendering import RenderSpec, enforce_center_alignment, jitter_layout, render_design
from .training import TrainConfig, evaluate_on_samples, train_loop

TOGGLE_FIELDS = {
    "giou": "enable_giou",
    "overlap": "enable_overlap",
    "misalign": "enable_misalign",
    "gen-rec": "enable_gen_rec",
    "uncond-disc": "enable_uncond_disc",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layoutgen",
                                     description="multimodal banner layout generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p_synth.add_argument("--count", type=int, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", type=Path, required=True)
    p_synth.add_argument("--resolution", type=int, default=256)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--config", type=Path, help="run configuration JSON")
    p_train.add_argument("--data", type=Path, help="dataset directory with manifest.json")
    p_train.add_argument("--synth", type=int, help="train on N in-memory synthetic samples")
    p_train.add_argument("--out", type=Path, required=True)
    p_train.add_argument("--variant", choices=("gan", "vae", "vaegan"))
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--batch-size", type=int)
    p_train.add_argument("--learning-rate", type=float)
    p_train.add_argument("--toggle-off", action="append", default=[],
                         choices=sorted(TOGGLE_FIELDS), help="disable an objective term")
    p_train.add_argument("--resume", type=Path)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--data", type=Path, required=True)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--json", action="store_true", help="emit the record as JSON")

    p_gen = sub.add_parser("generate", help="generate rendered designs")
    p_gen.add_argument("--checkpoint", type=Path, required=True)
    p_gen.add_argument("--background", type=Path, required=True)
    p_gen.add_argument("--text", action="append", default=[],
                       help="CLASS:STRING foreground text, repeatable")
    p_gen.add_argument("--count", type=int, default=1)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", type=Path, required=True)
    p_gen.add_argument("--jitter", type=float, default=0.2)

    p_serve = sub.add_parser("serve", help="run the design service")
    p_serve.add_argument("--checkpoint", type=Path)
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--store", type=Path)
    p_serve.add_argument("--seed", type=int, default=0)

    return parser


def _train_config(args) -> tuple[RunConfig, TrainConfig]:
    run_cfg = load_run_config(args.config) if args.config else RunConfig()
    train_cfg = run_cfg.train
    overrides = {}
    if args.variant:
        overrides["variant"] = args.variant
    if args.steps is not None:
        overrides["max_steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.learning_rate is not None:
        overrides["learning_rate"] = args.learning_rate
    for name in args.toggle_off:
        overrides[TOGGLE_FIELDS[name]] = False
    if overrides:
        train_cfg = replace(train_cfg, **overrides)
    return run_cfg, train_cfg


def _load_samples(args):
    if args.data is not None and args.synth is not None:
        raise ConfigurationError("pass either --data or --synth, not both")
    if args.data is not None:
        manifest = load_dataset(args.data / "manifest.json")
        return samples_from_manifest(manifest, args.data)
    if args.synth is not None:
        return synth_samples(args.synth, seed=0)
    raise ConfigurationError("training needs --data or --synth")


def cmd_synth_data(args) -> int:
    grammar = SynthGrammar(resolution=args.resolution)
    manifest = synth_dataset_generate(args.count, args.seed, args.out, grammar)
    print(f"wrote {len(manifest.records)} records to {args.out / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    run_cfg, train_cfg = _train_config(args)
    samples = _load_samples(args)
    bundle = build_bundle(run_cfg.network, run_cfg.embedder, run_cfg.loss_weights,
                          seed=train_cfg.seed)
    print(bundle.describe())
    result = train_loop(samples, train_cfg, bundle, args.out,
                        loss_weights=run_cfg.loss_weights, resume_from=args.resume)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics log: {result.metrics_log_path}")
    if result.final_report is not None:
        print(f"final total loss: {result.final_report.total:.4f}")
    return 0


def cmd_eval(args) -> int:
    bundle, _ = load_checkpoint(args.checkpoint)
    bundle.eval()
    manifest = load_dataset(args.data / "manifest.json")
    samples = samples_from_manifest(manifest, args.data)
    report = evaluate_on_samples(bundle, samples, seed=args.seed)
    if args.json:
        print(json.dumps(report.to_record(), sort_keys=True))
    else:
        print(report.table())
    return 0


def _parse_texts(raw_texts) -> ForegroundSet:
    elements = []
    for raw in raw_texts:
        if ":" not in raw:
            raise ConfigurationError(f"--text needs CLASS:STRING, got {raw!r}")
        cls, string = raw.split(":", 1)
        elements.append(TextElement(string, canonical_text_class(cls)))
    if not elements:
        raise ConfigurationError("generate needs at least one --text element")
    return ForegroundSet(tuple(elements))


def cmd_generate(args) -> int:
    bundle, _ = load_checkpoint(args.checkpoint)
    bundle.eval()
    background = BackgroundImage(np.asarray(Image.open(args.background).convert("RGB")))
    fg = _parse_texts(args.text)
    args.out.mkdir(parents=True, exist_ok=True)
    spec = RenderSpec()
    for k in range(args.count):
        gen = torch.Generator().manual_seed(args.seed + k)
        layout = bundle.generate(background, fg, generator=gen).layout
        layout = jitter_layout(layout, args.jitter, seed=args.seed + 1000 + k)
        layout = enforce_center_alignment(layout)
        sample = DesignSample(background=background, foreground=fg, layout=layout)
        rendered = render_design(sample, spec, strict=False)
        image_path = args.out / f"design_{k:02d}.png"
        Image.fromarray(rendered.image, "RGB").save(image_path)
        meta = {
            "seed": args.seed + k,
            "layout": [list(b.as_tuple()) for b in layout.boxes],
            "font_sizes": [e.font_size for e in rendered.elements],
            "colors": [e.color for e in rendered.elements],
            "overflow_ids": rendered.overflow_ids,
        }
        (args.out / f"design_{k:02d}.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n"
        )
        print(f"wrote {image_path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(checkpoint_path=args.checkpoint, store_dir=args.store,
                     service_seed=args.seed)
    print(app.state.bundle.describe())
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "generate": cmd_generate,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ValidationError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except LayoutGenError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
