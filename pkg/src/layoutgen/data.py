"""Dataset schema, loaders, deterministic synthetic data, and the 90/10 split.

Manifests are versioned JSON; image data lives in sibling PNG files referenced
by relative path. Boxes are stored normalized so records stay resolution-
independent. The synthetic generator plants regular layouts (center-aligned
columns, zero overlap) with text lengths correlated to box areas, standing in
for the full-scale annotated corpus at desk scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageFilter

from .elements import (
    TEXT_CLASSES,
    BackgroundImage,
    DesignSample,
    ForegroundSet,
    ImageElement,
    TextElement,
)
from .errors import ConfigurationError, ValidationError
from .geometry import Layout, NormalizedBox, validate_box_values

SCHEMA_VERSION = 1


@dataclass
class AnnotationElement:
    type: str  # "text" | "image"
    box: list[float]  # (cy, cx, h, w) normalized
    text_class: Optional[str] = None
    string: Optional[str] = None
    patch_path: Optional[str] = None

    def to_dict(self) -> dict:
        d: dict = {"type": self.type, "box": list(self.box)}
        if self.type == "text":
            d["class"] = self.text_class
            d["string"] = self.string
        else:
            d["patch_path"] = self.patch_path
        return d


@dataclass
class AnnotationRecord:
    record_id: str
    background_path: str
    width: int
    height: int
    elements: list[AnnotationElement]

    def to_dict(self) -> dict:
        return {
            "id": self.record_id,
            "background_path": self.background_path,
            "width": self.width,
            "height": self.height,
            "elements": [e.to_dict() for e in self.elements],
        }


@dataclass
class DatasetManifest:
    records: list[AnnotationRecord]
    schema_version: int = SCHEMA_VERSION
    split_seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "split_seed": self.split_seed,
            "records": [r.to_dict() for r in self.records],
        }


def _validate_element(raw: dict, record_id: str, index: int) -> AnnotationElement:
    where = f"record {record_id!r} element {index}"
    etype = raw.get("type")
    if etype not in ("text", "image"):
        raise ValidationError(f"{where}: unknown element type {etype!r}")
    box = raw.get("box")
    if not isinstance(box, (list, tuple)) or len(box) != 4:
        raise ValidationError(f"{where}: box must be [cy, cx, h, w]")
    try:
        validate_box_values(*box)
    except ValidationError as err:
        raise ValidationError(f"{where}: {err}") from None
    if etype == "text":
        cls = raw.get("class")
        if cls not in TEXT_CLASSES:
            raise ValidationError(f"{where}: class {cls!r} not one of {TEXT_CLASSES}")
        if not isinstance(raw.get("string"), str):
            raise ValidationError(f"{where}: text element needs a string")
        return AnnotationElement(type="text", box=list(map(float, box)),
                                 text_class=cls, string=raw["string"])
    if not isinstance(raw.get("patch_path"), str):
        raise ValidationError(f"{where}: image element needs a patch_path")
    return AnnotationElement(type="image", box=list(map(float, box)),
                             patch_path=raw["patch_path"])


def manifest_from_dict(payload: dict) -> DatasetManifest:
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema version {version!r}")
    records = []
    seen_ids = set()
    for raw in payload.get("records", []):
        rid = raw.get("id")
        if not rid or not isinstance(rid, str):
            raise ValidationError("record missing string id")
        if rid in seen_ids:
            raise ValidationError(f"duplicate record id {rid!r}")
        seen_ids.add(rid)
        for key in ("background_path", "width", "height"):
            if key not in raw:
                raise ValidationError(f"record {rid!r} missing field {key}")
        elements = [
            _validate_element(e, rid, i) for i, e in enumerate(raw.get("elements", []))
        ]
        records.append(AnnotationRecord(
            record_id=rid,
            background_path=raw["background_path"],
            width=int(raw["width"]),
            height=int(raw["height"]),
            elements=elements,
        ))
    return DatasetManifest(records=records, schema_version=version,
                           split_seed=payload.get("split_seed"))


def load_dataset(path) -> DatasetManifest:
    """Parse and validate a manifest file; violations name record and field."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        payload = json.load(fh)
    manifest = manifest_from_dict(payload)
    return manifest


def save_dataset(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def record_to_sample(record: AnnotationRecord, root) -> DesignSample:
    """Materialize one record, reading its image files from `root`."""
    root = Path(root)
    bg_path = root / record.background_path
    if not bg_path.exists():
        raise FileNotFoundError(f"record {record.record_id!r}: missing {bg_path}")
    background = BackgroundImage(np.asarray(Image.open(bg_path).convert("RGB")))
    elements = []
    boxes = []
    for e in record.elements:
        boxes.append(NormalizedBox(*e.box))
        if e.type == "text":
            elements.append(TextElement(e.string, e.text_class))
        else:
            patch_path = root / e.patch_path
            if not patch_path.exists():
                raise FileNotFoundError(
                    f"record {record.record_id!r}: missing {patch_path}"
                )
            elements.append(ImageElement(np.asarray(Image.open(patch_path).convert("RGB"))))
    return DesignSample(
        background=background,
        foreground=ForegroundSet(tuple(elements)),
        layout=Layout(tuple(boxes)),
        sample_id=record.record_id,
    )


def samples_from_manifest(manifest: DatasetManifest, root) -> list[DesignSample]:
    return [record_to_sample(r, root) for r in manifest.records]


def split_train_test(manifest: DatasetManifest, seed: int) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic shuffled 90/10 partition."""
    n = len(manifest.records)
    if n < 10:
        raise ConfigurationError(f"need at least 10 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(0.9 * n))
    n_train = min(max(n_train, 1), n - 1)
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train:].tolist())
    train = DatasetManifest([manifest.records[i] for i in train_idx], split_seed=seed)
    test = DatasetManifest([manifest.records[i] for i in test_idx], split_seed=seed)
    return train, test


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SynthGrammar:
    """Controls for planted layouts and backgrounds."""

    resolution: int = 256
    min_elements: int = 2
    max_elements: int = 5
    image_element_prob: float = 0.25
    background_kinds: tuple[str, ...] = ("gradient", "noise", "plain")
    chars_per_unit_area: float = 600.0
    columns: int = 1  # 2 plants a two-group banner; needs >= 4 elements


_WORDS = (
    "sale big spring summer weekend final mega save extra deal today only "
    "fresh new style classic premium neat bold smart happy bright daily "
    "shop order start join taste enjoy relax explore upgrade discover"
).split()

_CLASS_SHAPES = {
    "header": ((0.10, 0.17), (0.45, 0.72)),
    "body": ((0.08, 0.13), (0.40, 0.62)),
    "disclaimer": ((0.045, 0.07), (0.30, 0.50)),
    "button": ((0.07, 0.10), (0.20, 0.34)),
    "image": ((0.14, 0.24), (0.25, 0.45)),
}


def _synth_background(rng: np.random.Generator, res: int, kind: str) -> np.ndarray:
    if kind == "plain":
        color = rng.integers(30, 226, size=3)
        return np.tile(color.astype(np.uint8), (res, res, 1))
    if kind == "gradient":
        c1 = rng.integers(0, 256, size=3).astype(np.float64)
        c2 = rng.integers(0, 256, size=3).astype(np.float64)
        axis = rng.integers(0, 2)
        ramp = np.linspace(0.0, 1.0, res)
        grid = ramp[:, None] if axis == 0 else ramp[None, :]
        img = c1[None, None, :] * (1 - grid[..., None]) + c2[None, None, :] * grid[..., None]
        return img.astype(np.uint8)
    # smooth noise field
    small = rng.integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
    pil = Image.fromarray(small, "RGB").resize((res, res), Image.Resampling.BILINEAR)
    return np.asarray(pil.filter(ImageFilter.GaussianBlur(radius=res / 32)))


def _synth_patch(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    c1 = rng.integers(0, 256, size=3)
    c2 = rng.integers(0, 256, size=3)
    tile = rng.integers(4, 12)
    ys, xs = np.mgrid[0:size, 0:size]
    checker = ((ys // tile + xs // tile) % 2).astype(bool)
    img = np.where(checker[..., None], c1[None, None, :], c2[None, None, :])
    return img.astype(np.uint8)


def _synth_text(rng: np.random.Generator, area: float, chars_per_unit_area: float) -> str:
    target = int(np.clip(area * chars_per_unit_area * rng.uniform(0.85, 1.15), 4, 140))
    words = []
    length = 0
    while length < target:
        w = _WORDS[rng.integers(0, len(_WORDS))]
        words.append(w)
        length += len(w) + (1 if length else 0)
    text = " ".join(words)
    return text


def _column_classes(rng: np.random.Generator, n: int, grammar: SynthGrammar) -> list[str]:
    classes = ["header"]
    for _ in range(n - 2):
        classes.append("image" if rng.uniform() < grammar.image_element_prob else "body")
    if n >= 2:
        classes.append("button" if rng.uniform() < 0.8 else "disclaimer")
    return classes


def _stack_column(rng: np.random.Generator, classes: list[str], cx: float,
                  w_cap: Optional[float] = None):
    y = float(rng.uniform(0.05, 0.14))
    boxes, kinds = [], []
    for cls in classes:
        (h_lo, h_hi), (w_lo, w_hi) = _CLASS_SHAPES[cls]
        h = float(rng.uniform(h_lo, h_hi))
        w = float(rng.uniform(w_lo, w_hi))
        if w_cap is not None:
            w = min(w, w_cap)
        if y + h > 0.97:
            break
        boxes.append(NormalizedBox(y + h / 2, cx, h, w))
        kinds.append(cls)
        y += h + float(rng.uniform(0.02, 0.05))
    return boxes, kinds


def _plant_column(rng: np.random.Generator, grammar: SynthGrammar):
    """Center-aligned, non-overlapping, class-ordered column(s)."""
    n = int(rng.integers(grammar.min_elements, grammar.max_elements + 1))
    if grammar.columns >= 2 and n >= 4:
        # two vertically stacked groups in disjoint x bands
        cx_left = float(rng.uniform(0.22, 0.30))
        cx_right = float(rng.uniform(0.68, 0.78))
        n_left = n // 2
        boxes, kinds = _stack_column(rng, _column_classes(rng, n_left, grammar),
                                     cx_left, w_cap=0.34)
        more_boxes, more_kinds = _stack_column(rng, _column_classes(rng, n - n_left, grammar),
                                               cx_right, w_cap=0.34)
        return boxes + more_boxes, kinds + more_kinds
    cx = float(rng.uniform(0.32, 0.68))
    return _stack_column(rng, _column_classes(rng, n, grammar), cx)


def synth_samples(count: int, seed: int, grammar: SynthGrammar = SynthGrammar()) -> list[DesignSample]:
    """Deterministic in-memory synthetic samples; planted layouts are regular
    by construction (zero overlap, zero misalignment)."""
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    samples = []
    for idx in range(count):
        rng = np.random.default_rng((seed, idx))
        kind = grammar.background_kinds[rng.integers(0, len(grammar.background_kinds))]
        bg = _synth_background(rng, grammar.resolution, kind)
        boxes, kinds = _plant_column(rng, grammar)
        elements = []
        for box, cls in zip(boxes, kinds):
            if cls == "image":
                elements.append(ImageElement(_synth_patch(rng)))
            else:
                elements.append(TextElement(_synth_text(rng, box.area, grammar.chars_per_unit_area), cls))
        samples.append(DesignSample(
            background=BackgroundImage(bg),
            foreground=ForegroundSet(tuple(elements)),
            layout=Layout(tuple(boxes)),
            sample_id=f"synth-{seed}-{idx:04d}",
        ))
    return samples


def synth_dataset_generate(count: int, seed: int, out_dir,
                           grammar: SynthGrammar = SynthGrammar()) -> DatasetManifest:
    """Write a synthetic dataset (PNG images plus manifest) under out_dir."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for sample in synth_samples(count, seed, grammar):
        rid = sample.sample_id
        bg_rel = f"images/{rid}.png"
        Image.fromarray(sample.background.pixels, "RGB").save(out_dir / bg_rel)
        elements = []
        for i, (element, box) in enumerate(zip(sample.foreground, sample.layout.boxes)):
            if isinstance(element, TextElement):
                elements.append(AnnotationElement(
                    type="text", box=list(box.as_tuple()),
                    text_class=element.text_class, string=element.string,
                ))
            else:
                patch_rel = f"images/{rid}_e{i}.png"
                Image.fromarray(element.patch, "RGB").save(out_dir / patch_rel)
                elements.append(AnnotationElement(
                    type="image", box=list(box.as_tuple()), patch_path=patch_rel,
                ))
        records.append(AnnotationRecord(
            record_id=rid, background_path=bg_rel,
            width=sample.background.width, height=sample.background.height,
            elements=elements,
        ))
    manifest = DatasetManifest(records=records)
    save_dataset(manifest, out_dir / "manifest.json")
    return manifest


def mask_random_regions(bg: BackgroundImage, seed: int,
                        avoid: Sequence[NormalizedBox] = ()) -> BackgroundImage:
    """Blur 1-3 random rectangles (each at most 10% of the image) that avoid
    the ground-truth boxes, hiding inpainting-style shortcuts."""
    h, w = bg.height, bg.width
    rng = np.random.default_rng(seed)
    blurred = np.asarray(
        Image.fromarray(bg.pixels, "RGB").filter(ImageFilter.GaussianBlur(radius=max(2, min(h, w) // 16)))
    )
    out = bg.pixels.copy()
    avoid_px = [
        (
            max(0, int(b.top * h)), min(h, int(math.ceil(b.bottom * h))),
            max(0, int(b.left * w)), min(w, int(math.ceil(b.right * w))),
        )
        for b in avoid
    ]
    n_regions = int(rng.integers(1, 4))
    placed = 0
    attempts = 0
    while placed < n_regions and attempts < 200:
        attempts += 1
        rh = int(rng.integers(max(2, h // 16), max(3, int(h * 0.32))))
        rw = int(rng.integers(max(2, w // 16), max(3, int(w * 0.32))))
        if rh * rw > 0.10 * h * w:
            continue
        y0 = int(rng.integers(0, max(1, h - rh)))
        x0 = int(rng.integers(0, max(1, w - rw)))
        y1, x1 = y0 + rh, x0 + rw
        hits = any(not (y1 <= at or y0 >= ab or x1 <= al or x0 >= ar)
                   for at, ab, al, ar in avoid_px)
        if hits:
            continue
        out[y0:y1, x0:x1] = blurred[y0:y1, x0:x1]
        placed += 1
    return BackgroundImage(out)
