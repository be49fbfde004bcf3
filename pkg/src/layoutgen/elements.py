"""Foreground/background domain types shared by conditioning, data, and rendering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DimensionError, ShapeError, ValidationError
from .geometry import Layout

TEXT_CLASSES = ("header", "body", "disclaimer", "button")

# User-facing label aliases accepted at the service boundary only; manifest
# files must use the canonical four classes.
CLASS_ALIASES = {"footnote": "disclaimer"}


def canonical_text_class(name: str) -> str:
    lowered = name.strip().lower()
    lowered = CLASS_ALIASES.get(lowered, lowered)
    if lowered not in TEXT_CLASSES:
        raise ValidationError(f"unknown text class {name!r}")
    return lowered


def _check_rgb(pixels: np.ndarray, what: str) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"{what} must be HxWx3, got shape {pixels.shape}")
    if pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise DimensionError(f"{what} must be at least 1x1, got shape {pixels.shape}")
    if pixels.dtype != np.uint8:
        raise ValidationError(f"{what} must be 8-bit channels, got dtype {pixels.dtype}")
    return pixels


@dataclass(frozen=True)
class BackgroundImage:
    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _check_rgb(self.pixels, "background"))

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


@dataclass(frozen=True)
class TextElement:
    string: str
    text_class: str

    def __post_init__(self):
        object.__setattr__(self, "text_class", canonical_text_class(self.text_class))

    @property
    def length(self) -> int:
        return len(self.string)


@dataclass(frozen=True)
class ImageElement:
    patch: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "patch", _check_rgb(self.patch, "image patch"))


ForegroundElement = Union[TextElement, ImageElement]


@dataclass(frozen=True)
class ForegroundSet:
    elements: tuple[ForegroundElement, ...]

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        for e in self.elements:
            if not isinstance(e, (TextElement, ImageElement)):
                raise ValidationError(f"unsupported foreground element {type(e).__name__}")

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @property
    def texts(self) -> tuple[TextElement, ...]:
        return tuple(e for e in self.elements if isinstance(e, TextElement))

    @property
    def images(self) -> tuple[ImageElement, ...]:
        return tuple(e for e in self.elements if isinstance(e, ImageElement))


@dataclass(frozen=True)
class DesignSample:
    """One dataset record: background, foreground conditions, ground-truth layout."""

    background: BackgroundImage
    foreground: ForegroundSet
    layout: Layout
    sample_id: str = ""
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.layout) != len(self.foreground):
            raise ShapeError(
                f"layout has {len(self.layout)} boxes for "
                f"{len(self.foreground)} foreground elements"
            )
