"""Normalized box types and differentiable pairwise box geometry.

Boxes are stored center+size as (cy, cx, h, w), every field a fraction of the
background image size. Edge form (top/bottom/left/right) is always derived,
never stored. Tensor helpers operate on trailing-dimension-4 tensors so the
same code serves losses (batched, autograd) and single-pair metric queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import torch

from .errors import DimensionError, ShapeError, ValidationError

EPS_BOX = 1e-4

# Fixed order of the six pairwise alignment relations.
ALIGNMENT_RELATIONS = ("left", "center_x", "right", "top", "center_y", "bottom")


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


@dataclass(frozen=True)
class NormalizedBox:
    """One layout box; constructor clamps into the valid domain.

    Degenerate sizes are floored at EPS_BOX instead of rejected so that every
    downstream loss stays finite and differentiable.
    """

    cy: float
    cx: float
    h: float
    w: float

    def __post_init__(self):
        for name in ("cy", "cx", "h", "w"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"box field {name} is not finite: {v!r}")
        object.__setattr__(self, "cy", _clamp01(float(self.cy)))
        object.__setattr__(self, "cx", _clamp01(float(self.cx)))
        object.__setattr__(self, "h", max(EPS_BOX, _clamp01(float(self.h))))
        object.__setattr__(self, "w", max(EPS_BOX, _clamp01(float(self.w))))

    @property
    def top(self) -> float:
        return self.cy - self.h / 2.0

    @property
    def bottom(self) -> float:
        return self.cy + self.h / 2.0

    @property
    def left(self) -> float:
        return self.cx - self.w / 2.0

    @property
    def right(self) -> float:
        return self.cx + self.w / 2.0

    @property
    def area(self) -> float:
        return self.h * self.w

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cy, self.cx, self.h, self.w)

    def as_tensor(self, dtype=torch.float64) -> torch.Tensor:
        return torch.tensor(self.as_tuple(), dtype=dtype)

    def shifted(self, dy: float = 0.0, dx: float = 0.0) -> "NormalizedBox":
        return NormalizedBox(self.cy + dy, self.cx + dx, self.h, self.w)


def validate_box_values(cy: float, cx: float, h: float, w: float) -> None:
    """Strict range check for boundary inputs (loaders, API edits).

    Unlike the NormalizedBox constructor this rejects instead of clamping.
    """
    vals = {"cy": cy, "cx": cx, "h": h, "w": w}
    for name, v in vals.items():
        if not isinstance(v, (int, float)) or not math.isfinite(float(v)):
            raise ValidationError(f"box field {name} is not a finite number: {v!r}")
        if v < 0.0 or v > 1.0:
            raise ValidationError(f"box field {name}={v} outside [0, 1]")


@dataclass(frozen=True)
class Layout:
    """Ordered boxes with ids linking each box to a foreground element.

    Order is stable and must match the conditioning foreground order; box
    correspondence is positional, so ids exist mainly for edit round trips.
    """

    boxes: tuple[NormalizedBox, ...]
    element_ids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        boxes = tuple(self.boxes)
        ids = tuple(self.element_ids) if self.element_ids else tuple(range(len(boxes)))
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "element_ids", ids)
        if len(self.boxes) != len(self.element_ids):
            raise ShapeError(
                f"{len(self.boxes)} boxes but {len(self.element_ids)} element ids"
            )
        if len(set(self.element_ids)) != len(self.element_ids):
            raise ValidationError("element ids must be unique")

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def to_tensor(self, dtype=torch.float64) -> torch.Tensor:
        if not self.boxes:
            return torch.zeros((0, 4), dtype=dtype)
        return torch.stack([b.as_tensor(dtype) for b in self.boxes])

    @classmethod
    def from_tensor(cls, t, element_ids: Sequence[int] | None = None) -> "Layout":
        t = torch.as_tensor(t, dtype=torch.float64)
        if t.ndim != 2 or t.shape[-1] != 4:
            raise ShapeError(f"expected (N, 4) box tensor, got {tuple(t.shape)}")
        boxes = tuple(NormalizedBox(*row.tolist()) for row in t)
        ids = tuple(element_ids) if element_ids is not None else tuple(range(len(boxes)))
        return cls(boxes, ids)

    def replaced(self, index: int, box: NormalizedBox) -> "Layout":
        boxes = list(self.boxes)
        boxes[index] = box
        return Layout(tuple(boxes), self.element_ids)


BoxLike = Union[NormalizedBox, Sequence[float], torch.Tensor]


def as_box_tensor(b: BoxLike, dtype=torch.float64) -> torch.Tensor:
    """Coerce to a box tensor. Existing float tensors keep their dtype (and
    autograd graph); everything else lands in `dtype`."""
    if isinstance(b, NormalizedBox):
        return b.as_tensor(dtype)
    if isinstance(b, Layout):
        return b.to_tensor(dtype)
    if isinstance(b, torch.Tensor) and torch.is_floating_point(b):
        return b
    return torch.as_tensor(b, dtype=dtype)


# ---------------------------------------------------------------------------
# Pixel <-> normalized conversion


def normalize_box(y: float, x: float, h: float, w: float, H: int, W: int) -> NormalizedBox:
    """Normalize a pixel-space center+size box by its image size."""
    if H <= 0 or W <= 0:
        raise DimensionError(f"image size must be positive, got H={H}, W={W}")
    return NormalizedBox(y / H, x / W, h / H, w / W)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def denormalize_box(b: NormalizedBox, H: int, W: int) -> tuple[int, int, int, int]:
    """Map a normalized box back to integer pixels; sizes floored at 1 px."""
    if H <= 0 or W <= 0:
        raise DimensionError(f"image size must be positive, got H={H}, W={W}")
    y = _round_half_up(b.cy * H)
    x = _round_half_up(b.cx * W)
    h = max(1, _round_half_up(b.h * H))
    w = max(1, _round_half_up(b.w * W))
    return (y, x, h, w)


# ---------------------------------------------------------------------------
# Tensor geometry. All functions accept (..., 4) tensors in (cy, cx, h, w)
# order and broadcast elementwise over leading dimensions.


def box_edges(b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Return (top, bottom, left, right) derived edge coordinates."""
    cy, cx, h, w = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return cy - h / 2, cy + h / 2, cx - w / 2, cx + w / 2


def _pair_areas(a: torch.Tensor, b: torch.Tensor):
    """Intersection, per-box, union, and hull areas, all derived from the same
    edge expressions so that identical boxes yield exact equalities."""
    at, ab, al, ar = box_edges(a)
    bt, bb, bl, br = box_edges(b)
    ih = (torch.minimum(ab, bb) - torch.maximum(at, bt)).clamp(min=0)
    iw = (torch.minimum(ar, br) - torch.maximum(al, bl)).clamp(min=0)
    inter = ih * iw
    area_a = (ab - at) * (ar - al)
    area_b = (bb - bt) * (br - bl)
    union = area_a + area_b - inter
    hull = (torch.maximum(ab, bb) - torch.minimum(at, bt)) * (
        torch.maximum(ar, br) - torch.minimum(al, bl)
    )
    return inter, area_a, area_b, union, hull


def pair_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Intersection over union of box pairs; 0 for disjoint pairs."""
    inter, _, _, union, _ = _pair_areas(a, b)
    return (inter / union.clamp(min=EPS_BOX * EPS_BOX)).clamp(0.0, 1.0)


def pair_giou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Generalized IoU: IoU minus the hull area not covered by the union.

    Lives in (-1, 1]; differentiable w.r.t. all eight coordinates.
    """
    inter, _, _, union, hull = _pair_areas(a, b)
    hull = hull.clamp(min=EPS_BOX * EPS_BOX)
    iou = (inter / union.clamp(min=EPS_BOX * EPS_BOX)).clamp(0.0, 1.0)
    return iou - (hull - union) / hull


def pair_overlap_fraction(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Fraction of box a covered by box b. Asymmetric by design: the
    regularizer penalizes each box for being covered, which symmetric IoU
    would under-report when a small box sits inside a large one."""
    inter, area_a, _, _, _ = _pair_areas(a, b)
    return (inter / area_a.clamp(min=EPS_BOX * EPS_BOX)).clamp(0.0, 1.0)


def pair_alignment_deltas(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Six non-negative deltas, ordered (left, center_x, right, top, center_y, bottom)."""
    at, ab, al, ar = box_edges(a)
    bt, bb, bl, br = box_edges(b)
    return torch.stack(
        [
            (al - bl).abs(),
            (a[..., 1] - b[..., 1]).abs(),
            (ar - br).abs(),
            (at - bt).abs(),
            (a[..., 0] - b[..., 0]).abs(),
            (ab - bb).abs(),
        ],
        dim=-1,
    )


# ---------------------------------------------------------------------------
# Scalar convenience wrappers over NormalizedBox values (always float64).


def box_iou(a: BoxLike, b: BoxLike) -> float:
    return float(pair_iou(as_box_tensor(a).double(), as_box_tensor(b).double()))


def box_giou(a: BoxLike, b: BoxLike) -> float:
    return float(pair_giou(as_box_tensor(a).double(), as_box_tensor(b).double()))


def overlap_fraction(a: BoxLike, b: BoxLike) -> float:
    return float(pair_overlap_fraction(as_box_tensor(a).double(), as_box_tensor(b).double()))


def alignment_deltas(a: BoxLike, b: BoxLike) -> tuple[float, ...]:
    return tuple(pair_alignment_deltas(as_box_tensor(a).double(), as_box_tensor(b).double()).tolist())
