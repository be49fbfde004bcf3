"""Deterministic banner composition: font fitting with greedy line breaking,
black/white contrast color rules, center-alignment enforcement, regularity-
preserving jitter, and the final compositor.

Text measurement goes through a pluggable measurer. The default is a pure
monospace metrics table so every test reproduces without font files; glyphs
are drawn with a best-effort freetype face scaled into the measured cells, so
ink extents stay inside the measured box either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .elements import DesignSample, ImageElement
from .errors import DimensionError, RenderOverflowError, ValidationError
from .geometry import EPS_BOX, Layout, NormalizedBox
from .losses import overlap_loss

ALIGN_EPS = 1e-3
X_RELATIONS = ("left", "center_x", "right")
Y_RELATIONS = ("top", "center_y", "bottom")


@dataclass(frozen=True)
class RenderSpec:
    font_family: str = "Arial"
    min_font_size: int = 8
    max_font_size: Optional[int] = None  # None: bounded by the box height
    button_corner_radius: int = 6
    jitter_fraction: float = 0.2
    # per-class overrides: {"header": {"min_font_size": 14, "color": "white"}, ...}
    class_styles: dict = field(default_factory=dict)
    use_font_metrics: bool = False  # measure with the draw font instead of the table

    def __post_init__(self):
        if self.max_font_size is not None and self.min_font_size > self.max_font_size:
            raise ValidationError("min font size exceeds max font size")
        if not (0.0 <= self.jitter_fraction < 1.0):
            raise ValidationError("jitter fraction must lie in [0, 1)")

    def for_class(self, text_class: str) -> "RenderSpec":
        overrides = self.class_styles.get(text_class)
        if not overrides:
            return self
        allowed = {"font_family", "min_font_size", "max_font_size"}
        bad = set(overrides) - allowed - {"color"}
        if bad:
            raise ValidationError(f"unknown style overrides for {text_class}: {sorted(bad)}")
        from dataclasses import replace

        return replace(self, **{k: v for k, v in overrides.items() if k in allowed})

    def color_override(self, text_class: str) -> Optional[str]:
        return (self.class_styles.get(text_class) or {}).get("color")


# ---------------------------------------------------------------------------
# Text measurement


class MonospaceMeasurer:
    """Metrics table: 0.6 em advance, 1.2 em line height, integer-ceiled."""

    def char_width(self, size: int) -> int:
        return max(1, math.ceil(0.6 * size))

    def line_width(self, text: str, size: int) -> int:
        return len(text) * self.char_width(size)

    def line_height(self, size: int) -> int:
        return max(1, math.ceil(1.2 * size))


class FreetypeMeasurer:
    """Measures with the actual draw font; sizes are cached per point size."""

    def __init__(self, family: str = "Arial"):
        self.family = family
        self._cache: dict[int, ImageFont.FreeTypeFont] = {}

    def font(self, size: int):
        if size not in self._cache:
            self._cache[size] = _load_font(self.family, size)
        return self._cache[size]

    def line_width(self, text: str, size: int) -> int:
        return math.ceil(self.font(size).getlength(text))

    def line_height(self, size: int) -> int:
        ascent, descent = self.font(size).getmetrics()
        return max(1, ascent + descent)


_FONT_CANDIDATES = {
    "arial": ["arial.ttf", "Arial.ttf", "DejaVuSans.ttf"],
}


def _load_font(family: str, size: int):
    names = _FONT_CANDIDATES.get(family.lower(), [f"{family}.ttf", "DejaVuSans.ttf"])
    for name in names:
        try:
            return ImageFont.truetype(name, size)
        except OSError:
            continue
    return ImageFont.load_default(size)


def get_measurer(spec: RenderSpec):
    return FreetypeMeasurer(spec.font_family) if spec.use_font_metrics else MonospaceMeasurer()


# ---------------------------------------------------------------------------
# Fitting


def _wrap_lines(text: str, size: int, max_width: int, measurer) -> Optional[list[str]]:
    """Greedy word wrap; words wider than the box break at character level.
    Returns None when even a single character cannot fit."""
    words = text.split(" ")
    lines: list[str] = []
    current = ""

    def push(line):
        if line:
            lines.append(line)

    for word in words:
        candidate = f"{current} {word}" if current else word
        if measurer.line_width(candidate, size) <= max_width:
            current = candidate
            continue
        push(current)
        current = ""
        if measurer.line_width(word, size) <= max_width:
            current = word
            continue
        # character-level breaking before declaring overflow
        chunk = ""
        for ch in word:
            if measurer.line_width(chunk + ch, size) <= max_width:
                chunk += ch
            else:
                if not chunk:
                    return None
                lines.append(chunk)
                chunk = ch
                if measurer.line_width(chunk, size) > max_width:
                    return None
        current = chunk
    push(current)
    return lines or None


def _fits(text: str, size: int, width: int, height: int, measurer) -> Optional[list[str]]:
    lines = _wrap_lines(text, size, width, measurer)
    if lines is None:
        return None
    if len(lines) * measurer.line_height(size) > height:
        return None
    return lines


def fit_text_to_box(text: str, width: int, height: int, spec: RenderSpec = RenderSpec(),
                    measurer=None, element_id=None) -> tuple[int, list[str]]:
    """Largest integer font size whose greedy wrap fits both dimensions.

    Maximal by contract: the returned size fits and size + 1 does not.
    """
    if not text:
        raise ValidationError("cannot fit an empty string")
    if width < 1 or height < 1:
        raise DimensionError(f"box must be at least 1x1 px, got {width}x{height}")
    measurer = measurer or get_measurer(spec)
    lo = spec.min_font_size
    hi = spec.max_font_size if spec.max_font_size is not None else max(lo, height)
    if _fits(text, lo, width, height, measurer) is None:
        raise RenderOverflowError(
            f"text does not fit at minimum size {lo}: {text[:40]!r}",
            element_ids=[element_id] if element_id is not None else [],
        )
    best = lo
    low, high = lo, hi
    while low <= high:
        mid = (low + high) // 2
        if _fits(text, mid, width, height, measurer) is not None:
            best = mid
            low = mid + 1
        else:
            high = mid - 1
    # guard against any non-monotone measurer: walk to the true boundary
    while best + 1 <= hi and _fits(text, best + 1, width, height, measurer) is not None:
        best += 1
    lines = _fits(text, best, width, height, measurer)
    return best, lines


# ---------------------------------------------------------------------------
# Color rules


def relative_luminance(region: np.ndarray) -> float:
    """Mean 0.2126 R + 0.7152 G + 0.0722 B over [0, 1] channels."""
    region = np.asarray(region)
    if region.size == 0:
        raise ValidationError("empty region")
    rgb = region.reshape(-1, 3).astype(np.float64) / 255.0
    return float((rgb @ np.array([0.2126, 0.7152, 0.0722])).mean())


def pick_contrast_color(region: np.ndarray) -> str:
    """Black on light regions, white on dark ones; ties at 0.5 go black."""
    return "black" if relative_luminance(region) >= 0.5 else "white"


def pick_button_text_color(pad_color: str) -> str:
    if pad_color not in ("black", "white"):
        raise ValidationError(f"pad color must be black or white, got {pad_color!r}")
    return "white" if pad_color == "black" else "black"


# ---------------------------------------------------------------------------
# Layout post-processing


def enforce_center_alignment(layout: Layout) -> Layout:
    """Snap every box's horizontal center to the shared mean."""
    if len(layout) == 0:
        return layout
    mean_cx = float(np.mean([b.cx for b in layout.boxes]))
    boxes = tuple(NormalizedBox(b.cy, mean_cx, b.h, b.w) for b in layout.boxes)
    return Layout(boxes, layout.element_ids)


def alignment_structure(layout: Layout, eps: float = ALIGN_EPS) -> frozenset:
    """All (relation, i, j) pairs with a sub-eps delta; i < j."""
    pairs = []
    values = {
        "left": [b.left for b in layout.boxes],
        "center_x": [b.cx for b in layout.boxes],
        "right": [b.right for b in layout.boxes],
        "top": [b.top for b in layout.boxes],
        "center_y": [b.cy for b in layout.boxes],
        "bottom": [b.bottom for b in layout.boxes],
    }
    n = len(layout)
    for rel, vals in values.items():
        for i in range(n):
            for j in range(i + 1, n):
                if abs(vals[i] - vals[j]) < eps:
                    pairs.append((rel, i, j))
    return frozenset(pairs)


def _components(n: int, pairs: Sequence[tuple[int, int]]) -> list[list[int]]:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def _axis_components(structure: frozenset, n: int, relations) -> list[list[int]]:
    pairs = [(i, j) for rel, i, j in structure if rel in relations]
    return _components(n, pairs)


def _pair_intersections(arr: np.ndarray) -> np.ndarray:
    top = arr[:, 0] - arr[:, 2] / 2
    bottom = arr[:, 0] + arr[:, 2] / 2
    left = arr[:, 1] - arr[:, 3] / 2
    right = arr[:, 1] + arr[:, 3] / 2
    ih = np.clip(np.minimum(bottom[:, None], bottom[None, :]) - np.maximum(top[:, None], top[None, :]), 0, None)
    iw = np.clip(np.minimum(right[:, None], right[None, :]) - np.maximum(left[:, None], left[None, :]), 0, None)
    return ih, iw


def _shrink_new_overlaps(base: np.ndarray, cand: np.ndarray,
                         x_free: set[int], y_free: set[int]) -> np.ndarray:
    """Shrink boxes along the overlap axis to undo jitter-introduced overlap.
    Only boxes free of alignment pairs on the shrink axis are touched."""
    out = cand.copy()
    ih_base, iw_base = _pair_intersections(base)
    for _ in range(4):  # a few sweeps; leftovers fall to the caller's backoff
        ih, iw = _pair_intersections(out)
        inter = ih * iw
        inter_base = ih_base * iw_base
        changed = False
        n = out.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                if inter[i, j] <= inter_base[i, j] + 1e-12:
                    continue
                need_h = ih[i, j] + 1e-9
                need_w = iw[i, j] + 1e-9
                for idx, axis in ((i, "h"), (j, "h"), (i, "w"), (j, "w")):
                    free = y_free if axis == "h" else x_free
                    if idx not in free:
                        continue
                    k = 2 if axis == "h" else 3
                    need = need_h if axis == "h" else need_w
                    new_size = out[idx, k] - 2 * need
                    if new_size >= EPS_BOX:
                        out[idx, k] = new_size
                        changed = True
                        break
                ih, iw = _pair_intersections(out)
                inter = ih * iw
        if not changed:
            break
    return out


def jitter_layout(layout: Layout, fraction: float = 0.2, seed: int = 0) -> Layout:
    """Perturb box parameters by up to +/-fraction of their own size while
    keeping the input's alignment-group structure and not increasing overlap.

    Alignment groups move as rigid bodies (one shared offset per connected
    component and axis); introduced overlaps are shrunk away along the overlap
    axis where a box is alignment-free on that axis, and the whole draw backs
    off toward identity when constraints cannot be met.
    """
    if not (0.0 <= fraction < 1.0):
        raise ValidationError("jitter fraction must lie in [0, 1)")
    n = len(layout)
    if n == 0 or fraction == 0.0:
        return layout
    base = layout.to_tensor().numpy()
    structure = alignment_structure(layout)
    x_comps = _axis_components(structure, n, X_RELATIONS)
    y_comps = _axis_components(structure, n, Y_RELATIONS)
    x_free = {c[0] for c in x_comps if len(c) == 1}
    y_free = {c[0] for c in y_comps if len(c) == 1}
    base_overlap = float(overlap_loss(layout))
    rng = np.random.default_rng(seed)

    for attempt in range(24):
        scale = fraction * (0.5 ** max(0, attempt - 8))
        cand = base.copy()
        for comp in y_comps:
            if len(comp) == 1:
                i = comp[0]
                cand[i, 0] += rng.uniform(-scale, scale) * base[i, 2]
                cand[i, 2] = max(EPS_BOX, base[i, 2] * (1 + rng.uniform(-scale, scale)))
            else:
                amp = scale * min(base[k, 2] for k in comp)
                dy = rng.uniform(-amp, amp)
                for k in comp:
                    cand[k, 0] += dy
        for comp in x_comps:
            if len(comp) == 1:
                i = comp[0]
                cand[i, 1] += rng.uniform(-scale, scale) * base[i, 3]
                cand[i, 3] = max(EPS_BOX, base[i, 3] * (1 + rng.uniform(-scale, scale)))
            else:
                amp = scale * min(base[k, 3] for k in comp)
                dx = rng.uniform(-amp, amp)
                for k in comp:
                    cand[k, 1] += dx
        np.clip(cand[:, 0:2], 0.0, 1.0, out=cand[:, 0:2])
        cand = _shrink_new_overlaps(base, cand, x_free, y_free)
        result = Layout.from_tensor(cand, layout.element_ids)
        if alignment_structure(result) != structure:
            continue
        if float(overlap_loss(result)) <= base_overlap + 1e-12:
            return result
    return layout


# ---------------------------------------------------------------------------
# Composition


@dataclass
class RenderedElement:
    element_id: int
    pixel_box: tuple[int, int, int, int]  # (x0, y0, x1, y1)
    font_size: Optional[int] = None
    color: Optional[str] = None
    pad_color: Optional[str] = None


@dataclass
class RenderedDesign:
    image: np.ndarray  # HxWx3 uint8
    elements: list[RenderedElement]
    overflow_ids: list[int] = field(default_factory=list)


def _pixel_rect(box: NormalizedBox, H: int, W: int) -> tuple[int, int, int, int]:
    x0 = int(math.floor(box.left * W + 0.5))
    y0 = int(math.floor(box.top * H + 0.5))
    x1 = int(math.floor(box.right * W + 0.5))
    y1 = int(math.floor(box.bottom * H + 0.5))
    x0, y0 = max(0, min(x0, W - 1)), max(0, min(y0, H - 1))
    x1, y1 = max(x0 + 1, min(x1, W)), max(y0 + 1, min(y1, H))
    return x0, y0, x1, y1


def _draw_text_lines(canvas: Image.Image, rect, lines, size, color, spec, measurer):
    """Each line is rendered into its measured cell; glyphs that overshoot the
    cell are scaled down so ink never leaves the box."""
    x0, y0, x1, y1 = rect
    font = _load_font(spec.font_family, size)
    line_h = measurer.line_height(size)
    total_h = line_h * len(lines)
    y = y0 + max(0, ((y1 - y0) - total_h) // 2)
    fill = (0, 0, 0, 255) if color == "black" else (255, 255, 255, 255)
    for line in lines:
        cell_w = min(measurer.line_width(line, size), x1 - x0)
        if cell_w < 1 or not line.strip():
            y += line_h
            continue
        bbox = font.getbbox(line)
        ink_w, ink_h = max(1, bbox[2] - bbox[0]), max(1, bbox[3] - bbox[1])
        tile = Image.new("RGBA", (ink_w, ink_h), (0, 0, 0, 0))
        ImageDraw.Draw(tile).text((-bbox[0], -bbox[1]), line, font=font, fill=fill)
        if ink_w > cell_w or ink_h > line_h:
            ratio = min(cell_w / ink_w, line_h / ink_h)
            tile = tile.resize((max(1, int(ink_w * ratio)), max(1, int(ink_h * ratio))),
                               Image.Resampling.BILINEAR)
        px = x0 + max(0, (x1 - x0 - tile.width) // 2)
        py = y + max(0, (line_h - tile.height) // 2)
        canvas.paste(tile, (px, py), tile)
        y += line_h


def render_design(sample: DesignSample, spec: RenderSpec = RenderSpec(),
                  strict: bool = True) -> RenderedDesign:
    """Compose the final banner: patches resized into their boxes, buttons on
    contrast pads, texts fitted and colored by the luminance rule.

    Overflowing texts raise by default, naming every offender; with
    strict=False they are skipped and reported in overflow_ids instead.
    """
    bg = sample.background
    H, W = bg.height, bg.width
    canvas = Image.fromarray(bg.pixels.copy(), "RGB").convert("RGBA")
    measurer = get_measurer(spec)
    rendered: list[RenderedElement] = []
    overflows: list[int] = []

    for idx, (element, box) in enumerate(zip(sample.foreground, sample.layout.boxes)):
        element_id = sample.layout.element_ids[idx]
        rect = _pixel_rect(box, H, W)
        x0, y0, x1, y1 = rect
        info = RenderedElement(element_id=element_id, pixel_box=rect)
        if isinstance(element, ImageElement):
            patch = Image.fromarray(element.patch, "RGB").resize(
                (x1 - x0, y1 - y0), Image.Resampling.BILINEAR
            )
            canvas.paste(patch, (x0, y0))
            rendered.append(info)
            continue

        region = bg.pixels[y0:y1, x0:x1]
        contrast = pick_contrast_color(region)
        class_spec = spec.for_class(element.text_class)
        draw = ImageDraw.Draw(canvas)
        if element.text_class == "button":
            pad_color = contrast
            text_color = pick_button_text_color(pad_color)
            fill = (0, 0, 0, 255) if pad_color == "black" else (255, 255, 255, 255)
            draw.rounded_rectangle([x0, y0, x1 - 1, y1 - 1],
                                   radius=spec.button_corner_radius, fill=fill)
            info.pad_color = pad_color
        else:
            text_color = spec.color_override(element.text_class) or contrast
        info.color = text_color

        margin = max(1, (y1 - y0) // 12)
        inner_w, inner_h = (x1 - x0) - 2 * margin, (y1 - y0) - 2 * margin
        try:
            size, lines = fit_text_to_box(element.string, max(1, inner_w), max(1, inner_h),
                                          class_spec, measurer, element_id=element_id)
        except RenderOverflowError:
            overflows.append(element_id)
            rendered.append(info)
            continue
        info.font_size = size
        _draw_text_lines(canvas, (x0 + margin, y0 + margin, x1 - margin, y1 - margin),
                         lines, size, text_color, class_spec, measurer)
        rendered.append(info)

    if overflows and strict:
        raise RenderOverflowError(
            f"text overflow in elements {overflows}", element_ids=overflows
        )
    return RenderedDesign(image=np.asarray(canvas.convert("RGB")), elements=rendered,
                          overflow_ids=overflows)
