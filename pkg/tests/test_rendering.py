"""Renderer: fit maximality, contrast rules, jitter regularity, determinism."""

import numpy as np
import pytest

from layoutgen.elements import (
    BackgroundImage,
    DesignSample,
    ForegroundSet,
    ImageElement,
    TextElement,
)
from layoutgen.errors import DimensionError, RenderOverflowError, ValidationError
from layoutgen.geometry import Layout, NormalizedBox
from layoutgen.losses import misalignment_loss, overlap_loss
from layoutgen.rendering import (
    MonospaceMeasurer,
    RenderSpec,
    _fits,
    alignment_structure,
    enforce_center_alignment,
    fit_text_to_box,
    jitter_layout,
    pick_button_text_color,
    pick_contrast_color,
    relative_luminance,
    render_design,
)

SPEC = RenderSpec()
MEASURER = MonospaceMeasurer()


class TestFitTextToBox:
    def test_single_char_hits_upper_bound(self):
        size, lines = fit_text_to_box("A", 4000, 500, SPEC, MEASURER)
        # bounded by the box height: ceil(1.2 s) <= 500
        assert size == 416
        assert lines == ["A"]

    def test_explicit_max_clamp(self):
        spec = RenderSpec(max_font_size=40)
        size, _ = fit_text_to_box("A", 4000, 500, spec, MEASURER)
        assert size == 40

    def test_empty_string_rejected(self):
        with pytest.raises(ValidationError):
            fit_text_to_box("", 100, 100, SPEC, MEASURER)

    def test_degenerate_box_rejected(self):
        with pytest.raises(DimensionError):
            fit_text_to_box("hi", 0, 10, SPEC, MEASURER)

    def test_overflow_names_element(self):
        with pytest.raises(RenderOverflowError) as err:
            fit_text_to_box("this will never fit", 10, 5, SPEC, MEASURER, element_id=7)
        assert err.value.element_ids == [7]

    def test_maximality_property(self, rng):
        words = ["spring", "sale", "today", "now", "big", "savings", "extra", "deal"]
        for _ in range(200):
            text = " ".join(rng.choice(words, size=rng.integers(1, 8)))
            width = int(rng.integers(30, 400))
            height = int(rng.integers(20, 200))
            try:
                size, lines = fit_text_to_box(text, width, height, SPEC, MEASURER)
            except RenderOverflowError:
                assert _fits(text, SPEC.min_font_size, width, height, MEASURER) is None
                continue
            assert _fits(text, size, width, height, MEASURER) is not None
            assert _fits(text, size + 1, width, height, MEASURER) is None
            # returned break positions re-measure inside the box
            assert all(MEASURER.line_width(l, size) <= width for l in lines)
            assert len(lines) * MEASURER.line_height(size) <= height

    def test_long_word_breaks_at_characters(self):
        size, lines = fit_text_to_box("supercalifragilistic", 60, 200, SPEC, MEASURER)
        assert len(lines) > 1
        assert "".join(lines) == "supercalifragilistic"


class TestContrastColors:
    def test_white_region_black_text(self):
        region = np.full((4, 4, 3), 255, dtype=np.uint8)
        assert pick_contrast_color(region) == "black"

    def test_black_region_white_text(self):
        region = np.zeros((4, 4, 3), dtype=np.uint8)
        assert pick_contrast_color(region) == "white"

    def test_mid_gray_tie_goes_black(self):
        # solve mean luminance exactly 0.5: uniform gray at 127.5 is not
        # representable, so use half black half white pixels
        region = np.zeros((2, 2, 3), dtype=np.uint8)
        region[0] = 255
        assert relative_luminance(region) == pytest.approx(0.5)
        assert pick_contrast_color(region) == "black"

    def test_luminance_threshold_rule(self, rng):
        for _ in range(100):
            color = rng.integers(0, 256, size=3)
            region = np.full((3, 3, 3), color, dtype=np.uint8)
            expected = "black" if relative_luminance(region) >= 0.5 else "white"
            assert pick_contrast_color(region) == expected

    def test_button_text_opposes_pad(self):
        assert pick_button_text_color("black") == "white"
        assert pick_button_text_color("white") == "black"

    def test_rule_chaining_white_background(self):
        region = np.full((4, 4, 3), 255, dtype=np.uint8)
        pad = pick_contrast_color(region)
        assert pad == "black"
        assert pick_button_text_color(pad) == "white"


class TestCenterAlignment:
    def test_already_aligned_identity(self):
        lay = Layout((NormalizedBox(0.2, 0.5, 0.1, 0.2), NormalizedBox(0.6, 0.5, 0.1, 0.4)))
        out = enforce_center_alignment(lay)
        assert out.boxes == lay.boxes

    def test_mean_rule(self):
        lay = Layout((NormalizedBox(0.2, 0.4, 0.1, 0.2), NormalizedBox(0.6, 0.6, 0.1, 0.2)))
        out = enforce_center_alignment(lay)
        assert all(b.cx == pytest.approx(0.5) for b in out.boxes)
        assert [b.cy for b in out.boxes] == [0.2, 0.6]

    def test_zero_horizontal_center_deltas(self, rng):
        boxes = tuple(
            NormalizedBox(float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.2, 0.8)), 0.1, 0.2)
            for _ in range(4)
        )
        out = enforce_center_alignment(Layout(boxes))
        assert float(misalignment_loss(out)) == pytest.approx(0.0, abs=1e-12)


def regular_layout(rng, n=4):
    """Random center-aligned non-overlapping column, like planted layouts."""
    cx = float(rng.uniform(0.3, 0.7))
    tops = 0.05
    boxes = []
    for _ in range(n):
        h = float(rng.uniform(0.06, 0.16))
        w = float(rng.uniform(0.2, 0.5))
        if tops + h > 0.98:
            break
        boxes.append(NormalizedBox(tops + h / 2, cx, h, w))
        tops += h + float(rng.uniform(0.02, 0.06))
    return Layout(tuple(boxes))


class TestJitter:
    def test_zero_fraction_identity(self, rng):
        lay = regular_layout(rng)
        assert jitter_layout(lay, 0.0, seed=1) is lay

    def test_alignment_structure_preserved(self, rng):
        for k in range(50):
            lay = regular_layout(rng)
            out = jitter_layout(lay, 0.2, seed=k)
            assert alignment_structure(out) == alignment_structure(lay)

    def test_overlap_never_increases(self, rng):
        for k in range(50):
            lay = regular_layout(rng)
            out = jitter_layout(lay, 0.2, seed=k)
            assert float(overlap_loss(out)) <= float(overlap_loss(lay)) + 1e-9

    def test_deterministic_per_seed(self, rng):
        lay = regular_layout(rng)
        a = jitter_layout(lay, 0.2, seed=9)
        b = jitter_layout(lay, 0.2, seed=9)
        assert a.boxes == b.boxes

    def test_actually_moves_boxes(self, rng):
        lay = regular_layout(rng)
        out = jitter_layout(lay, 0.2, seed=3)
        assert out.boxes != lay.boxes

    def test_outputs_valid_boxes(self, rng):
        for k in range(20):
            out = jitter_layout(regular_layout(rng), 0.3, seed=k)
            for b in out.boxes:
                assert 0.0 <= b.cy <= 1.0 and 0.0 <= b.cx <= 1.0
                assert b.h >= 1e-4 and b.w >= 1e-4

    def test_invalid_fraction(self, rng):
        with pytest.raises(ValidationError):
            jitter_layout(regular_layout(rng), 1.0, seed=0)


def make_sample(rng, with_button=True):
    bg = BackgroundImage(rng.integers(0, 255, (128, 128, 3), dtype=np.uint8))
    elements = [TextElement("Grand Opening", "header"), TextElement("50% off", "body")]
    boxes = [NormalizedBox(0.2, 0.5, 0.2, 0.8), NormalizedBox(0.5, 0.5, 0.15, 0.6)]
    if with_button:
        elements.append(TextElement("Shop", "button"))
        boxes.append(NormalizedBox(0.8, 0.5, 0.12, 0.3))
    fg = ForegroundSet(tuple(elements))
    return DesignSample(background=bg, foreground=fg, layout=Layout(tuple(boxes)), sample_id="t")


class TestRenderDesign:
    def test_zero_elements_returns_background(self, rng):
        bg = BackgroundImage(rng.integers(0, 255, (64, 64, 3), dtype=np.uint8))
        sample = DesignSample(background=bg, foreground=ForegroundSet(()), layout=Layout(()))
        out = render_design(sample, SPEC)
        assert np.array_equal(out.image, bg.pixels)

    def test_byte_identical_repeats(self, rng):
        sample = make_sample(rng)
        a = render_design(sample, SPEC)
        b = render_design(sample, SPEC)
        assert np.array_equal(a.image, b.image)

    def test_image_patch_pasted(self, rng):
        bg = BackgroundImage(np.zeros((64, 64, 3), dtype=np.uint8))
        patch = np.full((8, 8, 3), 200, dtype=np.uint8)
        sample = DesignSample(
            background=bg,
            foreground=ForegroundSet((ImageElement(patch),)),
            layout=Layout((NormalizedBox(0.5, 0.5, 0.25, 0.25),)),
        )
        out = render_design(sample, SPEC)
        assert out.image[32, 32].tolist() == [200, 200, 200]

    def test_button_pad_and_colors_recorded(self, rng):
        bg = BackgroundImage(np.full((128, 128, 3), 255, dtype=np.uint8))
        sample = DesignSample(
            background=bg,
            foreground=ForegroundSet((TextElement("Go", "button"),)),
            layout=Layout((NormalizedBox(0.5, 0.5, 0.25, 0.4),)),
        )
        out = render_design(sample, SPEC)
        el = out.elements[0]
        assert el.pad_color == "black" and el.color == "white"
        # pad pixels drawn black at the box edge, clear of the glyphs
        x0, y0, x1, y1 = el.pixel_box
        assert out.image[(y0 + y1) // 2, x0 + 2].tolist() == [0, 0, 0]
        # white glyph ink present somewhere inside the pad
        inside = out.image[y0:y1, x0:x1]
        assert (inside > 200).all(axis=2).any()

    def test_overflow_lists_elements(self, rng):
        bg = BackgroundImage(rng.integers(0, 255, (64, 64, 3), dtype=np.uint8))
        sample = DesignSample(
            background=bg,
            foreground=ForegroundSet((TextElement("far too much text for this", "body"),)),
            layout=Layout((NormalizedBox(0.5, 0.5, 0.02, 0.02),)),
        )
        with pytest.raises(RenderOverflowError) as err:
            render_design(sample, SPEC)
        assert err.value.element_ids == [0]

    def test_class_style_overrides(self, rng):
        bg = BackgroundImage(np.zeros((256, 256, 3), dtype=np.uint8))
        spec = RenderSpec(class_styles={"header": {"max_font_size": 9, "color": "black"}})
        sample = DesignSample(
            background=bg,
            foreground=ForegroundSet((TextElement("Hi", "header"),)),
            layout=Layout((NormalizedBox(0.5, 0.5, 0.4, 0.6),)),
        )
        out = render_design(sample, spec)
        assert out.elements[0].font_size == 9
        assert out.elements[0].color == "black"

    def test_unknown_style_key_rejected(self):
        spec = RenderSpec(class_styles={"body": {"letter_spacing": 2}})
        with pytest.raises(ValidationError):
            spec.for_class("body")

    def test_text_ink_stays_inside_box(self, rng):
        bg = BackgroundImage(np.zeros((256, 256, 3), dtype=np.uint8))
        box = NormalizedBox(0.5, 0.5, 0.4, 0.6)
        sample = DesignSample(
            background=bg,
            foreground=ForegroundSet((TextElement("INK CHECK", "header"),)),
            layout=Layout((box,)),
        )
        out = render_design(sample, SPEC)
        diff = np.any(out.image != bg.pixels, axis=2)
        ys, xs = np.where(diff)
        x0, y0, x1, y1 = out.elements[0].pixel_box
        assert ys.size > 0
        assert ys.min() >= y0 and ys.max() < y1
        assert xs.min() >= x0 and xs.max() < x1
