"""Evaluation suite: distributional realism (Fréchet distance over layout
features), matched-pair accuracy (IoU, DocSim), and regularity (overlap,
misalignment), reported in the same column order as the headline tables.

The layout feature extractor is a frozen fixed-seed surrogate encoder: the
Fréchet distance only needs a fixed nonlinear feature map to rank models
relatively, and the surrogate keeps the whole suite free of external weights.
A pretrained extractor can be plugged in through the same interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .geometry import Layout, box_iou
from .losses import misalignment_loss, overlap_loss

MISALIGN_REPORT_SCALE = 100.0  # tables report misalignment in units of 1e-2


@dataclass(frozen=True)
class FeatureExtractor:
    """Maps a Layout to a fixed-dimension feature vector, deterministically."""

    fn: Callable[[Layout], np.ndarray]
    feature_dim: int
    provenance: str  # "surrogate" | "pretrained-plug-in"
    seed: Optional[int] = None

    def extract(self, layout: Layout) -> np.ndarray:
        v = np.asarray(self.fn(layout), dtype=np.float64)
        if v.shape != (self.feature_dim,):
            raise ShapeError(
                f"extractor returned shape {v.shape}, expected ({self.feature_dim},)"
            )
        return v


def surrogate_layout_extractor(seed: int = 0, max_boxes: int = 16,
                               hidden: int = 64, feature_dim: int = 32) -> FeatureExtractor:
    """Frozen random two-layer tanh encoder over padded box sequences."""
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, 1.0 / math.sqrt(4 * max_boxes), (4 * max_boxes, hidden))
    b1 = rng.normal(0.0, 0.1, hidden)
    w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, feature_dim))

    def fn(layout: Layout) -> np.ndarray:
        flat = np.zeros(4 * max_boxes)
        boxes = layout.to_tensor().numpy()[:max_boxes]
        flat[: boxes.size] = boxes.reshape(-1)
        h = np.tanh(flat @ w1 + b1)
        return h @ w2

    return FeatureExtractor(fn=fn, feature_dim=feature_dim, provenance="surrogate", seed=seed)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(set1, set2, eps: float = 1e-6) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    ||mu1 - mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^{1/2}); the cross term is
    evaluated through the symmetric PSD form sqrt(S1 C2 S1) by
    eigendecomposition with eigenvalues clamped at zero. Covariances get an
    eps*I ridge before the square root so small sets stay stable.
    """
    x1 = np.atleast_2d(np.asarray(set1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(set2, dtype=np.float64))
    if x1.shape[1] != x2.shape[1]:
        raise ShapeError(f"feature dims differ: {x1.shape[1]} vs {x2.shape[1]}")
    mu1, mu2 = x1.mean(axis=0), x2.mean(axis=0)
    dim = x1.shape[1]

    def cov(x):
        if x.shape[0] < 2:
            return np.zeros((dim, dim))
        return np.cov(x, rowvar=False).reshape(dim, dim)

    c1 = cov(x1) + eps * np.eye(dim)
    c2 = cov(x2) + eps * np.eye(dim)
    s1 = _psd_sqrt(c1)
    inner = s1 @ c2 @ s1
    inner = (inner + inner.T) / 2.0
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * cross)


def layout_fid(fake: Sequence[Layout], real: Sequence[Layout],
               extractor: FeatureExtractor) -> float:
    if not fake or not real:
        raise ValidationError("layout FID needs non-empty layout sets")
    f1 = np.stack([extractor.extract(l) for l in fake])
    f2 = np.stack([extractor.extract(l) for l in real])
    return frechet_distance(f1, f2)


def mean_layout_iou(fake: Layout, real: Layout) -> float:
    """Mean matched-pair IoU; correspondence is positional by construction."""
    if len(fake) != len(real):
        raise ShapeError(f"layout lengths differ: {len(fake)} vs {len(real)}")
    pairs = [box_iou(a, b) for a, b in zip(fake.boxes, real.boxes)]
    return float(np.mean(pairs)) if pairs else 0.0


def _docsim_pair(b1, b2, eps: float = 1e-12) -> float:
    shape = math.sqrt(
        min(b1.w, b2.w) * min(b1.h, b2.h) / max(b1.w * b1.h, b2.w * b2.h, eps)
    )
    dc = math.hypot(b1.cy - b2.cy, b1.cx - b2.cx)
    ds = abs(b1.w - b2.w) + abs(b1.h - b2.h)
    return shape * 2.0 ** (-dc - 2.0 * ds)


def docsim(fake: Layout, real: Layout) -> float:
    """Matched-pair similarity in [0, 1] combining shape agreement and center
    proximity; identical layouts score exactly 1."""
    if len(fake) != len(real):
        raise ShapeError(f"layout lengths differ: {len(fake)} vs {len(real)}")
    pairs = [_docsim_pair(a, b) for a, b in zip(fake.boxes, real.boxes)]
    return float(np.mean(pairs)) if pairs else 0.0


def overlap_metric(layouts: Sequence[Layout]) -> float:
    if not layouts:
        raise ValidationError("overlap metric needs at least one layout")
    return float(np.mean([float(overlap_loss(l)) for l in layouts]))


def misalignment_metric(layouts: Sequence[Layout]) -> float:
    """Mean misalignment over the set, in raw units. The x100 table convention
    is applied only when a MetricReport is serialized."""
    if not layouts:
        raise ValidationError("misalignment metric needs at least one layout")
    return float(np.mean([float(misalignment_loss(l)) for l in layouts]))


TABLE_COLUMNS = ("Layout FID", "Image FID", "IoU", "DocSim", "Overlap", "Misalign (x1e-2)")


@dataclass
class MetricReport:
    layout_fid: float
    mean_iou: float
    docsim: float
    overlap: float
    misalignment: float  # raw units; serialized x100
    sample_count: int
    image_fid: Optional[float] = None
    extractor_provenance: str = "surrogate"
    extractor_seed: Optional[int] = None

    def to_record(self) -> dict:
        return {
            "layout_fid": self.layout_fid,
            "image_fid": self.image_fid,
            "iou": self.mean_iou,
            "docsim": self.docsim,
            "overlap": self.overlap,
            "misalign_x100": self.misalignment * MISALIGN_REPORT_SCALE,
            "sample_count": self.sample_count,
            "extractor": self.extractor_provenance,
            "extractor_seed": self.extractor_seed,
        }

    def table(self) -> str:
        image_fid = "n/a" if self.image_fid is None else f"{self.image_fid:.3f}"
        header = " | ".join(TABLE_COLUMNS)
        row = " | ".join([
            f"{self.layout_fid:.3f}",
            image_fid,
            f"{self.mean_iou:.3f}",
            f"{self.docsim:.3f}",
            f"{self.overlap:.3f}",
            f"{self.misalignment * MISALIGN_REPORT_SCALE:.3f}",
        ])
        return f"{header}\n{row}"


def evaluate_layout_sets(
    fake: Sequence[Layout],
    real: Sequence[Layout],
    extractor: Optional[FeatureExtractor] = None,
    image_fid: Optional[float] = None,
) -> MetricReport:
    """Full metric suite over matched generated/ground-truth layout sets."""
    if len(fake) != len(real):
        raise ShapeError(f"set sizes differ: {len(fake)} vs {len(real)}")
    extractor = extractor or surrogate_layout_extractor()
    ious = [mean_layout_iou(f, r) for f, r in zip(fake, real)]
    sims = [docsim(f, r) for f, r in zip(fake, real)]
    return MetricReport(
        layout_fid=layout_fid(fake, real, extractor),
        mean_iou=float(np.mean(ious)),
        docsim=float(np.mean(sims)),
        overlap=overlap_metric(fake),
        misalignment=misalignment_metric(fake),
        sample_count=len(fake),
        image_fid=image_fid,
        extractor_provenance=extractor.provenance,
        extractor_seed=extractor.seed,
    )
