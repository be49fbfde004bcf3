"""Shared test helpers: independent oracles and gradient checking."""

import numpy as np
import pytest
import torch


def mc_rasterized_iou(a, b, grid: int = 512) -> float:
    """Independent IoU oracle: count grid-cell centers inside each box.

    Kept deliberately separate from the analytic path it checks.
    """
    centers = (np.arange(grid) + 0.5) / grid

    def membership(box):
        cy, cx, h, w = box
        rows = (centers > cy - h / 2) & (centers < cy + h / 2)
        cols = (centers > cx - w / 2) & (centers < cx + w / 2)
        return rows, cols

    ra, ca = membership(a)
    rb, cb = membership(b)
    area_a = ra.sum() * ca.sum()
    area_b = rb.sum() * cb.sum()
    inter = (ra & rb).sum() * (ca & cb).sum()
    union = area_a + area_b - inter
    return float(inter / union) if union > 0 else 0.0


def central_differences(fn, x: torch.Tensor, step: float = 1e-5) -> torch.Tensor:
    """Central finite-difference gradient of a scalar function, 64-bit."""
    x = x.detach().double()
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        hi = float(fn(x))
        flat[i] = orig - step
        lo = float(fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def assert_gradients_match(fn, x: torch.Tensor, step: float = 1e-5,
                           rel_tol: float = 1e-3, abs_floor: float = 1e-7):
    """Compare autograd gradients against central finite differences."""
    x = x.detach().double().requires_grad_(True)
    y = fn(x)
    (analytic,) = torch.autograd.grad(y, x)
    numeric = central_differences(fn, x.detach(), step=step)
    a, n = analytic.reshape(-1), numeric.reshape(-1)
    for i in range(a.numel()):
        av, nv = a[i].item(), n[i].item()
        if abs(av) < abs_floor and abs(nv) < abs_floor:
            continue
        rel = abs(av - nv) / max(abs(av), abs(nv))
        assert rel <= rel_tol, f"gradient mismatch at index {i}: autograd {av} vs fd {nv}"


def random_box(rng: np.random.Generator, min_size: float = 0.05, max_size: float = 0.6):
    h = rng.uniform(min_size, max_size)
    w = rng.uniform(min_size, max_size)
    cy = rng.uniform(h / 2, 1 - h / 2)
    cx = rng.uniform(w / 2, 1 - w / 2)
    return np.array([cy, cx, h, w])


def _kink_margins(a, b) -> float:
    """Distance to the nearest min/max switching point of the IoU/gIoU surface."""
    at, ab_, al, ar = a[0] - a[2] / 2, a[0] + a[2] / 2, a[1] - a[3] / 2, a[1] + a[3] / 2
    bt, bb, bl, br = b[0] - b[2] / 2, b[0] + b[2] / 2, b[1] - b[3] / 2, b[1] + b[3] / 2
    ih = min(ab_, bb) - max(at, bt)
    iw = min(ar, br) - max(al, bl)
    return min(abs(at - bt), abs(ab_ - bb), abs(al - bl), abs(ar - br), abs(ih), abs(iw))


def random_noncontact_pair(rng: np.random.Generator, margin: float = 1e-3):
    """Box pair away from corner-contact configurations (gIoU kinks)."""
    while True:
        a, b = random_box(rng), random_box(rng)
        if _kink_margins(a, b) > margin:
            return a, b


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
