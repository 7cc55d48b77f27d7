"""Adversarial, content and perceptual losses and the two training objectives.

Each loss returns a float and has a gradient helper returning the derivative
w.r.t. its tensor arguments. Expectations are means over every tensor entry.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import List, Sequence

import numpy as np
from scipy.special import expit

from .ops import log_sigmoid
from .tensor import ShapeError

CONTENT_KINDS = ("charbonnier", "l1", "l2")


@dataclass
class LossWeights:
    lambda_d: float = 0.01
    lambda1: float = 1.0
    lambda2: float = 1.0
    content_kind: str = "charbonnier"
    charbonnier_eps: float = 1e-3

    def __post_init__(self):
        if min(self.lambda_d, self.lambda1, self.lambda2) < 0:
            raise ValueError(f"loss weights must be >= 0: {self}")
        if self.content_kind not in CONTENT_KINDS:
            raise ValueError(f"unknown content loss {self.content_kind!r}; choose from {CONTENT_KINDS}")


@dataclass
class LossReport:
    l_a: float
    l_y: float
    l_p: float
    l_d: float
    l_g: float

    CSV_HEADER = "iter,l_a,l_y,l_p,l_d,l_g"

    def csv_row(self, iteration: int) -> str:
        return f"{iteration}," + ",".join(repr(float(getattr(self, f.name))) for f in fields(self))

    @classmethod
    def from_csv_row(cls, row: str):
        parts = row.strip().split(",")
        return int(parts[0]), cls(*map(float, parts[1:]))

    def is_finite(self) -> bool:
        return all(np.isfinite(getattr(self, f.name)) for f in fields(self))


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def adversarial_loss(real_logits: np.ndarray, fake_logits: np.ndarray) -> float:
    """mean log D(z, y) + mean log(1 - D(z, G(z))), fused with the sigmoid."""
    _same_shape(real_logits, fake_logits, "adversarial_loss")
    real = np.mean(log_sigmoid(real_logits.astype(np.float64)))
    fake = np.mean(log_sigmoid(-fake_logits.astype(np.float64)))
    return float(real + fake)


def adversarial_loss_grad(real_logits: np.ndarray, fake_logits: np.ndarray):
    """d l_a / d(real_logits), d l_a / d(fake_logits)."""
    dreal = expit(-real_logits) / real_logits.size
    dfake = -expit(fake_logits) / fake_logits.size
    return dreal.astype(real_logits.dtype), dfake.astype(fake_logits.dtype)


def content_loss(y: np.ndarray, g: np.ndarray, kind: str = "charbonnier", eps: float = 1e-3) -> float:
    _same_shape(y, g, "content_loss")
    diff = y.astype(np.float64) - g.astype(np.float64)
    if kind == "charbonnier":
        if eps <= 0:
            raise ValueError(f"charbonnier eps must be > 0, got {eps}")
        return float(np.mean(np.sqrt(diff * diff + eps * eps)))
    if kind == "l1":
        return float(np.mean(np.abs(diff)))
    if kind == "l2":
        return float(np.mean(diff * diff))
    raise ValueError(f"unknown content loss {kind!r}; choose from {CONTENT_KINDS}")


def content_loss_grad(y: np.ndarray, g: np.ndarray, kind: str = "charbonnier", eps: float = 1e-3):
    """Gradient of ``content_loss`` w.r.t. the generated image ``g``."""
    diff = g - y
    n = diff.size
    if kind == "charbonnier":
        return diff / np.sqrt(diff * diff + diff.dtype.type(eps * eps)) / n
    if kind == "l1":
        return np.sign(diff) / n
    if kind == "l2":
        return 2 * diff / n
    raise ValueError(f"unknown content loss {kind!r}; choose from {CONTENT_KINDS}")


def _check_taps(taps_real, taps_fake):
    if len(taps_real) != len(taps_fake):
        raise ShapeError(f"tap counts differ: {len(taps_real)} vs {len(taps_fake)}")
    for i, (r, f) in enumerate(zip(taps_real, taps_fake)):
        _same_shape(r, f, f"perceptual_loss tap {i}")


def perceptual_loss(taps_real: Sequence[np.ndarray], taps_fake: Sequence[np.ndarray]) -> float:
    """Sum over layers of the mean absolute feature difference."""
    _check_taps(taps_real, taps_fake)
    return float(sum(
        np.mean(np.abs(r.astype(np.float64) - f.astype(np.float64)))
        for r, f in zip(taps_real, taps_fake)))


def perceptual_loss_grad(taps_real, taps_fake) -> tuple:
    """Per-layer gradients (w.r.t. real taps, w.r.t. fake taps)."""
    _check_taps(taps_real, taps_fake)
    dreal: List[np.ndarray] = []
    dfake: List[np.ndarray] = []
    for r, f in zip(taps_real, taps_fake):
        s = np.sign(r - f) / r.size
        dreal.append(s)
        dfake.append(-s)
    return dreal, dfake


def discriminator_objective(l_a: float, l_p: float, w: LossWeights) -> float:
    return -l_a + w.lambda_d * l_p


def generator_objective(l_a: float, l_p: float, l_y: float, w: LossWeights) -> float:
    return l_a + w.lambda1 * l_p + w.lambda2 * l_y
