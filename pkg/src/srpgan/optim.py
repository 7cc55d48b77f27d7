"""ADAM, the step learning-rate schedule, and the alternating D/G iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from . import loss as L
from .model import Discriminator, Generator
from .tensor import NonFiniteError, Parameter, ShapeError

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Schedule:
    lr_initial: float = 1e-4
    lr_final: float = 1e-5
    switch_iteration: int = 1_000_000

    def lr(self, t: int) -> float:
        return self.lr_initial if t < self.switch_iteration else self.lr_final


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, report):
        super().__init__(f"non-finite loss at iteration {iteration}: {report}")
        self.iteration = iteration
        self.report = report


def adam_step(params: List[Parameter], state: AdamState, lr: float) -> None:
    """Bias-corrected ADAM update of ``params`` in place using their ``.grad``."""
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    for p in params:
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape} for {p.name}")
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {p.name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.data.dtype)


def discriminator_gradients(z, y, g: Generator, d: Discriminator, w: L.LossWeights):
    """Fill D's ``.grad`` with d l_d / d theta_D (G(z) held constant).

    Returns ``(l_a, l_p, l_d)``.
    """
    fake = g.forward(z)
    d.zero_grad()
    real_logits, taps_r, ctx_r = d.forward_train(z, y)
    fake_logits, taps_f, ctx_f = d.forward_train(z, fake)
    l_a = L.adversarial_loss(real_logits, fake_logits)
    l_p = L.perceptual_loss(taps_r, taps_f)
    l_d = L.discriminator_objective(l_a, l_p, w)
    if not np.isfinite(l_d):
        return l_a, l_p, l_d
    da_r, da_f = L.adversarial_loss_grad(real_logits, fake_logits)
    dp_r, dp_f = L.perceptual_loss_grad(taps_r, taps_f)
    d.backward(ctx_r, -da_r, [w.lambda_d * x for x in dp_r])
    d.backward(ctx_f, -da_f, [w.lambda_d * x for x in dp_f])
    return l_a, l_p, l_d


def generator_gradients(z, y, g: Generator, d: Discriminator, w: L.LossWeights) -> L.LossReport:
    """Fill G's ``.grad`` with d l_g / d theta_G (D held constant).

    D's gradient buffers are used as scratch and left zeroed.
    """
    g.zero_grad()
    fake, ctx_g = g.forward_train(z)
    real_logits, taps_r = d.forward(z, y)
    fake_logits, taps_f, ctx_f = d.forward_train(z, fake)
    report = _objectives(real_logits, fake_logits, taps_r, taps_f, y, fake, w)
    if not report.is_finite():
        return report
    _, da_f = L.adversarial_loss_grad(real_logits, fake_logits)
    _, dp_f = L.perceptual_loss_grad(taps_r, taps_f)
    _, dfake = d.backward(ctx_f, da_f, [w.lambda1 * x for x in dp_f])
    d.zero_grad()
    dfake = dfake + w.lambda2 * L.content_loss_grad(y, fake, w.content_kind, w.charbonnier_eps)
    g.backward(ctx_g, dfake.astype(fake.dtype))
    return report


def train_iteration(z, y, g: Generator, d: Discriminator, w: L.LossWeights,
                    state_g: AdamState, state_d: AdamState, sched: Schedule, t: int) -> L.LossReport:
    """One ADAM step of D on l_d, then one of G on l_g with a fresh forward pass
    through the updated D. Returns the losses measured during the G step.
    """
    lr = sched.lr(t)
    l_a, l_p, l_d = discriminator_gradients(z, y, g, d, w)
    if not np.isfinite(l_d):
        raise DivergenceError(t, {"l_a": l_a, "l_p": l_p, "l_d": l_d})
    adam_step(d.parameters(), state_d, lr)

    report = generator_gradients(z, y, g, d, w)
    if not report.is_finite():
        raise DivergenceError(t, report)
    adam_step(g.parameters(), state_g, lr)
    return report


def _objectives(real_logits, fake_logits, taps_r, taps_f, y, fake, w) -> L.LossReport:
    l_a = L.adversarial_loss(real_logits, fake_logits)
    l_p = L.perceptual_loss(taps_r, taps_f)
    l_y = L.content_loss(y, fake, w.content_kind, w.charbonnier_eps)
    return L.LossReport(
        l_a=l_a, l_y=l_y, l_p=l_p,
        l_d=L.discriminator_objective(l_a, l_p, w),
        l_g=L.generator_objective(l_a, l_p, l_y, w),
    )


def evaluate_losses(z, y, g: Generator, d: Discriminator, w: L.LossWeights) -> L.LossReport:
    """Loss report for a batch without updating anything."""
    fake = g.forward(z)
    real_logits, taps_r = d.forward(z, y)
    fake_logits, taps_f = d.forward(z, fake)
    return _objectives(real_logits, fake_logits, taps_r, taps_f, y, fake, w)
