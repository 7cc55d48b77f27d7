"""Finite-difference verification of every analytic gradient.

All checks run in float64. An op check compares the full input gradient of
``sum(f(x) * r)`` (``r`` random) against central differences; the end-to-end
checks compare d l_g / d theta_G and d l_d / d theta_D on a tiny model for a
random subset of parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import loss as L
from . import ops
from .model import DiscriminatorPlan, GeneratorPlan, build_discriminator, build_generator
from .optim import discriminator_gradients, generator_gradients
from .tensor import RngStream, reduce_mean, reduce_mean_backward

OP_STEP = 1e-3
OP_TOL = 1e-4
E2E_STEP = 1e-5
E2E_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < self.tol)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.ravel(analytic).astype(np.float64)
    n = np.ravel(numeric).astype(np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-300)
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = OP_STEP, index=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place).

    ``index`` restricts the sweep to a list of flat indices.
    """
    flat = x.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(len(idx) if index is not None else flat.size)
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2 * h)
    return out


def _projected(fn, r):
    return float(np.sum(fn() * r))


def _op_checks(rng: np.random.Generator) -> dict:
    """name -> callable returning the relative error of one random instance."""

    def conv(stride):
        def run():
            x = rng.standard_normal((2, 3, 5, 6))
            wt = rng.standard_normal((4, 3, 3, 3))
            b = rng.standard_normal(4)
            spec = ops.Conv2dSpec(wt, b, stride)
            r = rng.standard_normal(ops.conv2d(x, spec).shape)
            dx, dw, db = ops.conv2d_backward(r, x, spec)
            f = lambda: _projected(lambda: ops.conv2d(x, spec), r)
            return max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, wt)),
                       rel_error(db, numeric_grad(f, b)))
        return run

    def tconv():
        x = rng.standard_normal((2, 3, 3, 4))
        wt = rng.standard_normal((3, 2, 4, 4))
        b = rng.standard_normal(2)
        spec = ops.TConv2dSpec(wt, b)
        r = rng.standard_normal(ops.conv2d_transpose(x, spec).shape)
        dx, dw, db = ops.conv2d_transpose_backward(r, x, spec)
        f = lambda: _projected(lambda: ops.conv2d_transpose(x, spec), r)
        return max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, wt)),
                   rel_error(db, numeric_grad(f, b)))

    def inorm():
        x = rng.standard_normal((2, 3, 4, 5)) * 2 + 0.5
        r = rng.standard_normal(x.shape)
        _, cache = ops.instance_norm_cached(x, ops.DEFAULT_IN_EPS)
        dx = ops.instance_norm_backward(r, cache)
        return rel_error(dx, numeric_grad(lambda: _projected(lambda: ops.instance_norm(x), r), x))

    def lrelu():
        x = rng.standard_normal((2, 3, 4, 4))
        x += np.where(x >= 0, 0.01, -0.01)  # keep clear of the kink
        r = rng.standard_normal(x.shape)
        dx = ops.leaky_relu_backward(r, x, ops.DEFAULT_SLOPE)
        return rel_error(dx, numeric_grad(lambda: _projected(lambda: ops.leaky_relu(x), r), x))

    def concat():
        a = rng.standard_normal((1, 2, 3, 3))
        b = rng.standard_normal((1, 3, 3, 3))
        r = rng.standard_normal((1, 5, 3, 3))
        da, db = ops.split_channels(r, 2)
        f = lambda: _projected(lambda: ops.concat_channels(a, b), r)
        return max(rel_error(da, numeric_grad(f, a)), rel_error(db, numeric_grad(f, b)))

    def logsig():
        x = rng.standard_normal((2, 1, 3, 3)) * 4
        r = rng.standard_normal(x.shape)
        dx = ops.log_sigmoid_backward(r, x)
        return rel_error(dx, numeric_grad(lambda: _projected(lambda: ops.log_sigmoid(x), r), x))

    def sig():
        x = rng.standard_normal((2, 1, 3, 3)) * 3
        r = rng.standard_normal(x.shape)
        dx = ops.sigmoid_backward(r, ops.sigmoid(x))
        return rel_error(dx, numeric_grad(lambda: _projected(lambda: ops.sigmoid(x), r), x))

    def mean():
        x = rng.standard_normal((2, 3, 4, 4))
        return rel_error(reduce_mean_backward(x), numeric_grad(lambda: reduce_mean(x), x))

    def adversarial():
        real = rng.standard_normal((2, 1, 3, 3)) * 2
        fake = rng.standard_normal((2, 1, 3, 3)) * 2
        dr, df = L.adversarial_loss_grad(real, fake)
        f = lambda: L.adversarial_loss(real, fake)
        return max(rel_error(dr, numeric_grad(f, real)), rel_error(df, numeric_grad(f, fake)))

    def content(kind):
        def run():
            y = rng.random((2, 3, 4, 4))
            g = rng.random((2, 3, 4, 4))
            if kind != "l2":
                # FD is meaningless across the l1 kink or inside the
                # charbonnier core where curvature is ~1/eps
                g += np.where(g >= y, 0.05, -0.05)
            dg = L.content_loss_grad(y, g, kind, 1e-3)
            return rel_error(dg, numeric_grad(lambda: L.content_loss(y, g, kind, 1e-3), g))
        return run

    def perceptual():
        real = [rng.standard_normal((2, 4, 4, 4)), rng.standard_normal((2, 8, 2, 2))]
        fake = [r + np.where(rng.random(r.shape) < 0.5, 1.0, -1.0) * (0.05 + rng.random(r.shape))
                for r in real]
        dr, df = L.perceptual_loss_grad(real, fake)
        f = lambda: L.perceptual_loss(real, fake)
        return max(max(rel_error(a, numeric_grad(f, t)) for a, t in zip(dr, real)),
                   max(rel_error(a, numeric_grad(f, t)) for a, t in zip(df, fake)))

    return {
        "reduce_mean": mean,
        "conv2d_s1": conv(1),
        "conv2d_s2": conv(2),
        "conv2d_transpose": tconv,
        "instance_norm": inorm,
        "leaky_relu": lrelu,
        "concat_channels": concat,
        "sigmoid": sig,
        "log_sigmoid": logsig,
        "adversarial_loss": adversarial,
        "content_charbonnier": content("charbonnier"),
        "content_l1": content("l1"),
        "content_l2": content("l2"),
        "perceptual_loss": perceptual,
    }


def tiny_models(seed: int, dtype=np.float64):
    stream = RngStream(seed)
    g = build_generator(GeneratorPlan(n_half=2, base_channels=4), stream).astype(dtype)
    d = build_discriminator(DiscriminatorPlan(n_layers=3, base_channels=4), stream).astype(dtype)
    return g, d, stream


def _sampled_params(net, rng, count):
    params = net.parameters()
    sizes = np.array([p.size for p in params])
    flat = rng.choice(sizes.sum(), size=count, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for f in flat:
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        yield params[k], int(f - offsets[k])


def end_to_end_checks(seed: int = 0, samples: int = 20, weights: L.LossWeights = None) -> List[CheckResult]:
    """d l_g / d theta_G and d l_d / d theta_D on a tiny f64 model, 16x16 inputs."""
    weights = weights or L.LossWeights()
    g, d, stream = tiny_models(seed)
    rng = np.random.default_rng(seed)
    y = rng.random((1, 3, 16, 16))
    z = np.clip(y + 0.1 * rng.standard_normal(y.shape), 0, 1)
    results = []

    generator_gradients(z, y, g, d, weights)
    analytic, numeric = [], []
    for p, i in _sampled_params(g, rng, samples):
        analytic.append(p.grad.reshape(-1)[i])
        f = lambda: generator_gradients(z, y, g, d, weights).l_g
        numeric.append(numeric_grad(f, p.data, E2E_STEP, [i])[0])
    results.append(CheckResult("end_to_end_l_g", _worst(analytic, numeric), E2E_TOL))

    discriminator_gradients(z, y, g, d, weights)
    grads = {p.name: p.grad.copy() for p in d.parameters()}
    analytic, numeric = [], []
    for p, i in _sampled_params(d, rng, samples):
        analytic.append(grads[p.name].reshape(-1)[i])
        f = lambda: discriminator_gradients(z, y, g, d, weights)[2]
        numeric.append(numeric_grad(f, p.data, E2E_STEP, [i])[0])
    results.append(CheckResult("end_to_end_l_d", _worst(analytic, numeric), E2E_TOL))
    return results


def _worst(analytic, numeric) -> float:
    """Largest per-parameter relative error.

    The denominator is floored at 1e-6: biases feeding an instance norm have an
    exactly zero gradient, where a pure ratio would compare rounding noise.
    """
    errs = [abs(a - n) / max(abs(a), abs(n), 1e-6) for a, n in zip(analytic, numeric)]
    return float(max(errs))


def run_all(seed: int = 0, instances: int = 5) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, check in _op_checks(rng).items():
        worst = max(check() for _ in range(instances))
        results.append(CheckResult(name, worst, OP_TOL))
    return results + end_to_end_checks(seed)


def format_table(results: List[CheckResult]) -> str:
    lines = [f"{'check':<22} {'rel_error':>12} {'tol':>8}  result"]
    for r in results:
        lines.append(f"{r.name:<22} {r.rel_error:12.3e} {r.tol:8.0e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
