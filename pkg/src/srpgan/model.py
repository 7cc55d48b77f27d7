"""U-Net generator and conditional patch discriminator with explicit backprop."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from . import ops
from .tensor import INITIALIZERS, Parameter, RngStream, ShapeError, conv_fans

MAX_CHANNELS = 512


def stage_channels(base: int, k: int) -> int:
    return min(base * 2 ** min(k, 3), MAX_CHANNELS)


class Conv:
    """3x3 conv layer (pad 1) holding its own parameters."""

    def __init__(self, name, cin, cout, stride, stream, init="xavier"):
        shape = (cout, cin, ops.CONV_KERNEL, ops.CONV_KERNEL)
        fan_in, fan_out = conv_fans(shape)
        self.stride = stride
        self.weight = Parameter(f"{name}.weight", INITIALIZERS[init](stream, shape, fan_in, fan_out))
        self.bias = Parameter(f"{name}.bias", np.zeros(cout, dtype=np.float32))

    def params(self):
        return [self.weight, self.bias]

    def spec(self):
        return ops.Conv2dSpec(self.weight.data, self.bias.data, self.stride)

    def forward(self, x):
        out, cols = ops.conv2d_cached(x, self.spec())
        return out, (x, cols)

    def backward(self, dout, cache):
        x, cols = cache
        dx, dw, db = ops.conv2d_backward(dout, x, self.spec(), cols)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class TConv:
    """4x4 stride-2 transposed conv layer."""

    def __init__(self, name, cin, cout, stream, init="xavier"):
        shape = (cin, cout, ops.TCONV_KERNEL, ops.TCONV_KERNEL)
        fan_in, fan_out = conv_fans(shape, transpose=True)
        self.weight = Parameter(f"{name}.weight", INITIALIZERS[init](stream, shape, fan_in, fan_out))
        self.bias = Parameter(f"{name}.bias", np.zeros(cout, dtype=np.float32))

    def params(self):
        return [self.weight, self.bias]

    def spec(self):
        return ops.TConv2dSpec(self.weight.data, self.bias.data)

    def forward(self, x):
        return ops.conv2d_transpose(x, self.spec()), x

    def backward(self, dout, x):
        dx, dw, db = ops.conv2d_transpose_backward(dout, x, self.spec())
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class _Block:
    """(conv | tconv) -> instance norm (optional) -> LeakyReLU."""

    def __init__(self, layer, slope, norm_eps=None):
        self.layer = layer
        self.slope = slope
        self.norm_eps = norm_eps

    def forward(self, x):
        h, lcache = self.layer.forward(x)
        ncache = None
        if self.norm_eps is not None:
            h, ncache = ops.instance_norm_cached(h, self.norm_eps)
        return ops.leaky_relu(h, self.slope), (lcache, ncache, h)

    def backward(self, dout, cache):
        lcache, ncache, pre = cache
        d = ops.leaky_relu_backward(dout, pre, self.slope)
        if ncache is not None:
            d = ops.instance_norm_backward(d, ncache)
        return self.layer.backward(d, lcache)


class Network:
    """Shared parameter plumbing."""

    prefix = ""

    def parameters(self) -> List[Parameter]:
        raise NotImplementedError

    def named_parameters(self) -> Dict[str, Parameter]:
        return {f"{self.prefix}{p.name}": p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def astype(self, dtype):
        """Deep copy with every parameter cast to ``dtype``."""
        other = copy.deepcopy(self)
        for p in other.parameters():
            p.data = p.data.astype(dtype)
            p.grad = p.grad.astype(dtype)
        return other

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        bad = [
            f"{k}: expected {params[k].shape}, got {state[k].shape}"
            for k in params if k in state and state[k].shape != params[k].shape
        ]
        if missing or bad:
            raise ShapeError("checkpoint does not match model: " + "; ".join(
                [f"missing {k}" for k in missing] + bad))
        for k, p in params.items():
            p.data[...] = state[k]


@dataclass
class GeneratorPlan:
    n_half: int = 3
    base_channels: int = 16
    slope: float = ops.DEFAULT_SLOPE
    norm_eps: float = ops.DEFAULT_IN_EPS
    init: str = "xavier"

    def encoder_channels(self) -> List[int]:
        return [stage_channels(self.base_channels, k) for k in range(self.n_half)]

    def decoder_channels(self) -> List[tuple]:
        """(in, out) channel pairs of the decoder stages, innermost first."""
        enc = self.encoder_channels()
        n = self.n_half
        pairs = []
        for j in range(n):
            cin = enc[n - 1] if j == 0 else pairs[-1][1] + enc[n - 1 - j]
            pairs.append((cin, enc[n - 1 - j]))
        return pairs


class Generator(Network):
    """Encoder-decoder; decoder stage j > 0 sees its predecessor concatenated with
    the encoder output of matching resolution. Output passes through a sigmoid.
    """

    prefix = "G."

    def __init__(self, plan: GeneratorPlan, stream: RngStream):
        if plan.n_half < 1 or plan.base_channels < 1:
            raise ValueError(f"invalid generator plan {plan}")
        self.plan = plan
        enc = plan.encoder_channels()
        self.encoder = []
        cin = 3
        for k, c in enumerate(enc):
            layer = Conv(f"enc{k}.conv", cin, c, 2, stream, plan.init)
            self.encoder.append(_Block(layer, plan.slope, plan.norm_eps))
            cin = c
        self.decoder = []
        for j, (ci, co) in enumerate(plan.decoder_channels()):
            layer = TConv(f"dec{j}.tconv", ci, co, stream, plan.init)
            self.decoder.append(_Block(layer, plan.slope, plan.norm_eps))
        self.head = Conv("out.conv", enc[0], 3, 1, stream, plan.init)

    def parameters(self):
        ps = []
        for b in self.encoder + self.decoder:
            ps += b.layer.params()
        return ps + self.head.params()

    def check_input(self, z: np.ndarray) -> None:
        m = 2 ** self.plan.n_half
        if z.ndim != 4 or z.shape[1] != 3:
            raise ShapeError(f"generator expects N x 3 x H x W input, got {z.shape}")
        if z.shape[2] % m or z.shape[3] % m:
            raise ShapeError(
                f"generator input {z.shape[2]}x{z.shape[3]} not divisible by 2^{self.plan.n_half}={m}")

    def forward_train(self, z: np.ndarray, drop_skips=()):
        """Forward pass that keeps the per-layer caches for ``backward``.

        ``drop_skips`` lists decoder stages whose skip input is replaced by zeros.
        """
        self.check_input(z)
        z = z.astype(self.head.weight.data.dtype, copy=False)
        skips, enc_caches = [], []
        h = z
        for block in self.encoder:
            h, c = block.forward(h)
            skips.append(h)
            enc_caches.append(c)
        n = self.plan.n_half
        dec_caches = []
        for j, block in enumerate(self.decoder):
            if j > 0:
                skip = skips[n - 1 - j]
                if j in drop_skips:
                    skip = np.zeros_like(skip)
                h = ops.concat_channels(h, skip)
            h, c = block.forward(h)
            dec_caches.append(c)
        logits, head_cache = self.head.forward(h)
        out = ops.sigmoid(logits)
        return out, (enc_caches, dec_caches, head_cache, out)

    def forward(self, z: np.ndarray, drop_skips=()) -> np.ndarray:
        return self.forward_train(z, drop_skips)[0]

    def backward(self, ctx, dout: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient w.r.t. the input."""
        enc_caches, dec_caches, head_cache, out = ctx
        n = self.plan.n_half
        d = ops.sigmoid_backward(dout, out)
        d = self.head.backward(d, head_cache)
        dskips = [None] * n
        for j in reversed(range(n)):
            d = self.decoder[j].backward(d, dec_caches[j])
            if j > 0:
                c_prev = self.plan.decoder_channels()[j - 1][1]
                d, dskip = ops.split_channels(d, c_prev)
                dskips[n - 1 - j] = dskip
        # innermost encoder output feeds decoder 0 directly
        for k in reversed(range(n)):
            if dskips[k] is not None:
                d = d + dskips[k]
            d = self.encoder[k].backward(d, enc_caches[k])
        return d


@dataclass
class DiscriminatorPlan:
    n_layers: int = 3
    base_channels: int = 16
    slope: float = ops.DEFAULT_SLOPE
    conditional: bool = True
    init: str = "xavier"

    def stage_channels(self) -> List[int]:
        return [stage_channels(self.base_channels, i) for i in range(self.n_layers - 1)]

    @property
    def in_channels(self) -> int:
        return 6 if self.conditional else 3


class Discriminator(Network):
    """Patch discriminator: ``n_layers - 1`` stride-2 conv stages and a stride-1
    head producing a one-channel logit map. No normalization layers.

    The feature taps are the LeakyReLU outputs of every conv layer, the head
    included (its tap is ``leaky_relu(logits)``).
    """

    prefix = "D."

    def __init__(self, plan: DiscriminatorPlan, stream: RngStream):
        if plan.n_layers < 2 or plan.base_channels < 1:
            raise ValueError(f"invalid discriminator plan {plan}")
        self.plan = plan
        cin = plan.in_channels
        self.stages = []
        for i, c in enumerate(plan.stage_channels()):
            self.stages.append(_Block(Conv(f"conv{i}", cin, c, 2, stream, plan.init), plan.slope))
            cin = c
        self.head = Conv("head", cin, 1, 1, stream, plan.init)

    def parameters(self):
        ps = []
        for b in self.stages:
            ps += b.layer.params()
        return ps + self.head.params()

    def forward_train(self, z: np.ndarray, candidate: np.ndarray):
        if z.shape != candidate.shape:
            raise ShapeError(f"condition {z.shape} and candidate {candidate.shape} differ")
        if candidate.ndim != 4 or candidate.shape[1] != 3:
            raise ShapeError(f"discriminator expects N x 3 x H x W images, got {candidate.shape}")
        dtype = self.head.weight.data.dtype
        candidate = candidate.astype(dtype, copy=False)
        if self.plan.conditional:
            h = ops.concat_channels(z.astype(dtype, copy=False), candidate)
        else:
            h = candidate
        taps, caches = [], []
        for block in self.stages:
            h, c = block.forward(h)
            taps.append(h)
            caches.append(c)
        logits, head_cache = self.head.forward(h)
        taps.append(ops.leaky_relu(logits, self.plan.slope))
        return logits, taps, (caches, head_cache, logits)

    def forward(self, z: np.ndarray, candidate: np.ndarray):
        """Returns ``(logits, taps)``; logits are raw (no sigmoid)."""
        logits, taps, _ = self.forward_train(z, candidate)
        return logits, taps

    def backward(self, ctx, dlogits=None, dtaps=None):
        """Accumulate parameter gradients from logit and tap gradients.

        Returns ``(dz, dcandidate)``; ``dz`` is None in unconditional mode.
        """
        caches, head_cache, logits = ctx
        n = len(self.stages)
        d = np.zeros_like(logits) if dlogits is None else dlogits
        if dtaps is not None and dtaps[n] is not None:
            d = d + ops.leaky_relu_backward(dtaps[n], logits, self.plan.slope)
        d = self.head.backward(d, head_cache)
        for i in reversed(range(n)):
            if dtaps is not None and dtaps[i] is not None:
                d = d + dtaps[i]
            d = self.stages[i].backward(d, caches[i])
        if self.plan.conditional:
            dz, dc = ops.split_channels(d, 3)
            return dz, dc
        return None, d


def build_generator(plan: GeneratorPlan, stream: RngStream) -> Generator:
    return Generator(plan, stream)


def build_discriminator(plan: DiscriminatorPlan, stream: RngStream) -> Discriminator:
    return Discriminator(plan, stream)


def generator_forward(g: Generator, z: np.ndarray) -> np.ndarray:
    return g.forward(z)


def discriminator_forward(d: Discriminator, z: np.ndarray, candidate: np.ndarray):
    return d.forward(z, candidate)
