"""Run configuration: flat ``key = value`` files plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .loss import LossWeights
from .model import DiscriminatorPlan, GeneratorPlan
from .optim import Schedule


@dataclass
class Config:
    scale: int = 4
    patch_size: int = 128
    batch: int = 64
    iters: int = 1_000_000
    # 0 draws fresh patches every iteration; N > 0 samples N patches once and cycles them
    fixed_patches: int = 0
    augment: bool = True

    n_half: int = 5
    g_base: int = 64
    d_layers: int = 5
    d_base: int = 64
    slope: float = 0.2
    conditional: bool = True
    init: str = "xavier"

    lambda_d: float = 0.01
    lambda1: float = 1.0
    lambda2: float = 1.0
    content_kind: str = "charbonnier"
    charbonnier_eps: float = 1e-3

    lr_initial: float = 1e-4
    lr_final: float = 1e-5
    lr_switch: int = 1_000_000

    seed: int = 0
    data: Optional[str] = None
    out: str = "runs/srpgan"
    checkpoint_every: int = 0

    def generator_plan(self) -> GeneratorPlan:
        return GeneratorPlan(n_half=self.n_half, base_channels=self.g_base, slope=self.slope, init=self.init)

    def discriminator_plan(self) -> DiscriminatorPlan:
        return DiscriminatorPlan(n_layers=self.d_layers, base_channels=self.d_base, slope=self.slope,
                                 conditional=self.conditional, init=self.init)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_d, self.lambda1, self.lambda2, self.content_kind, self.charbonnier_eps)

    def schedule(self) -> Schedule:
        return Schedule(self.lr_initial, self.lr_final, self.lr_switch)

    def validate(self) -> None:
        m = 2 ** self.n_half
        if self.patch_size % m:
            raise ValueError(f"patch_size {self.patch_size} not divisible by 2^n_half = {m}")
        if self.patch_size % self.scale:
            raise ValueError(f"patch_size {self.patch_size} not divisible by scale {self.scale}")
        if self.scale not in (2, 4, 8):
            raise ValueError(f"scale must be 2, 4 or 8, got {self.scale}")
        if self.batch < 1 or self.iters < 0:
            raise ValueError("batch must be >= 1 and iters >= 0")
        if self.init not in ("xavier", "he"):
            raise ValueError(f"init must be xavier or he, got {self.init!r}")
        self.loss_weights()

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)


DESK_PRESET = dict(patch_size=64, batch=8, n_half=3, g_base=16, d_layers=3, d_base=16, lr_switch=5000, iters=5000)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _field_types():
    hints = {"int": int, "float": float, "bool": bool, "str": str, "Optional[str]": str}
    return {f.name: hints[f.type] for f in fields(Config)}


def parse_value(key: str, text: str):
    types = _field_types()
    if key not in types:
        raise KeyError(f"unknown config key {key!r}")
    t = types[key]
    text = text.strip()
    if t is bool:
        if text.lower() not in ("true", "false"):
            raise ValueError(f"{key}: expected true or false, got {text!r}")
        return text.lower() == "true"
    if t is int:
        return int(float(text)) if "e" in text.lower() else int(text)
    return t(text)


def loads(text: str, base: Config = None) -> Config:
    """Parse ``key = value`` lines over ``base``; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, val)
    return (base or Config()).replace(**values)


def load(path, base: Config = None) -> Config:
    return loads(Path(path).read_text(), base)
