"""Model assembly: stem, four stages, pooled classifier head.

A model is described by a ModelSpec (widths, depths, block layout and block
hyperparameters).  Spatial resolution drops by 2 at the stem and at each of
the four stage entries, so a 224x224 input yields stage feature maps at
112/56/28/14/7.  Three reference sizes are shipped: tiny, small and base.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .blocks import Downsample, EvssBlock, InvertedResidual, Stem, stage_rule
from .layers import ChannelNorm, Layer, Linear, Sequential
from .tensor import Tensor

DOWNSAMPLE_FACTOR = 32  # stem x2, four stage entries x2 each


@dataclass
class ModelSpec:
    """Everything needed to rebuild a model deterministically (with a seed)."""

    name: str = "custom"
    dims: tuple = (48, 96, 192, 384)
    depths: tuple = (2, 2, 4, 2)
    num_classes: int = 1000
    layout: str = "inverted"
    state_dim: int = 16
    period: int = 2                 # atrous sampling period of the skip-scan
    reduction: int = 4              # squeeze-excite bottleneck ratio
    expansion: int = 4              # inverted-residual width multiplier
    conv_branch: bool = True        # local branch of the fusion block
    outer_residual: bool = False
    scan_mode: str = "skip"         # "skip" | "full" (four passes per group)
    combine: str = "sum"            # "sum" | "mean" for multi-direction merges
    in_channels: int = 3

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.depths = tuple(int(d) for d in self.depths)
        if len(self.dims) != 4 or len(self.depths) != 4:
            raise ValueError(f"spec needs 4 stage dims and depths, got "
                             f"{self.dims} / {self.depths}")
        if any(d <= 0 for d in self.dims) or any(d <= 0 for d in self.depths):
            raise ValueError(f"dims and depths must be positive: {self.dims} / {self.depths}")
        if any(a >= b for a, b in zip(self.dims, self.dims[1:])):
            raise ValueError(f"stage dims must increase: {self.dims}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        stage_rule(1, self.layout)  # validates the layout name

    def stage_kinds(self) -> tuple[str, ...]:
        return tuple(stage_rule(i, self.layout) for i in range(1, 5))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


_SPEC_FIELDS = {f.name for f in ModelSpec.__dataclass_fields__.values()}


def spec_from_json(text: str) -> ModelSpec:
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ValueError("model config must be a JSON object")
    unknown = sorted(set(obj) - _SPEC_FIELDS)
    if unknown:
        raise ValueError(f"unknown model config keys: {unknown}")
    return ModelSpec(**obj)


VARIANTS = {
    "tiny": ModelSpec(name="tiny", dims=(48, 96, 192, 384), depths=(2, 2, 4, 2)),
    "small": ModelSpec(name="small", dims=(64, 128, 256, 512), depths=(2, 2, 4, 2)),
    "base": ModelSpec(name="base", dims=(96, 192, 384, 768), depths=(2, 2, 9, 2)),
}
_ALIASES = {"t": "tiny", "s": "small", "b": "base"}


def resolve_variant(name: str) -> ModelSpec:
    key = name.lower()
    key = _ALIASES.get(key, key)
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from "
                         f"{sorted(VARIANTS)} (aliases T/S/B)")
    return VARIANTS[key]


class Model(Layer):
    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        dims = spec.dims
        self.stem = self.add_child("stem", Stem(spec.in_channels, dims[0], rng))
        prev = dims[0]
        for i in range(4):
            self.add_child(f"down{i + 1}", Downsample(prev, dims[i], rng))
            kind = stage_rule(i + 1, spec.layout)
            blocks = []
            for _ in range(spec.depths[i]):
                if kind == "EVSS":
                    blocks.append(EvssBlock(
                        dims[i], rng, state_dim=spec.state_dim,
                        period=spec.period, reduction=spec.reduction,
                        conv_branch=spec.conv_branch,
                        outer_residual=spec.outer_residual,
                        scan_mode=spec.scan_mode, combine=spec.combine))
                else:
                    blocks.append(InvertedResidual(
                        dims[i], dims[i], rng, stride=1,
                        expansion=spec.expansion, reduction=spec.reduction))
            self.add_child(f"stage{i + 1}", Sequential(blocks))
            prev = dims[i]
        self.add_child("norm", ChannelNorm(dims[3]))
        self.add_child("head", Linear(dims[3], spec.num_classes, rng))

    # -- forward ---------------------------------------------------------------

    def forward_single(self, x: Tensor, trace: list | None = None) -> Tensor:
        """(C, H, W) -> (num_classes,) logits; optionally records the spatial
        size after the stem and after each stage."""
        C, H, W = x.shape
        if C != self.spec.in_channels:
            raise ValueError(f"input has {C} channels, spec says {self.spec.in_channels}")
        if H % DOWNSAMPLE_FACTOR or W % DOWNSAMPLE_FACTOR:
            raise ValueError(f"input extents must be divisible by "
                             f"{DOWNSAMPLE_FACTOR}, got {H}x{W}")
        y = self._children["stem"](x)
        if trace is not None:
            trace.append(y.shape[1:])
        for i in range(1, 5):
            y = self._children[f"down{i}"](y)
            y = self._children[f"stage{i}"](y)
            if trace is not None:
                trace.append(y.shape[1:])
        z = ops.global_avg_pool(y)
        z = ops.layer_norm_channels(z, self._children["norm"].gamma,
                                    self._children["norm"].beta)
        return self._children["head"](z)

    def forward(self, x: Tensor, trace: list | None = None) -> Tensor:
        """(B, C, H, W) -> (B, num_classes); also accepts one (C, H, W) map."""
        if x.ndim == 3:
            return self.forward_single(x, trace)
        if x.ndim != 4:
            raise ValueError(f"forward expects (B,C,H,W) or (C,H,W), got {x.shape}")
        rows = []
        for i in range(x.shape[0]):
            sample = Tensor.from_op(x.data[i], (x,), None)
            if sample.requires_grad:
                def bwd(g, x=x, i=i):
                    full = np.zeros_like(x.data)
                    full[i] = g
                    x._accumulate(full)
                sample._backward = bwd
            rows.append(self.forward_single(sample, trace if i == 0 else None))
        return ops.stack_rows(rows)

    def probabilities(self, x: Tensor) -> Tensor:
        """Softmax over classes, rows summing to one."""
        return ops.softmax(self.forward(x), axis=-1)

    # -- analysis ---------------------------------------------------------------

    def profile(self, h: int, w: int):
        entries = []
        hh, ww = h, w
        for name, child in self._children.items():
            if name == "norm":
                entries.append(("norm", child.param_count(), 0, 0))
                continue
            if name == "head":
                sub, _, _ = child.profile(1, 1)
                entries.extend((f"head.{n}", p, m, s) for n, p, m, s in sub)
                continue
            sub, hh, ww = child.profile(hh, ww)
            prefix = "" if name == "stem" else f"{name}."
            entries.extend((f"{prefix}{n}", p, m, s) for n, p, m, s in sub)
        return entries, hh, ww

    def stage_resolutions(self, h: int, w: int) -> list[int]:
        """Feature-map heights after the stem and each stage for an h x w input."""
        return [h // 2, h // 4, h // 8, h // 16, h // 32]


def build_model(spec_or_name, seed: int = 0) -> Model:
    if isinstance(spec_or_name, str):
        spec = resolve_variant(spec_or_name)
    elif isinstance(spec_or_name, ModelSpec):
        spec = spec_or_name
    else:
        raise TypeError(f"expected ModelSpec or variant name, got {type(spec_or_name)}")
    return Model(spec, seed=seed)
