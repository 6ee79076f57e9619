"""Network blocks.

Two block families share the stages:

* EvssBlock: channel norm, then two gated branches summed - an atrous
  skip-scan branch (global mixing at H*W recurrence steps) and a 3x3
  convolution branch (local mixing) - each passed through its own
  squeeze-excite gate before the merge.
* InvertedResidual: 1x1 expand, depthwise 3x3, squeeze-excite, 1x1 project,
  with an identity shortcut when stride is 1 and channels are unchanged.

Plus the stem (3x3 stride-2 entry), the separable inter-stage downsample,
and the rule assigning a block kind to each of the four stages.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .layers import ChannelNorm, Conv2d, Layer, SEGate, squeeze_width
from .scan import build_plan, es2d
from .ssm import init_ssm_params
from .tensor import Tensor

# multiplies per token per (channel, state) pair inside the recurrence:
# transition arg, input-map scale, input injection, state update, output read
SCAN_MACS_PER_ELEMENT = 5


class SkipScan(Layer):
    """Selective scan over a feature map via a cached atrous plan.

    The sampling period is clamped to min(p, H, W) so small late-stage maps
    degrade to a single group instead of failing.  One parameter set is
    shared across the offset groups.
    """

    def __init__(self, channels: int, rng: np.random.Generator, *,
                 state_dim: int = 16, period: int = 2,
                 scan_mode: str = "skip", combine: str = "sum"):
        super().__init__()
        self.channels, self.state_dim, self.period = channels, state_dim, period
        self.scan_mode, self.combine = scan_mode, combine
        self.ssm = init_ssm_params(channels, state_dim, rng)
        for name, t in self.ssm.tensors().items():
            self.register_param(name, t)
        self._plans: dict[tuple[int, int], object] = {}

    def plan_for(self, h: int, w: int):
        key = (h, w)
        if key not in self._plans:
            self._plans[key] = build_plan(h, w, min(self.period, h, w))
        return self._plans[key]

    def forward(self, x: Tensor) -> Tensor:
        plan = self.plan_for(x.shape[1], x.shape[2])
        return es2d(x, self.ssm, plan, scan_mode=self.scan_mode, combine=self.combine)

    def profile(self, h: int, w: int):
        tokens = h * w
        passes = 4 if self.scan_mode == "full" else 1
        d, n = self.channels, self.state_dim
        select = (d * d + 2 * n * d) * tokens * passes
        steps = tokens * passes
        scan = SCAN_MACS_PER_ELEMENT * d * n * steps
        return [("skip_scan", self.param_count(), select + scan, steps)], h, w


class EvssBlock(Layer):
    """Norm -> [skip-scan branch, 3x3 conv branch], each SE-gated, summed."""

    def __init__(self, channels: int, rng: np.random.Generator, *,
                 state_dim: int = 16, period: int = 2, reduction: int = 4,
                 conv_branch: bool = True, outer_residual: bool = False,
                 scan_mode: str = "skip", combine: str = "sum"):
        super().__init__()
        self.channels = channels
        self.conv_branch = conv_branch
        self.outer_residual = outer_residual
        self.norm = self.add_child("norm", ChannelNorm(channels))
        self.scan = self.add_child("scan", SkipScan(
            channels, rng, state_dim=state_dim, period=period,
            scan_mode=scan_mode, combine=combine))
        self.se_scan = self.add_child("se_scan", SEGate(
            channels, squeeze_width(channels, reduction), rng))
        if conv_branch:
            self.conv = self.add_child("conv", Conv2d(channels, channels, 3, rng))
            self.se_conv = self.add_child("se_conv", SEGate(
                channels, squeeze_width(channels, reduction), rng))

    def forward(self, x: Tensor) -> Tensor:
        n = self.norm(x)
        out = self.se_scan(self.scan(n))
        if self.conv_branch:
            out = ops.add(out, self.se_conv(self.conv(n)))
        if self.outer_residual:
            out = ops.add(out, x)
        return out

    def profile(self, h: int, w: int):
        entries = []
        for name, child in self._children.items():
            sub, _, _ = child.profile(h, w)
            entries.extend((f"{name}.{n}", p, m, s) for n, p, m, s in sub)
        return entries, h, w


class InvertedResidual(Layer):
    """1x1 expand, depthwise 3x3, squeeze-excite, 1x1 project, shortcut.

    The SE bottleneck is sized from the block's input channels, not the
    expanded width.  With all weights zero the block is the identity when
    the shortcut applies.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, *,
                 stride: int = 1, expansion: int = 4, reduction: int = 4):
        super().__init__()
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        hidden = int(round(expansion * c_in))
        self.hidden = hidden
        self.use_shortcut = stride == 1 and c_in == c_out
        self.expand = self.add_child("expand", Conv2d(c_in, hidden, 1, rng))
        self.dw = self.add_child("dw", Conv2d(hidden, hidden, 3, rng,
                                              stride=stride, groups=hidden))
        self.se = self.add_child("se", SEGate(
            hidden, squeeze_width(c_in, reduction), rng))
        self.project = self.add_child("project", Conv2d(hidden, c_out, 1, rng))

    def forward(self, x: Tensor) -> Tensor:
        y = ops.silu(self.expand(x))
        y = ops.silu(self.dw(y))
        y = self.project(self.se(y))
        if self.use_shortcut:
            y = ops.add(y, x)
        return y

    def profile(self, h: int, w: int):
        entries = []
        hh, ww = h, w
        for name, child in self._children.items():
            sub, hh, ww = child.profile(hh, ww)
            entries.extend((f"{name}.{n}", p, m, s) for n, p, m, s in sub)
        return entries, hh, ww


class Stem(Layer):
    """3x3 stride-2 entry convolution lifting the image to the first width."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.conv = self.add_child("conv", Conv2d(c_in, c_out, 3, rng, stride=2))
        self.norm = self.add_child("norm", ChannelNorm(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return ops.silu(self.norm(self.conv(x)))

    def profile(self, h: int, w: int):
        entries, ho, wo = self.conv.profile(h, w)
        entries += self.norm.profile(ho, wo)[0]
        return [("stem." + n, p, m, s) for n, p, m, s in entries], ho, wo


class Downsample(Layer):
    """Separable stride-2 reduction: depthwise 3x3 s2, pointwise 1x1, norm."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.dw = self.add_child("dw", Conv2d(c_in, c_in, 3, rng,
                                              stride=2, groups=c_in))
        self.pw = self.add_child("pw", Conv2d(c_in, c_out, 1, rng))
        self.norm = self.add_child("norm", ChannelNorm(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.pw(self.dw(x)))

    def profile(self, h: int, w: int):
        entries = []
        hh, ww = h, w
        for name, child in self._children.items():
            sub, hh, ww = child.profile(hh, ww)
            entries.extend((f"{name}.{n}", p, m, s) for n, p, m, s in sub)
        return entries, hh, ww


LAYOUTS = {
    "inverted": ("EVSS", "EVSS", "InRes", "InRes"),
    "previous": ("InRes", "InRes", "EVSS", "EVSS"),
    "all-evss": ("EVSS", "EVSS", "EVSS", "EVSS"),
    "all-inres": ("InRes", "InRes", "InRes", "InRes"),
}


def stage_rule(stage_index: int, layout: str = "inverted") -> str:
    """Block kind ("EVSS" or "InRes") for 1-based stage_index under a layout.

    The default layout runs scan blocks in the early high-resolution stages
    and inverted residuals in the late stages; "previous" swaps them, and
    the all-* layouts are single-kind ablations.
    """
    key = layout.lower()
    if key not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}, expected one of {sorted(LAYOUTS)}")
    if not 1 <= stage_index <= 4:
        raise ValueError(f"stage_index must be in 1..4, got {stage_index}")
    return LAYOUTS[key][stage_index - 1]
