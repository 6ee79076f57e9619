"""Blocks: SE gate, fusion block, inverted residual, stem, downsample, layouts."""

import numpy as np
import pytest

from evmamba import ops
from evmamba.blocks import (LAYOUTS, SCAN_MACS_PER_ELEMENT, Downsample,
                            EvssBlock, InvertedResidual, SkipScan, Stem,
                            stage_rule)
from evmamba.layers import SEGate, squeeze_width
from evmamba.tensor import Tensor
from evmamba.verify import gradcheck


def _zero_params(layer):
    for _, t in layer.parameters():
        t.data[...] = 0.0


# -- squeeze-excite ---------------------------------------------------------------

def test_squeeze_width_floor():
    assert squeeze_width(64, 4) == 16
    assert squeeze_width(8, 4) == 4
    assert squeeze_width(5, 4) == 4     # floored


def test_se_gate_zero_weights_halves_input(rng):
    se = SEGate(6, 4, rng)
    _zero_params(se)
    x = Tensor(rng.standard_normal((6, 5, 5)))
    y = se(x)
    assert np.allclose(y.data, 0.5 * x.data)


def test_se_gate_is_channelwise(rng):
    # the gate is one scalar per channel: outputs are proportional per channel
    se = SEGate(4, 4, rng)
    x = Tensor(rng.standard_normal((4, 3, 3)))
    y = se(x)
    ratio = y.data / x.data
    assert np.allclose(ratio, ratio[:, :1, :1])
    assert (ratio > 0).all() and (ratio < 1).all()


# -- skip-scan layer ---------------------------------------------------------------

def test_skip_scan_clamps_period(rng):
    layer = SkipScan(3, rng, state_dim=2, period=4)
    plan = layer.plan_for(2, 2)
    assert plan.stride == 2                       # min(period, h, w)
    y = layer(Tensor(rng.standard_normal((3, 2, 2))))
    assert y.shape == (3, 2, 2)


def test_skip_scan_plan_cache(rng):
    layer = SkipScan(2, rng, state_dim=2, period=2)
    assert layer.plan_for(4, 4) is layer.plan_for(4, 4)
    assert layer.plan_for(4, 4) is not layer.plan_for(4, 6)


def test_skip_scan_profile_macs(rng):
    d, n, h, w = 3, 2, 4, 4
    layer = SkipScan(d, rng, state_dim=n, period=2)
    entries, ho, wo = layer.profile(h, w)
    assert (ho, wo) == (h, w)
    (_, params, macs, steps), = entries
    tokens = h * w
    assert steps == tokens
    assert macs == (d * d + 2 * n * d) * tokens + SCAN_MACS_PER_ELEMENT * d * n * tokens
    assert params == layer.param_count()


def test_skip_scan_full_mode_profiles_four_passes(rng):
    layer = SkipScan(3, rng, state_dim=2, period=2, scan_mode="full")
    (_, _, macs, steps), = layer.profile(4, 4)[0]
    assert steps == 4 * 16
    single = SkipScan(3, rng, state_dim=2, period=2).profile(4, 4)[0][0]
    assert macs == 4 * single[2]


# -- fusion block ------------------------------------------------------------------

def test_evss_block_shapes_and_grads(rng):
    blk = EvssBlock(4, rng, state_dim=2, period=2)
    x = Tensor(rng.standard_normal((4, 6, 6)), requires_grad=True)
    y = blk(x)
    assert y.shape == (4, 6, 6)
    ops.sum_(ops.mul(y, Tensor(rng.standard_normal((4, 6, 6))))).backward()
    for name, t in blk.parameters():
        assert t.grad is not None, name
    assert x.grad is not None


def test_evss_block_scan_only_matches_manual_composition(rng):
    # with the conv branch off and no residual, the block is exactly
    # se(scan(norm(x))) built from its own children
    blk = EvssBlock(3, rng, state_dim=2, period=2, conv_branch=False)
    x = Tensor(rng.standard_normal((3, 4, 4)))
    manual = blk.se_scan(blk.scan(blk.norm(x)))
    assert np.allclose(blk(x).data, manual.data, atol=1e-14)


def test_evss_block_outer_residual_adds_input():
    # same seed -> identical weights, so the two variants differ by exactly x
    base = EvssBlock(3, np.random.default_rng(5), state_dim=2, period=2)
    res = EvssBlock(3, np.random.default_rng(5), state_dim=2, period=2,
                    outer_residual=True)
    x = Tensor(np.random.default_rng(1).standard_normal((3, 4, 4)))
    assert np.allclose(res(x).data, base(x).data + x.data, atol=1e-14)


def test_evss_block_profile_totals(rng):
    blk = EvssBlock(4, rng, state_dim=2, period=2)
    entries, h, w = blk.profile(6, 6)
    assert (h, w) == (6, 6)
    assert sum(e[1] for e in entries) == blk.param_count()
    names = [e[0] for e in entries]
    assert any(n.startswith("scan.") for n in names)
    assert any(n.startswith("conv.") for n in names)


def test_evss_block_gradcheck(rng):
    blk = EvssBlock(3, rng, state_dim=2, period=2)
    x = Tensor(rng.standard_normal((3, 4, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 4, 4)))
    inputs = {"x": x, **dict(blk.parameters())}
    rep = gradcheck(lambda: ops.sum_(ops.mul(blk(x), w)), inputs)
    assert rep.passed, rep.summary()


# -- inverted residual ----------------------------------------------------------

def test_inres_zero_weights_is_identity(rng):
    blk = InvertedResidual(4, 4, rng)
    _zero_params(blk)
    x = Tensor(rng.standard_normal((4, 5, 5)))
    assert np.array_equal(blk(x).data, x.data)


def test_inres_shortcut_rules(rng):
    assert InvertedResidual(4, 4, rng).use_shortcut
    assert not InvertedResidual(4, 8, rng).use_shortcut
    assert not InvertedResidual(4, 4, rng, stride=2).use_shortcut


def test_inres_expansion_and_se_widths(rng):
    blk = InvertedResidual(8, 8, rng, expansion=4, reduction=4)
    assert blk.hidden == 32
    assert blk.se.channels == 32                 # gates the expanded width
    assert blk.se.squeezed == squeeze_width(8, 4)  # squeezed from block input


def test_inres_stride_two_halves_resolution(rng):
    blk = InvertedResidual(3, 6, rng, stride=2)
    y = blk(Tensor(rng.standard_normal((3, 8, 8))))
    assert y.shape == (6, 4, 4)
    entries, h, w = blk.profile(8, 8)
    assert (h, w) == (4, 4)
    assert sum(e[1] for e in entries) == blk.param_count()


def test_inres_gradcheck(rng):
    blk = InvertedResidual(3, 3, rng, expansion=2)
    x = Tensor(rng.standard_normal((3, 4, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 4, 4)))
    inputs = {"x": x, **dict(blk.parameters())}
    rep = gradcheck(lambda: ops.sum_(ops.mul(blk(x), w)), inputs)
    assert rep.passed, rep.summary()


# -- stem / downsample ------------------------------------------------------------

def test_stem_halves_resolution(rng):
    stem = Stem(3, 8, rng)
    y = stem(Tensor(rng.standard_normal((3, 16, 16))))
    assert y.shape == (8, 8, 8)
    entries, h, w = stem.profile(16, 16)
    assert (h, w) == (8, 8)
    assert sum(e[1] for e in entries) == stem.param_count()


def test_downsample_halves_resolution(rng):
    down = Downsample(4, 8, rng)
    y = down(Tensor(rng.standard_normal((4, 10, 10))))
    assert y.shape == (8, 5, 5)
    entries, h, w = down.profile(10, 10)
    assert (h, w) == (5, 5)
    assert sum(e[1] for e in entries) == down.param_count()


# -- stage layouts ----------------------------------------------------------------

def test_stage_rule_layouts():
    assert [stage_rule(i, "inverted") for i in range(1, 5)] == \
        ["EVSS", "EVSS", "InRes", "InRes"]
    assert [stage_rule(i, "previous") for i in range(1, 5)] == \
        ["InRes", "InRes", "EVSS", "EVSS"]
    assert [stage_rule(i, "all-evss") for i in range(1, 5)] == ["EVSS"] * 4
    assert [stage_rule(i, "all-inres") for i in range(1, 5)] == ["InRes"] * 4
    assert set(LAYOUTS) == {"inverted", "previous", "all-evss", "all-inres"}
    with pytest.raises(ValueError):
        stage_rule(1, "zigzag")
    with pytest.raises(ValueError):
        stage_rule(5, "inverted")
