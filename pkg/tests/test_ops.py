"""Elementwise, linear-algebra, reduction, shape and conv ops with gradients."""

import numpy as np
import pytest

from evmamba import ops
from evmamba.tensor import Tensor
from evmamba.verify import gradcheck


def _t(rng, *shape, requires_grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


# -- arithmetic ----------------------------------------------------------------

def test_add_mul_shape_mismatch(rng):
    a, b = _t(rng, 2, 3), _t(rng, 3, 2)
    with pytest.raises(ValueError):
        ops.add(a, b)
    with pytest.raises(ValueError):
        ops.mul(a, b)


def test_scalar_operand_gradient(rng):
    x = _t(rng, 4)
    s = Tensor(2.0, requires_grad=True)
    loss = ops.sum_(ops.mul(x, s))
    loss.backward()
    assert np.allclose(s.grad, x.data.sum())   # scalar collects the full sum
    assert np.allclose(x.grad, 2.0)


def test_operator_dunders(rng):
    a, b = _t(rng, 3), _t(rng, 3)
    assert np.allclose((a + b).data, a.data + b.data)
    assert np.allclose((a - b).data, a.data - b.data)
    assert np.allclose((a * b).data, a.data * b.data)


def test_identity_sum_gradient_is_ones(rng):
    x = _t(rng, 5)
    rep = gradcheck(lambda: ops.sum_(x), {"x": x})
    assert rep.passed
    x.zero_grad()
    ops.sum_(x).backward()
    assert np.array_equal(x.grad, np.ones(5))


def test_quadratic_central_difference_is_nearly_exact(rng):
    # central differences are exact for quadratics up to roundoff
    x = _t(rng, 6)
    rep = gradcheck(lambda: ops.sum_(ops.mul(x, x)), {"x": x}, step=1e-5)
    assert rep.max_rel_err < 1e-8


def test_unary_ops_gradcheck(rng):
    x = _t(rng, 7)
    for f in (ops.exp, ops.sigmoid, ops.silu, ops.softplus):
        rep = gradcheck(lambda f=f: ops.sum_(f(x)), {"x": x})
        assert rep.passed, f"{f.__name__}: {rep.summary()}"


def test_relu_values_and_gradient():
    x = Tensor([-2.0, -0.5, 0.5, 3.0], requires_grad=True)
    y = ops.relu(x)
    assert np.array_equal(y.data, [0.0, 0.0, 0.5, 3.0])
    ops.sum_(y).backward()
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0, 1.0])


def test_softplus_is_stable_for_large_inputs():
    y = ops.softplus(Tensor([800.0]))
    assert np.isfinite(y.data).all()
    assert np.allclose(y.data, 800.0)


# -- linear algebra ------------------------------------------------------------

def test_matmul_values_and_grads(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    y = ops.matmul(a, b)
    assert np.allclose(y.data, a.data @ b.data)
    g = rng.standard_normal(y.shape)
    loss = ops.sum_(ops.mul(y, Tensor(g)))
    loss.backward()
    assert np.allclose(a.grad, g @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ g)


def test_linear_matches_matmul_forms(rng):
    w, b = _t(rng, 5, 3), _t(rng, 5)
    x1, x2 = _t(rng, 3), _t(rng, 4, 3)
    assert np.allclose(ops.linear(x1, w, b).data, w.data @ x1.data + b.data)
    assert np.allclose(ops.linear(x2, w, b).data, x2.data @ w.data.T + b.data)
    rep = gradcheck(lambda: ops.sum_(ops.linear(x2, w, b)),
                    {"x": x2, "w": w, "b": b})
    assert rep.passed, rep.summary()


def test_broadcast_helpers(rng):
    x, v = _t(rng, 4, 3), _t(rng, 3)
    assert np.allclose(ops.add_rowvec(x, v).data, x.data + v.data)
    m, s = _t(rng, 3, 2, 2), _t(rng, 3)
    assert np.allclose(ops.scale_channels(m, s).data, m.data * s.data[:, None, None])
    assert np.allclose(ops.shift_channels(m, s).data, m.data + s.data[:, None, None])
    rep = gradcheck(lambda: ops.sum_(ops.scale_channels(m, s)), {"m": m, "s": s})
    assert rep.passed
    rep = gradcheck(lambda: ops.sum_(ops.add_rowvec(x, v)), {"x": x, "v": v})
    assert rep.passed


# -- reductions ----------------------------------------------------------------

def test_sum_mean_values(rng):
    x = _t(rng, 2, 3, 4, requires_grad=False)
    assert np.allclose(ops.sum_(x).data, x.data.sum())
    assert np.allclose(ops.sum_(x, axes=1).data, x.data.sum(axis=1))
    assert np.allclose(ops.mean(x, axes=(0, 2), keepdims=True).data,
                       x.data.mean(axis=(0, 2), keepdims=True))
    with pytest.raises(ValueError):
        ops.sum_(x, axes=(1, 1))


def test_full_reduction_backward_shapes(rng):
    # regression: full reductions produce a rank-1 scalar whose gradient must
    # still broadcast back to the operand shape
    for shape in [(4,), (2, 3), (2, 3, 4)]:
        x = _t(rng, *shape)
        ops.sum_(x).backward()
        assert x.grad.shape == shape
        assert np.array_equal(x.grad, np.ones(shape))
        x = _t(rng, *shape)
        ops.mean(x).backward()
        assert np.allclose(x.grad, 1.0 / x.size)


def test_partial_reduction_gradcheck(rng):
    x = _t(rng, 3, 4)
    rep = gradcheck(lambda: ops.sum_(ops.mul(ops.mean(x, axes=1), ops.mean(x, axes=1))),
                    {"x": x})
    assert rep.passed, rep.summary()


def test_global_avg_pool(rng):
    x = _t(rng, 5, 3, 4)
    y = ops.global_avg_pool(x)
    assert y.shape == (5,)
    assert np.allclose(y.data, x.data.mean(axis=(1, 2)))
    with pytest.raises(ValueError):
        ops.global_avg_pool(_t(rng, 5, 3))


# -- shape ops -----------------------------------------------------------------

def test_reshape_transpose_grads(rng):
    x = _t(rng, 2, 6)
    rep = gradcheck(
        lambda: ops.sum_(ops.mul(ops.transpose(ops.reshape(x, (3, 4)), (1, 0)),
                                 ops.transpose(ops.reshape(x, (3, 4)), (1, 0)))),
        {"x": x})
    assert rep.passed
    with pytest.raises(ValueError):
        ops.reshape(x, (5, 2))


def test_stack_rows(rng):
    rows = [_t(rng, 4) for _ in range(3)]
    y = ops.stack_rows(rows)
    assert y.shape == (3, 4)
    assert np.allclose(y.data, np.stack([r.data for r in rows]))
    w = Tensor(rng.standard_normal((3, 4)))
    ops.sum_(ops.mul(y, w)).backward()
    for i, r in enumerate(rows):
        assert np.allclose(r.grad, w.data[i])


# -- normalization -------------------------------------------------------------

def test_layer_norm_channels_statistics(rng):
    C = 6
    x = _t(rng, C, 4, 5, requires_grad=False)
    y = ops.layer_norm_channels(x, Tensor(np.ones(C)), Tensor(np.zeros(C)))
    flat = y.data.reshape(C, -1)
    assert np.allclose(flat.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(flat.var(axis=0), 1.0, atol=1e-4)   # eps shifts it slightly


def test_layer_norm_channels_gradcheck(rng):
    x, g, b = _t(rng, 3, 2, 2), _t(rng, 3), _t(rng, 3)
    w = Tensor(rng.standard_normal((3, 2, 2)))
    rep = gradcheck(
        lambda: ops.sum_(ops.mul(ops.layer_norm_channels(x, g, b), w)),
        {"x": x, "gamma": g, "beta": b})
    assert rep.passed, rep.summary()


# -- convolution ---------------------------------------------------------------

def _conv_reference(x, w, b, stride, pad, groups):
    """Nested-loop convolution the main path is compared against."""
    c_in, H, W = x.shape
    c_out, cg, k, _ = w.shape
    og = c_out // groups
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h_out = (H + 2 * pad - k) // stride + 1
    w_out = (W + 2 * pad - k) // stride + 1
    y = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        g = o // og
        for i in range(h_out):
            for j in range(w_out):
                patch = xp[g * cg:(g + 1) * cg,
                           i * stride:i * stride + k,
                           j * stride:j * stride + k]
                y[o, i, j] = (patch * w[o]).sum() + (0.0 if b is None else b[o])
    return y


@pytest.mark.parametrize("stride,padding,groups", [(1, "same", 1), (2, 1, 1),
                                                   (1, 0, 2), (2, "same", 4)])
def test_conv2d_matches_reference(rng, stride, padding, groups):
    c_in, c_out, k = 4, 8, 3
    x = _t(rng, c_in, 6, 7, requires_grad=False)
    w = _t(rng, c_out, c_in // groups, k, k, requires_grad=False)
    b = _t(rng, c_out, requires_grad=False)
    y = ops.conv2d(x, w, b, stride=stride, padding=padding, groups=groups)
    pad = k // 2 if padding == "same" else padding
    ref = _conv_reference(x.data, w.data, b.data, stride, pad, groups)
    assert y.shape == ref.shape
    assert np.allclose(y.data, ref, atol=1e-12)


def test_conv2d_1x1_equals_per_pixel_matmul(rng):
    x = _t(rng, 5, 4, 6, requires_grad=False)
    w = _t(rng, 3, 5, 1, 1, requires_grad=False)
    y = ops.conv2d(x, w, None)
    ref = np.einsum("oc,chw->ohw", w.data[:, :, 0, 0], x.data)
    assert np.abs(y.data - ref).max() < 1e-10


def test_conv2d_gradcheck(rng):
    x = _t(rng, 2, 4, 4)
    w = _t(rng, 4, 1, 3, 3)    # depthwise, groups=2
    b = _t(rng, 4)
    m = Tensor(rng.standard_normal((4, 2, 2)))
    rep = gradcheck(
        lambda: ops.sum_(ops.mul(ops.conv2d(x, w, b, stride=2, groups=2), m)),
        {"x": x, "w": w, "b": b})
    assert rep.passed, rep.summary()


def test_conv2d_rejects_bad_arguments(rng):
    x = _t(rng, 4, 5, 5, requires_grad=False)
    with pytest.raises(ValueError, match="odd"):
        ops.conv2d(x, _t(rng, 2, 4, 2, 2, requires_grad=False))
    with pytest.raises(ValueError, match="groups"):
        ops.conv2d(x, _t(rng, 2, 4, 3, 3, requires_grad=False), groups=3)
    with pytest.raises(ValueError, match="stride"):
        ops.conv2d(x, _t(rng, 2, 4, 3, 3, requires_grad=False), stride=0)


# -- classification head --------------------------------------------------------

def test_softmax_rows_sum_to_one(rng):
    y = ops.softmax(_t(rng, 4, 7, requires_grad=False))
    assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)
    assert (y.data > 0).all()


def test_log_softmax_matches_log_of_softmax(rng):
    x = _t(rng, 3, 5, requires_grad=False)
    assert np.allclose(ops.log_softmax(x).data, np.log(ops.softmax(x).data))


def test_cross_entropy_value(rng):
    logits = _t(rng, 2, 3, requires_grad=False)
    t = [2, 0]
    p = ops.softmax(logits).data
    expected = -(np.log(p[0, 2]) + np.log(p[1, 0])) / 2
    assert np.allclose(ops.cross_entropy(logits, t).item(), expected)


def test_cross_entropy_gradcheck(rng):
    logits = _t(rng, 3, 4)
    rep = gradcheck(lambda: ops.cross_entropy(logits, [1, 3, 0]), {"logits": logits})
    assert rep.passed, rep.summary()


def test_cross_entropy_validates_targets(rng):
    logits = _t(rng, 2, 3, requires_grad=False)
    with pytest.raises(ValueError):
        ops.cross_entropy(logits, [0, 3])
    with pytest.raises(ValueError):
        ops.cross_entropy(logits, [0, -1])
    with pytest.raises(ValueError):
        ops.cross_entropy(logits, [0])
