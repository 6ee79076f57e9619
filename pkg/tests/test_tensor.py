"""Tensor container and tape mechanics."""

import numpy as np
import pytest

from evmamba import ops
from evmamba.tensor import (Tensor, get_dtype, grad_enabled, no_grad,
                            set_debug_checks, set_precision)


def test_empty_tensor_rejected():
    with pytest.raises(ValueError, match="positive extents"):
        Tensor(np.zeros((0, 3)))
    with pytest.raises(ValueError, match="positive extents"):
        Tensor([])


def test_scalar_data_stored_with_rank_one():
    # ascontiguousarray normalizes 0-d input; reductions rely on this.
    t = Tensor(3.5)
    assert t.shape == (1,)
    assert t.item() == 3.5


def test_precision_switch():
    set_precision(32)
    assert get_dtype() == np.float32
    assert Tensor([1.0]).data.dtype == np.float32
    set_precision(64)
    assert get_dtype() == np.float64
    with pytest.raises(ValueError):
        set_precision(16)


def test_item_requires_single_element():
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0]).item()


def test_requires_grad_propagates_through_ops():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 4.0])
    c = ops.add(a, b)
    assert c.requires_grad
    d = ops.add(b, b)
    assert not d.requires_grad


def test_no_grad_suppresses_tape():
    a = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        assert not grad_enabled()
        c = ops.mul(a, a)
    assert not c.requires_grad
    assert c._parents == ()
    assert grad_enabled()


def test_backward_requires_scalar():
    a = Tensor([1.0, 2.0], requires_grad=True)
    y = ops.mul(a, a)
    with pytest.raises(ValueError, match="scalar"):
        y.backward()


def test_backward_twice_rejected():
    a = Tensor([1.0, 2.0], requires_grad=True)
    loss = ops.sum_(ops.mul(a, a))
    loss.backward()
    with pytest.raises(RuntimeError, match="already ran"):
        loss.backward()


def test_backward_through_shared_leaf_accumulates():
    a = Tensor([2.0], requires_grad=True)
    loss = ops.sum_(ops.add(ops.mul(a, a), a))  # d/da (a^2 + a) = 2a + 1
    loss.backward()
    assert np.allclose(a.grad, [5.0])


def test_interior_grads_are_released():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = ops.mul(a, a)
    loss = ops.sum_(b)
    loss.backward()
    assert b.grad is None
    assert a.grad is not None


def test_detach_cuts_graph():
    a = Tensor([1.0], requires_grad=True)
    d = ops.mul(a, a).detach()
    assert not d.requires_grad
    assert d._parents == ()


def test_zero_grad():
    a = Tensor([1.0], requires_grad=True)
    ops.sum_(a).backward()
    assert a.grad is not None
    a.zero_grad()
    assert a.grad is None


def test_debug_checks_flag_nonfinite():
    set_debug_checks(True)
    try:
        with pytest.raises(FloatingPointError):
            Tensor([np.inf])
    finally:
        set_debug_checks(False)
    Tensor([np.inf])  # allowed again once checks are off


def test_zeros_ones_helpers():
    z = Tensor.zeros(2, 3)
    o = Tensor.ones(4)
    assert z.shape == (2, 3) and not z.data.any()
    assert o.shape == (4,) and (o.data == 1).all()
