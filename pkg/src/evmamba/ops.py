"""Differentiable operations over :class:`~evmamba.tensor.Tensor`.

Every function returns a new tensor whose backward rule scatters the output
gradient onto the inputs.  Binary elementwise ops require equal shapes or a
scalar on one side; the per-channel broadcast patterns the network blocks
need (bias over a feature map, gating a map by a channel vector, a row
vector over a sequence) are explicit ops so that shape errors stay loud.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor


def _scalar_of(x) -> Optional[float]:
    """Return the python float if x is scalar-like, else None."""
    if isinstance(x, (int, float, np.floating, np.integer)):
        return float(x)
    if isinstance(x, Tensor) and x.size == 1:
        return float(x.data.reshape(-1)[0])
    return None


def _raise_shapes(a, b, opname: str):
    sa = a.shape if isinstance(a, Tensor) else np.shape(a)
    sb = b.shape if isinstance(b, Tensor) else np.shape(b)
    raise ValueError(
        f"{opname}: shapes {sa} and {sb} do not match and neither side is a scalar"
    )


# -- elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor) and a.shape == b.shape:
        out = Tensor.from_op(a.data + b.data, (a, b), None)
        if out.requires_grad:
            def bwd(g, a=a, b=b):
                if a.requires_grad:
                    a._accumulate(g)
                if b.requires_grad:
                    b._accumulate(g)
            out._backward = bwd
        return out
    # scalar case (either side)
    if isinstance(a, Tensor) and _scalar_of(b) is not None:
        t, s, other = a, _scalar_of(b), b if isinstance(b, Tensor) else None
    elif isinstance(b, Tensor) and _scalar_of(a) is not None:
        t, s, other = b, _scalar_of(a), a if isinstance(a, Tensor) else None
    else:
        _raise_shapes(a, b, "add")
    srcs = (t, other) if other is not None else (t,)
    out = Tensor.from_op(t.data + s, srcs, None)
    if out.requires_grad:
        def bwd(g, t=t, other=other):
            if t.requires_grad:
                t._accumulate(g)
            if other is not None and other.requires_grad:
                other._accumulate(np.array(g.sum()).reshape(other.shape))
        out._backward = bwd
    return out


def sub(a, b) -> Tensor:
    return add(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor) and a.shape == b.shape:
        out = Tensor.from_op(a.data * b.data, (a, b), None)
        if out.requires_grad:
            def bwd(g, a=a, b=b):
                if a.requires_grad:
                    a._accumulate(g * b.data)
                if b.requires_grad:
                    b._accumulate(g * a.data)
            out._backward = bwd
        return out
    if isinstance(a, Tensor) and _scalar_of(b) is not None:
        t, s, other = a, _scalar_of(b), b if isinstance(b, Tensor) else None
    elif isinstance(b, Tensor) and _scalar_of(a) is not None:
        t, s, other = b, _scalar_of(a), a if isinstance(a, Tensor) else None
    else:
        _raise_shapes(a, b, "mul")
    srcs = (t, other) if other is not None else (t,)
    out = Tensor.from_op(t.data * s, srcs, None)
    if out.requires_grad:
        def bwd(g, t=t, other=other, s=s):
            if t.requires_grad:
                t._accumulate(g * s)
            if other is not None and other.requires_grad:
                other._accumulate(np.array((g * t.data).sum()).reshape(other.shape))
        out._backward = bwd
    return out


# -- elementwise unary --------------------------------------------------------

def _unary(x: Tensor, fwd, dydx) -> Tensor:
    y = fwd(x.data)
    out = Tensor.from_op(y, (x,), None)
    if out.requires_grad:
        def bwd(g, x=x, y=y):
            x._accumulate(g * dydx(x.data, y))
        out._backward = bwd
    return out


def exp(x: Tensor) -> Tensor:
    return _unary(x, np.exp, lambda xd, yd: yd)


def _sigmoid(xd: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * xd))


def sigmoid(x: Tensor) -> Tensor:
    return _unary(x, _sigmoid, lambda xd, yd: yd * (1.0 - yd))


def silu(x: Tensor) -> Tensor:
    def fwd(xd):
        return xd * _sigmoid(xd)

    def dydx(xd, yd):
        s = _sigmoid(xd)
        return s + xd * s * (1.0 - s)

    return _unary(x, fwd, dydx)


def softplus(x: Tensor) -> Tensor:
    return _unary(x, lambda xd: np.logaddexp(0.0, xd),
                  lambda xd, yd: _sigmoid(xd))


def relu(x: Tensor) -> Tensor:
    return _unary(x, lambda xd: np.maximum(xd, 0.0),
                  lambda xd, yd: (xd > 0).astype(xd.dtype))


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor.from_op(a.data @ b.data, (a, b), None)
    if out.requires_grad:
        def bwd(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        out._backward = bwd
    return out


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map. x may be (D,) -> (O,) or (L, D) -> (L, O); w is (O, D)."""
    if w.ndim != 2:
        raise ValueError(f"linear weight must be 2-d, got {w.shape}")
    if x.ndim == 1:
        if x.shape[0] != w.shape[1]:
            raise ValueError(f"linear: input {x.shape} does not match weight {w.shape}")
        y = w.data @ x.data
        out = Tensor.from_op(y, (x, w), None)
        if out.requires_grad:
            def bwd(g, x=x, w=w):
                if x.requires_grad:
                    x._accumulate(w.data.T @ g)
                if w.requires_grad:
                    w._accumulate(np.outer(g, x.data))
            out._backward = bwd
    elif x.ndim == 2:
        if x.shape[1] != w.shape[1]:
            raise ValueError(f"linear: input {x.shape} does not match weight {w.shape}")
        out = Tensor.from_op(x.data @ w.data.T, (x, w), None)
        if out.requires_grad:
            def bwd(g, x=x, w=w):
                if x.requires_grad:
                    x._accumulate(g @ w.data)
                if w.requires_grad:
                    w._accumulate(g.T @ x.data)
            out._backward = bwd
    else:
        raise ValueError(f"linear input must be 1-d or 2-d, got {x.shape}")
    if b is not None:
        out = add_rowvec(out, b) if out.ndim == 2 else add(out, _require_same(b, out))
    return out


def _require_same(b: Tensor, like: Tensor) -> Tensor:
    if b.shape != like.shape:
        raise ValueError(f"bias shape {b.shape} does not match output {like.shape}")
    return b


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """(L, D) + (D,) broadcast over rows."""
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ValueError(f"add_rowvec: {x.shape} + {v.shape} is not (L,D)+(D,)")
    out = Tensor.from_op(x.data + v.data[None, :], (x, v), None)
    if out.requires_grad:
        def bwd(g, x=x, v=v):
            if x.requires_grad:
                x._accumulate(g)
            if v.requires_grad:
                v._accumulate(g.sum(axis=0))
        out._backward = bwd
    return out


# -- per-channel broadcasts over feature maps ---------------------------------

def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """(C, H, W) * (C,) gating."""
    if x.ndim != 3 or s.ndim != 1 or x.shape[0] != s.shape[0]:
        raise ValueError(f"scale_channels: {x.shape} * {s.shape} is not (C,H,W)*(C,)")
    out = Tensor.from_op(x.data * s.data[:, None, None], (x, s), None)
    if out.requires_grad:
        def bwd(g, x=x, s=s):
            if x.requires_grad:
                x._accumulate(g * s.data[:, None, None])
            if s.requires_grad:
                s._accumulate((g * x.data).sum(axis=(1, 2)))
        out._backward = bwd
    return out


def shift_channels(x: Tensor, b: Tensor) -> Tensor:
    """(C, H, W) + (C,) bias."""
    if x.ndim != 3 or b.ndim != 1 or x.shape[0] != b.shape[0]:
        raise ValueError(f"shift_channels: {x.shape} + {b.shape} is not (C,H,W)+(C,)")
    out = Tensor.from_op(x.data + b.data[:, None, None], (x, b), None)
    if out.requires_grad:
        def bwd(g, x=x, b=b):
            if x.requires_grad:
                x._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=(1, 2)))
        out._backward = bwd
    return out


# -- reductions ---------------------------------------------------------------

def _norm_axes(x: Tensor, axes, opname: str) -> tuple:
    if axes is None:
        return tuple(range(x.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(a % x.ndim for a in axes)
    if len(set(axes)) != len(axes):
        raise ValueError(f"{opname}: duplicate axes {axes}")
    for a in axes:
        if not 0 <= a < x.ndim:
            raise ValueError(f"{opname}: axis {a} out of range for shape {x.shape}")
    return axes


def sum_(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(x, axes, "sum")
    y = x.data.sum(axis=axes, keepdims=keepdims)
    out = Tensor.from_op(y, (x,), None)
    if out.requires_grad:
        # Tensors are stored with ndim >= 1, so a full reduction yields shape
        # (1,); reshape to the keepdims layout instead of expand_dims.
        kept = tuple(1 if a in axes else s for a, s in enumerate(x.shape))

        def bwd(g, x=x, kept=kept):
            x._accumulate(np.broadcast_to(g.reshape(kept), x.shape).copy())
        out._backward = bwd
    return out


def mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(x, axes, "mean")
    n = int(np.prod([x.shape[a] for a in axes]))
    y = x.data.mean(axis=axes, keepdims=keepdims)
    out = Tensor.from_op(y, (x,), None)
    if out.requires_grad:
        kept = tuple(1 if a in axes else s for a, s in enumerate(x.shape))

        def bwd(g, x=x, kept=kept, n=n):
            x._accumulate(np.broadcast_to(g.reshape(kept), x.shape).copy() / n)
        out._backward = bwd
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(C, H, W) -> (C,) spatial mean."""
    if x.ndim != 3:
        raise ValueError(f"global_avg_pool expects (C,H,W), got {x.shape}")
    return mean(x, axes=(1, 2))


# -- shape ops ----------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ValueError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor.from_op(x.data.reshape(shape), (x,), None)
    if out.requires_grad:
        def bwd(g, x=x):
            x._accumulate(g.reshape(x.shape))
        out._backward = bwd
    return out


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor.from_op(np.ascontiguousarray(x.data.transpose(axes)), (x,), None)
    if out.requires_grad:
        def bwd(g, x=x, inv=inv):
            x._accumulate(g.transpose(inv))
        out._backward = bwd
    return out


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape (K,) tensors into (B, K)."""
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"stack_rows: mixed shapes {sorted(shapes)}")
    data = np.stack([t.data for t in tensors], axis=0)
    out = Tensor.from_op(data, tuple(tensors), None)
    if out.requires_grad:
        def bwd(g, tensors=tuple(tensors)):
            for i, t in enumerate(tensors):
                if t.requires_grad:
                    t._accumulate(g[i])
        out._backward = bwd
    return out


# -- normalization ------------------------------------------------------------

def layer_norm_channels(x: Tensor, gamma: Tensor, beta: Tensor,
                        eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis (axis 0) at every spatial position.

    x is (C, ...) with any (possibly empty) spatial tail; gamma/beta are (C,).
    """
    C = x.shape[0]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(
            f"layer_norm_channels: affine shapes {gamma.shape}/{beta.shape} "
            f"do not match channels {C}")
    xd = x.data.reshape(C, -1)
    mu = xd.mean(axis=0)
    var = xd.var(axis=0)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * invstd
    y = (gamma.data[:, None] * xhat + beta.data[:, None]).reshape(x.shape)
    out = Tensor.from_op(y, (x, gamma, beta), None)
    if out.requires_grad:
        def bwd(g, x=x, gamma=gamma, beta=beta, xhat=xhat, invstd=invstd, C=C):
            gd = g.reshape(C, -1)
            if gamma.requires_grad:
                gamma._accumulate((gd * xhat).sum(axis=1))
            if beta.requires_grad:
                beta._accumulate(gd.sum(axis=1))
            if x.requires_grad:
                dxhat = gd * gamma.data[:, None]
                term = dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)
                x._accumulate((term * invstd).reshape(x.shape))
        out._backward = bwd
    return out


# -- convolution --------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, *,
           stride: int = 1, padding="same", groups: int = 1) -> Tensor:
    """2-d convolution on a single feature map.

    x: (C_in, H, W); w: (C_out, C_in/groups, k, k); odd k only.  padding is
    "same" (floor(k/2), keeps resolution at stride 1) or an explicit int.
    groups == C_in gives the depthwise case.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError(f"conv2d: expected (C,H,W) and (O,C/g,k,k), got {x.shape}, {w.shape}")
    c_in, H, W = x.shape
    c_out, c_g, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square with odd extent, got {kh}x{kw}")
    k = kh
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if c_in % groups or c_out % groups:
        raise ValueError(
            f"conv2d: groups={groups} does not divide channels {c_in}->{c_out}")
    if c_g != c_in // groups:
        raise ValueError(
            f"conv2d: weight expects {c_g} channels per group, input has {c_in // groups}")
    pad = k // 2 if padding == "same" else int(padding)
    if H + 2 * pad < k or W + 2 * pad < k:
        raise ValueError(f"conv2d: kernel {k} exceeds padded input {H+2*pad}x{W+2*pad}")

    h_out = (H + 2 * pad - k) // stride + 1
    w_out = (W + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    og, cg = c_out // groups, c_in // groups
    wg = w.data.reshape(groups, og, cg, k, k)
    xg = xp.reshape(groups, cg, *xp.shape[1:])
    y = np.zeros((groups, og, h_out, w_out), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            xs = xg[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
            y += np.einsum("goc,gchw->gohw", wg[:, :, :, i, j], xs, optimize=True)
    y = y.reshape(c_out, h_out, w_out)
    if b is not None:
        if b.shape != (c_out,):
            raise ValueError(f"conv2d: bias shape {b.shape} != ({c_out},)")
        y = y + b.data[:, None, None]

    parents = (x, w) if b is None else (x, w, b)
    out = Tensor.from_op(y, parents, None)
    if out.requires_grad:
        def bwd(g, x=x, w=w, b=b, xg=xg, wg=wg, pad=pad, k=k, stride=stride,
                h_out=h_out, w_out=w_out, groups=groups, og=og, cg=cg):
            gg = g.reshape(groups, og, h_out, w_out)
            if b is not None and b.requires_grad:
                b._accumulate(g.sum(axis=(1, 2)))
            if w.requires_grad:
                dw = np.zeros_like(wg)
                for i in range(k):
                    for j in range(k):
                        xs = xg[:, :, i:i + stride * h_out:stride,
                                j:j + stride * w_out:stride]
                        dw[:, :, :, i, j] = np.einsum(
                            "gohw,gchw->goc", gg, xs, optimize=True)
                w._accumulate(dw.reshape(w.shape))
            if x.requires_grad:
                dxp = np.zeros_like(xg)
                for i in range(k):
                    for j in range(k):
                        dxp[:, :, i:i + stride * h_out:stride,
                            j:j + stride * w_out:stride] += np.einsum(
                                "goc,gohw->gchw", wg[:, :, :, i, j], gg,
                                optimize=True)
                dxp = dxp.reshape(-1, *xg.shape[2:])
                if pad:
                    dxp = dxp[:, pad:-pad, pad:-pad]
                x._accumulate(dxp)
        out._backward = bwd
    return out


# -- classification head ------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor.from_op(y, (x,), None)
    if out.requires_grad:
        def bwd(g, x=x, y=y, axis=axis):
            dot = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (g - dot))
        out._backward = bwd
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor.from_op(y, (x,), None)
    if out.requires_grad:
        def bwd(g, x=x, y=y, axis=axis):
            x._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))
        out._backward = bwd
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer class targets.

    logits: (B, K) or (K,); targets: length-B int array (or single int).
    """
    if logits.ndim == 1:
        lg = logits.data[None, :]
    elif logits.ndim == 2:
        lg = logits.data
    else:
        raise ValueError(f"cross_entropy: logits must be (B,K) or (K,), got {logits.shape}")
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    B, K = lg.shape
    if t.shape != (B,):
        raise ValueError(f"cross_entropy: {B} rows but {t.shape} targets")
    if t.min() < 0 or t.max() >= K:
        raise ValueError(f"cross_entropy: target outside [0, {K}): {t}")
    shifted = lg - lg.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -logp[np.arange(B), t].mean()
    out = Tensor.from_op(np.asarray(loss), (logits,), None)
    if out.requires_grad:
        def bwd(g, logits=logits, logp=logp, t=t, B=B):
            grad = np.exp(logp)
            grad[np.arange(B), t] -= 1.0
            grad *= float(np.asarray(g).reshape(-1)[0]) / B
            logits._accumulate(grad.reshape(logits.shape))
        out._backward = bwd
    return out
