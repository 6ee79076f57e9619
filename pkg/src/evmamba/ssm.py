"""Selective state-space scan kernel.

The core primitive is a per-channel linear recurrence over a token sequence,

    h_t = A_bar_t * h_{t-1} + B_bar_t * x_t        (state:  D x N)
    y_t = sum_n C_t[n] * h_t[:, n]                 (output: D)

whose transition and input maps are discretized from continuous parameters
with a step size produced from the input itself ("selection"):

    delta_t = softplus(delta_bias + W_delta x_t)   > 0
    A_bar_t = exp(delta_t * A)                     zero-order hold
    B_bar_t = delta_t * B_t                        first-order input approx
    B_t, C_t = W_b x_t, W_c x_t

A is stored as log(-A) so the transition stays strictly stable (A < 0 and
0 < A_bar < 1 for any real stored value).  For time-invariant parameters the
recurrence equals a causal 1-d convolution with kernel
(C B_bar, C A_bar B_bar, C A_bar^2 B_bar, ...), which is the independent
oracle the verification suite checks against.

Two surfaces are exposed: ``apply_ssm`` is the training path (selection and
scan recorded on the autodiff tape, scan backward hand-derived), while
``select_params``/``selective_scan`` operate on explicit discrete parameters
for inspection and verification.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor, get_dtype


# -- recurrence step audit ----------------------------------------------------

class StepCounter:
    """Counts recurrence steps (one per token per directional pass)."""

    def __init__(self):
        self.total = 0
        self.calls = 0

    def record(self, n: int) -> None:
        self.total += int(n)
        self.calls += 1


_ACTIVE_COUNTERS: list[StepCounter] = []


@contextlib.contextmanager
def count_steps():
    """Audit recurrence work done inside the block: yields a StepCounter."""
    c = StepCounter()
    _ACTIVE_COUNTERS.append(c)
    try:
        yield c
    finally:
        _ACTIVE_COUNTERS.remove(c)


def _record_steps(n: int) -> None:
    for c in _ACTIVE_COUNTERS:
        c.record(n)


# -- parameters ---------------------------------------------------------------

@dataclass
class SsmParams:
    """Learnable parameters of one selective-scan kernel over D channels.

    log_neg_a stores log(-A) per (channel, state); delta_bias offsets the
    step-size path before the softplus; the three projections produce the
    input-dependent step size, input map and output map.
    """

    log_neg_a: Tensor      # (D, N)
    delta_bias: Tensor     # (D,)
    b_proj: Tensor         # (N, D)
    c_proj: Tensor         # (N, D)
    delta_proj: Tensor     # (D, D)

    @property
    def dim(self) -> int:
        return self.log_neg_a.shape[0]

    @property
    def state_dim(self) -> int:
        return self.log_neg_a.shape[1]

    def tensors(self) -> dict:
        return {
            "log_neg_a": self.log_neg_a,
            "delta_bias": self.delta_bias,
            "b_proj": self.b_proj,
            "c_proj": self.c_proj,
            "delta_proj": self.delta_proj,
        }


def init_ssm_params(dim: int, state_dim: int, rng: np.random.Generator) -> SsmParams:
    """Stable default initialization.

    -A spans [1, state_dim] in every channel, and softplus(delta_bias) is
    uniform in [0.001, 0.1] so initial step sizes are small but nonzero.
    """
    dt = get_dtype()
    log_neg_a = np.tile(np.log(np.arange(1, state_dim + 1, dtype=dt)), (dim, 1))
    u = rng.uniform(0.001, 0.1, size=dim)
    delta_bias = np.log(np.expm1(u)).astype(dt)
    scale = 1.0 / np.sqrt(dim)
    b_proj = (rng.standard_normal((state_dim, dim)) * scale).astype(dt)
    c_proj = (rng.standard_normal((state_dim, dim)) * scale).astype(dt)
    delta_proj = (rng.standard_normal((dim, dim)) * 0.1 * scale).astype(dt)
    return SsmParams(
        Tensor(log_neg_a, requires_grad=True),
        Tensor(delta_bias, requires_grad=True),
        Tensor(b_proj, requires_grad=True),
        Tensor(c_proj, requires_grad=True),
        Tensor(delta_proj, requires_grad=True),
    )


@dataclass
class DiscreteParams:
    """Per-timestep discretized parameters of one scan.

    a_bar/b_bar are (L, D, N); c is the per-step output map (L, N), shared
    across channels.  Time-invariant instances repeat one row L times.
    """

    a_bar: np.ndarray
    b_bar: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a_bar = np.asarray(self.a_bar, dtype=get_dtype())
        self.b_bar = np.asarray(self.b_bar, dtype=get_dtype())
        self.c = np.asarray(self.c, dtype=get_dtype())
        L, D, N = self.a_bar.shape
        if self.b_bar.shape != (L, D, N):
            raise ValueError(f"b_bar shape {self.b_bar.shape} != a_bar {self.a_bar.shape}")
        if self.c.shape != (L, N):
            raise ValueError(f"c shape {self.c.shape} incompatible with (L={L}, N={N})")

    @property
    def length(self) -> int:
        return self.a_bar.shape[0]

    def is_time_invariant(self, atol: float = 1e-12) -> bool:
        return (np.abs(self.a_bar - self.a_bar[:1]).max() <= atol
                and np.abs(self.b_bar - self.b_bar[:1]).max() <= atol
                and np.abs(self.c - self.c[:1]).max() <= atol)


# -- discretization -----------------------------------------------------------

def discretize(a, b, delta):
    """Zero-order-hold transition with first-order input map.

    a_bar = exp(delta * a), b_bar = delta * b.  Inputs broadcast as numpy
    arrays; delta must be strictly positive.
    """
    a = np.asarray(a, dtype=get_dtype())
    b = np.asarray(b, dtype=get_dtype())
    delta = np.asarray(delta, dtype=get_dtype())
    if np.any(delta <= 0):
        raise ValueError(f"discretize: step sizes must be positive, min={delta.min()}")
    return np.exp(delta * a), delta * b


def select_params(x, params: SsmParams) -> DiscreteParams:
    """Compute the input-dependent discrete parameters for a sequence.

    x is (L, D).  This is the inspection/verification surface; the training
    path fuses the same math onto the tape in apply_ssm.
    """
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=get_dtype())
    if xd.ndim != 2 or xd.shape[1] != params.dim:
        raise ValueError(f"select_params: x {xd.shape} does not match D={params.dim}")
    delta = np.logaddexp(0.0, xd @ params.delta_proj.data.T + params.delta_bias.data)
    b_seq = xd @ params.b_proj.data.T             # (L, N)
    c_seq = xd @ params.c_proj.data.T             # (L, N)
    a = -np.exp(params.log_neg_a.data)            # (D, N)
    a_bar = np.exp(delta[:, :, None] * a[None])
    b_bar = delta[:, :, None] * b_seq[:, None, :]
    return DiscreteParams(a_bar, b_bar, c_seq)


# -- recurrence ---------------------------------------------------------------

def _recurrence(a_bar, bu, c, h0):
    """Shared scan core: h_t = a_bar_t*h + bu_t; y_t,d = <h_t[d,:], c_t>.

    Returns (y, hs) with hs the stacked states needed by the backward pass.
    Records one audited step per token.
    """
    L, D, N = a_bar.shape
    h = np.zeros((D, N), dtype=a_bar.dtype) if h0 is None else h0.astype(a_bar.dtype)
    y = np.empty((L, D), dtype=a_bar.dtype)
    hs = np.empty((L, D, N), dtype=a_bar.dtype)
    for t in range(L):
        h = a_bar[t] * h + bu[t]
        hs[t] = h
        y[t] = h @ c[t]
    _record_steps(L)
    return y, hs


def selective_scan(x, dp: DiscreteParams, h0=None) -> Tensor:
    """Run the recurrence over explicit discrete parameters (no tape).

    x: (L, D); dp as produced by select_params or built directly; optional
    initial state h0 (D, N).  Verification oracle surface.
    """
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=get_dtype())
    L, D, N = dp.a_bar.shape
    if xd.shape != (L, D):
        raise ValueError(f"selective_scan: x {xd.shape} does not match params (L={L}, D={D})")
    h0d = None
    if h0 is not None:
        h0d = h0.data if isinstance(h0, Tensor) else np.asarray(h0, dtype=get_dtype())
        if h0d.shape != (D, N):
            raise ValueError(f"selective_scan: h0 {h0d.shape} != ({D}, {N})")
    bu = dp.b_bar * xd[:, :, None]
    y, _ = _recurrence(dp.a_bar, bu, dp.c, h0d)
    return Tensor(y)


def ssm_scan(x: Tensor, delta: Tensor, a: Tensor, b_seq: Tensor, c_seq: Tensor,
             h0: Tensor | None = None) -> Tensor:
    """Fused discretize-and-scan with a hand-derived backward rule.

    x, delta: (L, D); a: (D, N); b_seq, c_seq: (L, N).  The backward pass
    replays the recurrence in reverse, so tape memory stays O(L*D*N).
    """
    L, D = x.shape
    N = a.shape[1]
    if delta.shape != (L, D) or a.shape != (D, N) \
            or b_seq.shape != (L, N) or c_seq.shape != (L, N):
        raise ValueError(
            f"ssm_scan: inconsistent shapes x{x.shape} delta{delta.shape} "
            f"a{a.shape} b{b_seq.shape} c{c_seq.shape}")
    a_bar = np.exp(delta.data[:, :, None] * a.data[None])
    bu = (delta.data * x.data)[:, :, None] * b_seq.data[:, None, :]
    h0d = h0.data if h0 is not None else None
    y, hs = _recurrence(a_bar, bu, c_seq.data, h0d)

    parents = (x, delta, a, b_seq, c_seq) + ((h0,) if h0 is not None else ())
    out = Tensor.from_op(y, parents, None)
    if out.requires_grad:
        def bwd(g, x=x, delta=delta, a=a, b_seq=b_seq, c_seq=c_seq, h0=h0,
                a_bar=a_bar, hs=hs, h0d=h0d, L=L, D=D, N=N):
            dh = np.zeros((D, N), dtype=g.dtype)
            da_acc = np.zeros((D, N), dtype=g.dtype)
            ddelta = np.zeros((L, D), dtype=g.dtype)
            db = np.zeros((L, N), dtype=g.dtype)
            dc = np.zeros((L, N), dtype=g.dtype)
            dx = np.zeros((L, D), dtype=g.dtype)
            for t in range(L - 1, -1, -1):
                dh += g[t][:, None] * c_seq.data[t][None, :]
                dc[t] = g[t] @ hs[t]
                h_prev = hs[t - 1] if t > 0 else (
                    h0d if h0d is not None else np.zeros((D, N), dtype=g.dtype))
                dda = dh * h_prev * a_bar[t]
                ddelta[t] = (dda * a.data).sum(axis=1)
                da_acc += dda * delta.data[t][:, None]
                dh_b = (dh * b_seq.data[t][None, :]).sum(axis=1)
                ddelta[t] += dh_b * x.data[t]
                dx[t] = dh_b * delta.data[t]
                db[t] = (delta.data[t] * x.data[t]) @ dh
                dh = dh * a_bar[t]
            if x.requires_grad:
                x._accumulate(dx)
            if delta.requires_grad:
                delta._accumulate(ddelta)
            if a.requires_grad:
                a._accumulate(da_acc)
            if b_seq.requires_grad:
                b_seq._accumulate(db)
            if c_seq.requires_grad:
                c_seq._accumulate(dc)
            if h0 is not None and h0.requires_grad:
                h0._accumulate(dh)
        out._backward = bwd
    return out


def apply_ssm(x: Tensor, params: SsmParams, h0: Tensor | None = None) -> Tensor:
    """Selection followed by the scan, fully on the autodiff tape.

    x: (L, D) token sequence.  Equals selective_scan(select_params(x)) up to
    float ordering; the equality is covered by tests.
    """
    delta = ops.softplus(ops.add_rowvec(ops.linear(x, params.delta_proj),
                                        params.delta_bias))
    b_seq = ops.linear(x, params.b_proj)
    c_seq = ops.linear(x, params.c_proj)
    a = ops.mul(ops.exp(params.log_neg_a), -1.0)
    return ssm_scan(x, delta, a, b_seq, c_seq, h0)


# -- convolution-kernel view ---------------------------------------------------

def conv_kernel_form(dp: DiscreteParams, length: int | None = None) -> np.ndarray:
    """Kernel of the equivalent causal convolution for time-invariant params.

    Returns (D, L) with K[d, k] = sum_n c[n] * a_bar[d,n]^k * b_bar[d,n].
    Raises if the parameters vary along the sequence.
    """
    if not dp.is_time_invariant():
        raise ValueError("conv_kernel_form: parameters vary over time")
    L = dp.length if length is None else int(length)
    a0, b0, c0 = dp.a_bar[0], dp.b_bar[0], dp.c[0]      # (D,N), (D,N), (N,)
    D, N = a0.shape
    kern = np.empty((D, L), dtype=a0.dtype)
    term = b0.copy()
    for k in range(L):
        kern[:, k] = term @ c0
        term = term * a0
    return kern
