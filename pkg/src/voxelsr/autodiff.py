"""Minimal reverse-mode differentiation over dense 5D tensors.

Exactly the layer set the volumetric SR networks need: same-padding 3D
convolution (stride 1), batch normalization, ELU, channel concatenation,
MSE loss, plus elementwise add and full-sum helpers. Operations executed
inside a `with Tape():` block are recorded; `backward` replays the tape
in reverse execution order (a reverse topological order by construction)
and accumulates gradients additively across fan-out.

Tensors carry whatever float dtype they are built with: training runs in
float32, gradient checking in float64.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

_IM2COL_MAX_ELEMENTS = 1 << 22  # small inputs take the one-GEMM path

_debug_checks = False


def set_debug_checks(enabled: bool):
    """Toggle finiteness assertions on every op output and gradient."""
    global _debug_checks
    _debug_checks = bool(enabled)


def _assert_finite(arr, what):
    if _debug_checks and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


class Tensor:
    """N-d array with an optional gradient buffer.

    Shape convention for network activations is (batch, channels, depth,
    height, width); parameters use whatever shape the layer needs.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


_tape_stack = threading.local()


def _stack():
    if not hasattr(_tape_stack, "tapes"):
        _tape_stack.tapes = []
    return _tape_stack.tapes


class Tape:
    """Ordered record of executed ops for one forward pass."""

    def __init__(self):
        self.nodes = []  # (output tensor, backward closure)
        self._consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False

    def reset(self):
        self.nodes.clear()
        self._consumed = False


def _active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class no_grad:
    """Context that suppresses tape recording for the ops inside it."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False


def _record(out: Tensor, backward_fn):
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append((out, backward_fn))


def _accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    _assert_finite(g, "gradient")
    if t.grad is None:
        # copy views so later accumulation cannot alias upstream buffers
        t.grad = g.copy() if g.base is not None else g
    else:
        t.grad += g


def backward(loss: Tensor, tape: Tape):
    """Propagate d(loss)/d(tensor) to every requires_grad tensor on the tape."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if tape._consumed:
        raise RuntimeError("backward already ran on this tape; call tape.reset() first")
    tape._consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.nodes):
        if out.grad is not None:
            fn(out.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _pad_input(x, pads):
    pd, ph, pw = pads
    if pd == 0 and ph == 0 and pw == 0:
        return x
    n, c, d, h, w = x.shape
    out = np.zeros((n, c, d + 2 * pd, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    out[:, :, pd : pd + d, ph : ph + h, pw : pw + w] = x
    return out


def conv3d(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 cross-correlation with zero "same" padding.

    x: (N, C_in, D, H, W); weights: (C_out, C_in, kd, kh, kw) with odd
    extents; bias: (C_out,). Output spatial dims equal input dims.
    """
    xd, wd, bd = x.data, weights.data, bias.data
    if xd.ndim != 5 or wd.ndim != 5:
        raise ValueError(f"conv3d expects 5D input/weights, got {xd.shape}, {wd.shape}")
    n, c_in, d, h, w = xd.shape
    c_out, wc_in, kd, kh, kw = wd.shape
    if wc_in != c_in:
        raise ValueError(f"input has {c_in} channels, weights expect {wc_in}")
    if any(k % 2 == 0 for k in (kd, kh, kw)):
        raise ValueError(f"kernel extents must be odd, got {(kd, kh, kw)}")
    if bd.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bd.shape}")
    pads = (kd // 2, kh // 2, kw // 2)
    xp = _pad_input(xd, pads)
    spatial = d * h * w

    if xd.size * kd * kh * kw <= _IM2COL_MAX_ELEMENTS:
        windows = np.lib.stride_tricks.sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
        col = windows.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * spatial, c_in * kd * kh * kw)
        out = col @ wd.reshape(c_out, -1).T + bd
        out = np.ascontiguousarray(out.reshape(n, d, h, w, c_out).transpose(0, 4, 1, 2, 3))
    else:
        # per-offset GEMMs; the (kd, kh, kw, c_out, c_in) copy keeps every
        # weight slice contiguous, which np.matmul needs to stay on BLAS
        wk = np.ascontiguousarray(wd.transpose(2, 3, 4, 0, 1))
        acc = np.zeros((n, c_out, spatial), dtype=xd.dtype)
        for a in range(kd):
            for b in range(kh):
                for c in range(kw):
                    v = xp[:, :, a : a + d, b : b + h, c : c + w].reshape(n, c_in, spatial)
                    acc += np.matmul(wk[a, b, c], v)
        out = acc.reshape(n, c_out, d, h, w) + bd.reshape(1, c_out, 1, 1, 1)
    _assert_finite(out, "conv3d output")

    result = Tensor(out, requires_grad=x.requires_grad or weights.requires_grad or bias.requires_grad)

    def _backward(go):
        go_flat = np.ascontiguousarray(go.reshape(n, c_out, spatial))
        if bias.requires_grad:
            _accumulate(bias, go.sum(axis=(0, 2, 3, 4)))
        need_gx = x.requires_grad
        need_gw = weights.requires_grad
        if not (need_gx or need_gw):
            return
        gxp = np.zeros_like(xp) if need_gx else None
        gw = np.zeros_like(wd) if need_gw else None
        wkt = np.ascontiguousarray(wd.transpose(2, 3, 4, 1, 0)) if need_gx else None
        for a in range(kd):
            for b in range(kh):
                for c in range(kw):
                    if need_gw:
                        v = xp[:, :, a : a + d, b : b + h, c : c + w].reshape(n, c_in, spatial)
                        gw[:, :, a, b, c] = np.matmul(go_flat, v.transpose(0, 2, 1)).sum(axis=0)
                    if need_gx:
                        gslice = np.matmul(wkt[a, b, c], go_flat)
                        gxp[:, :, a : a + d, b : b + h, c : c + w] += gslice.reshape(n, c_in, d, h, w)
        if need_gw:
            _accumulate(weights, gw)
        if need_gx:
            pd, ph, pw = pads
            _accumulate(x, gxp[:, :, pd : pd + d, ph : ph + h, pw : pw + w])

    _record(result, _backward)
    return result


@dataclass
class RunningStats:
    """Per-channel running mean/variance for batch-norm inference."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.99

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.99):
        return cls(
            mean=np.zeros(channels, dtype=dtype),
            var=np.ones(channels, dtype=dtype),
            momentum=momentum,
        )

    def update(self, batch_mean, batch_var):
        m = self.momentum
        self.mean = m * self.mean + (1.0 - m) * batch_mean.astype(self.mean.dtype)
        self.var = m * self.var + (1.0 - m) * batch_var.astype(self.var.dtype)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats,
               mode: str = "train", eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (batch, spatial) positions.

    Train mode normalizes with batch statistics (biased variance),
    updates the running stats, and records gradients; infer mode uses the
    running stats and is never recorded on the tape.
    """
    xd = x.data
    channels = xd.shape[1]
    if gamma.data.shape != (channels,) or beta.data.shape != (channels,):
        raise ValueError(
            f"gamma/beta must have shape ({channels},), got {gamma.data.shape}, {beta.data.shape}"
        )
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    cshape = (1, channels, 1, 1, 1)

    if mode == "infer":
        inv = 1.0 / np.sqrt(running.var.astype(xd.dtype) + eps)
        out = gamma.data.reshape(cshape) * (xd - running.mean.astype(xd.dtype).reshape(cshape)) \
            * inv.reshape(cshape) + beta.data.reshape(cshape)
        _assert_finite(out, "batch_norm output")
        return Tensor(out, requires_grad=False)

    axes = (0, 2, 3, 4)
    count = xd.size // channels
    mean = xd.mean(axis=axes)
    var = xd.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean.reshape(cshape)) * inv.reshape(cshape)
    out = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)
    _assert_finite(out, "batch_norm output")
    running.update(mean, var)

    result = Tensor(out, requires_grad=x.requires_grad or gamma.requires_grad or beta.requires_grad)

    def _backward(go):
        if gamma.requires_grad:
            _accumulate(gamma, (go * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accumulate(beta, go.sum(axis=axes))
        if x.requires_grad:
            g_xhat = go * gamma.data.reshape(cshape)
            sum_g = g_xhat.sum(axis=axes).reshape(cshape)
            sum_gx = (g_xhat * xhat).sum(axis=axes).reshape(cshape)
            gx = (inv.reshape(cshape) / count) * (count * g_xhat - sum_g - xhat * sum_gx)
            _accumulate(x, gx)

    _record(result, _backward)
    return result


def elu(x: Tensor) -> Tensor:
    """Exponential linear unit with alpha = 1."""
    xd = x.data
    positive = xd > 0
    out = np.where(positive, xd, np.expm1(xd))
    _assert_finite(out, "elu output")
    result = Tensor(out, requires_grad=x.requires_grad)

    def _backward(go):
        _accumulate(x, go * np.where(positive, xd.dtype.type(1), out + 1))

    _record(result, _backward)
    return result


def concat_channels(inputs) -> Tensor:
    """Concatenate along the channel axis in argument order."""
    inputs = list(inputs)
    if not inputs:
        raise ValueError("concat_channels needs at least one input")
    first = inputs[0].data.shape
    for t in inputs[1:]:
        s = t.data.shape
        if s[0] != first[0] or s[2:] != first[2:]:
            raise ValueError(f"batch/spatial dims differ: {first} vs {s}")
    out = np.concatenate([t.data for t in inputs], axis=1)
    result = Tensor(out, requires_grad=any(t.requires_grad for t in inputs))

    offsets = np.cumsum([0] + [t.data.shape[1] for t in inputs])

    def _backward(go):
        for t, lo, hi in zip(inputs, offsets[:-1], offsets[1:]):
            _accumulate(t, go[:, lo:hi])

    _record(result, _backward)
    return result


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    loss = np.mean(diff * diff)
    _assert_finite(loss, "mse loss")
    result = Tensor(loss, requires_grad=pred.requires_grad or target.requires_grad)

    scale = 2.0 / diff.size

    def _backward(go):
        g = go * scale * diff
        if pred.requires_grad:
            _accumulate(pred, g)
        if target.requires_grad:
            _accumulate(target, -g)

    _record(result, _backward)
    return result


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    result = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def _backward(go):
        _accumulate(a, go)
        _accumulate(b, go)

    _record(result, _backward)
    return result


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    result = Tensor(x.data.sum(), requires_grad=x.requires_grad)

    def _backward(go):
        _accumulate(x, np.full_like(x.data, go))

    _record(result, _backward)
    return result


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place on the parameter data."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state slots must have matching lengths")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Zero-mean Gaussian with std sqrt(2 / fan_in)."""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
