"""Reverse-mode autodiff over float64 numpy arrays.

A :class:`Tensor` wraps an ndarray plus an optional gradient buffer and a
backward closure; operations build a graph whose ``backward()`` walks the
nodes in reverse topological order.  The op set is exactly what the
convolutional denoiser needs: conv2d, linear, SiLU, group norm, nearest
upsampling, channel concat, time-bias injection, residual add, and a
(optionally per-example weighted) MSE loss head.

Feature maps are laid out NHWC so that im2col feeds BLAS directly and the
GEMM output is already in activation order; convolution weights use the
(out_ch, in_ch, k, k) convention at the API surface.  Everything is
float64: the finite-difference gradient checks in the test suite run at
1e-4 relative error, which 32-bit arithmetic cannot support.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidParameterError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        # out-of-place: grad arrays can be aliased by several nodes, and
        # never mutating them keeps that sharing safe
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar result through the recorded graph.

        The graph is released as it is consumed so large conv workspaces
        do not outlive the step.
        """
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
            node._parents = ()
            node._backward = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, shift: Tensor | None = None) -> Tensor:
    """Same-padded cross-correlation on NHWC input.

    `w` is (out_ch, in_ch, k, k) with k odd; zero padding of k//2 keeps
    the spatial size at stride 1 and halves it (even inputs) at stride 2.
    `shift`, when given, is an (N, out_ch) per-example bias added in the
    epilogue (the fused form of timestep injection).
    """
    N, H, W, C = x.data.shape
    O, Cin, k, k2 = w.data.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {k}x{k2}")
    if Cin != C:
        raise ShapeError(f"weight expects {Cin} input channels, tensor has {C}")
    if b.data.shape != (O,):
        raise ShapeError(f"bias must have shape ({O},), got {b.data.shape}")
    if shift is not None and shift.data.shape != (N, O):
        raise ShapeError(f"shift must be ({N}, {O}), got {shift.data.shape}")
    pad = k // 2
    s = stride

    if k == 1 and s == 1:
        cols = x.data.reshape(N * H * W, C)
        Ho, Wo = H, W
    else:
        xp = np.zeros((N, H + 2 * pad, W + 2 * pad, C))
        xp[:, pad:pad + H, pad:pad + W, :] = x.data
        win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (N, H', W', C, k, k)
        win = win[:, ::s, ::s].transpose(0, 1, 2, 4, 5, 3)  # kernel-major, C minor
        Ho, Wo = win.shape[1], win.shape[2]
        cols = win.reshape(N * Ho * Wo, k * k * C)  # copies into GEMM layout
    wmat = w.data.transpose(2, 3, 1, 0).reshape(-1, O)  # (k, k, Cin) rows
    out = cols @ wmat
    out += b.data
    out = out.reshape(N, Ho, Wo, O)
    if shift is not None:
        out += shift.data[:, None, None, :]

    parents = (x, w, b) if shift is None else (x, w, b, shift)

    def backward():
        dy = conv_out.grad.reshape(-1, O)
        if w.requires_grad:
            w.accumulate((cols.T @ dy).reshape(k, k, C, O).transpose(3, 2, 0, 1))
        if b.requires_grad:
            b.accumulate(dy.sum(axis=0))
        if shift is not None and shift.requires_grad:
            shift.accumulate(conv_out.grad.sum(axis=(1, 2)))
        if x.requires_grad:
            dcols = dy @ wmat.T
            if k == 1 and s == 1:
                x.accumulate(dcols.reshape(N, H, W, C))
            else:
                dxp = np.zeros((N, H + 2 * pad, W + 2 * pad, C))
                dwin = dcols.reshape(N, Ho, Wo, k, k, C)
                for i in range(k):
                    for j in range(k):
                        dxp[:, i:i + s * Ho:s, j:j + s * Wo:s, :] += dwin[:, :, :, i, j, :]
                x.accumulate(dxp[:, pad:pad + H, pad:pad + W, :])

    conv_out = _result(out, parents, backward)
    return conv_out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b with x (N, D), w (D, O)."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"linear: {x.data.shape} @ {w.data.shape}")
    out = x.data @ w.data + b.data

    def backward():
        dy = lin_out.grad
        if w.requires_grad:
            w.accumulate(x.data.T @ dy)
        if b.requires_grad:
            b.accumulate(dy.sum(axis=0))
        if x.requires_grad:
            x.accumulate(dy @ w.data.T)

    lin_out = _result(out, (x, w, b), backward)
    return lin_out


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x); the smooth nonlinearity used throughout the net.

    sigmoid is evaluated as (tanh(x/2) + 1) / 2, which is overflow-free
    and a single ufunc pass over the (large) activation buffers.
    """
    xd = x.data
    sig = xd * 0.5
    np.tanh(sig, out=sig)
    sig += 1.0
    sig *= 0.5
    out = xd * sig

    def backward():
        if x.requires_grad:
            g = 1.0 - sig
            g *= xd
            g += 1.0
            g *= sig
            g *= act.grad
            x.accumulate(g)

    act = _result(out, (x,), backward)
    return act


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Per-sample group normalization over NHWC features."""
    N, H, W, C = x.data.shape
    if C % groups != 0:
        raise ShapeError(f"channels {C} not divisible by {groups} groups")
    cg = C // groups
    xg = x.data.reshape(N, H, W, groups, cg)
    mu = xg.mean(axis=(1, 2, 4), keepdims=True)
    xhat5 = xg - mu
    var = np.einsum("nhwgc,nhwgc->ng", xhat5, xhat5) / (H * W * cg)
    inv_std = 1.0 / np.sqrt(var + eps).reshape(N, 1, 1, groups, 1)
    xhat5 *= inv_std
    xhat = xhat5.reshape(N, H, W, C)
    out = xhat * gamma.data
    out += beta.data

    def backward():
        dy = norm_out.grad
        if gamma.requires_grad:
            gamma.accumulate(np.einsum("nhwc,nhwc->c", dy, xhat))
        if beta.requires_grad:
            beta.accumulate(dy.sum(axis=(0, 1, 2)))
        if x.requires_grad:
            dxhat = (dy * gamma.data).reshape(N, H, W, groups, cg)
            m = H * W * cg
            m1 = dxhat.sum(axis=(1, 2, 4), keepdims=True)
            m1 /= m
            m2 = np.einsum("nhwgc,nhwgc->ng", dxhat, xhat5).reshape(N, 1, 1, groups, 1)
            m2 /= m
            dxhat -= m1
            dxhat -= xhat5 * m2
            dxhat *= inv_std
            x.accumulate(dxhat.reshape(N, H, W, C))

    norm_out = _result(out, (x, gamma, beta), backward)
    return norm_out


def space_to_depth(x: Tensor, factor: int) -> Tensor:
    """Fold factor x factor pixel blocks into channels (NHWC).

    (N, H, W, C) -> (N, H/f, W/f, f*f*C) with block-position-major
    channel order; exactly inverted by :func:`depth_to_space`.
    """
    N, H, W, C = x.data.shape
    f = factor
    if H % f or W % f:
        raise ShapeError(f"spatial dims {H}x{W} not divisible by fold factor {f}")
    out = (
        x.data.reshape(N, H // f, f, W // f, f, C)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(N, H // f, W // f, f * f * C)
    )

    def backward():
        if x.requires_grad:
            g = (
                res.grad.reshape(N, H // f, W // f, f, f, C)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(N, H, W, C)
            )
            x.accumulate(g)

    res = _result(out, (x,), backward)
    return res


def depth_to_space(x: Tensor, factor: int) -> Tensor:
    """Unfold channels back into factor x factor pixel blocks (NHWC)."""
    N, H, W, C = x.data.shape
    f = factor
    if C % (f * f):
        raise ShapeError(f"channels {C} not divisible by fold factor squared {f * f}")
    co = C // (f * f)
    out = (
        x.data.reshape(N, H, W, f, f, co)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(N, H * f, W * f, co)
    )

    def backward():
        if x.requires_grad:
            g = (
                res.grad.reshape(N, H, f, W, f, co)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(N, H, W, C)
            )
            x.accumulate(g)

    res = _result(out, (x,), backward)
    return res


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each pixel factor x factor (NHWC)."""
    if factor < 1:
        raise InvalidParameterError(f"upsample factor must be >= 1, got {factor}")
    N, H, W, C = x.data.shape
    out = x.data.repeat(factor, axis=1).repeat(factor, axis=2)

    def backward():
        if x.requires_grad:
            g = up_out.grad.reshape(N, H, factor, W, factor, C)
            x.accumulate(g.sum(axis=(2, 4)))

    up_out = _result(out, (x,), backward)
    return up_out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def backward():
        if a.requires_grad:
            a.accumulate(res.grad)
        if b.requires_grad:
            b.accumulate(res.grad)

    res = _result(out, (a, b), backward)
    return res


def time_inject(x: Tensor, tb: Tensor) -> Tensor:
    """Add a per-example, per-channel bias (N, C) onto NHWC features."""
    N, H, W, C = x.data.shape
    if tb.data.shape != (N, C):
        raise ShapeError(f"time bias must be ({N}, {C}), got {tb.data.shape}")
    out = x.data + tb.data[:, None, None, :]

    def backward():
        if x.requires_grad:
            x.accumulate(res.grad)
        if tb.requires_grad:
            tb.accumulate(res.grad.sum(axis=(1, 2)))

    res = _result(out, (x, tb), backward)
    return res


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeError(f"concat: {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)

    def backward():
        if a.requires_grad:
            a.accumulate(res.grad[..., :ca])
        if b.requires_grad:
            b.accumulate(res.grad[..., ca:])

    res = _result(out, (a, b), backward)
    return res


def mse_loss(pred: Tensor, target: np.ndarray, example_weights=None) -> Tensor:
    """Mean squared error over all elements, as a scalar Tensor.

    With `example_weights` (one per leading-axis element) each example's
    per-element MSE is scaled before averaging over the batch:
        L = mean_i [ w_i * mean(|pred_i - target_i|^2) ].
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ShapeError(f"mse: {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    if example_weights is None:
        out = np.mean(diff ** 2)
        scale = 2.0 / diff.size
        wvec = None
    else:
        wvec = np.asarray(example_weights, dtype=np.float64)
        if wvec.shape != (pred.data.shape[0],):
            raise ShapeError("one weight per batch example required")
        per_ex = (diff ** 2).reshape(diff.shape[0], -1).mean(axis=1)
        out = float(np.mean(wvec * per_ex))
        scale = 2.0 / (diff[0].size * diff.shape[0])

    def backward():
        if pred.requires_grad:
            if wvec is None:
                pred.accumulate(loss.grad * scale * diff)
            else:
                shaped = wvec.reshape((-1,) + (1,) * (diff.ndim - 1))
                pred.accumulate(loss.grad * scale * shaped * diff)

    loss = _result(np.asarray(out), (pred,), backward)
    return loss
