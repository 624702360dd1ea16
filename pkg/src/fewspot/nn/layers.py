"""Network layers with fused forward/backward implementations.

All activations flow through autograd.Tensor nodes; each op here
registers a single hand-derived vector-Jacobian product instead of
composing primitives, which keeps the graphs small and the hot paths
vectorized.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .autograd import Tensor, _node, as_tensor, parameter


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Asymmetric zero padding that reproduces stride-aware SAME conv."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(x, w, stride, padding):
    """x: (N, C, H, W), w: (O, C, kh, kw), padding: ((pt, pb), (pl, pr))."""
    x, w = as_tensor(x), as_tensor(w)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    (pt, pb), (pl, pr) = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    # (N, Ho, Wo, C*kh*kw) rows against (O, C*kh*kw) filters
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw
    )
    wmat = w.data.reshape(o, c * kh * kw)
    y = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, :, ki : ki + ho * sh : sh, kj : kj + wo * sw : sw] += gcols[
                    :, :, :, :, ki, kj
                ].transpose(0, 3, 1, 2)
        return gxp[:, :, pt : pt + h, pl : pl + wd], gw

    return _node(np.ascontiguousarray(y), (x, w), vjp)


def pointwise1x1(x, w):
    """1x1 conv as a batched matmul: x (N, C, H, W), w (O, C, 1, 1)."""
    x, w = as_tensor(x), as_tensor(w)
    n, c, h, wd = x.shape
    o = w.shape[0]
    wmat = w.data.reshape(o, c)
    xr = x.data.reshape(n, c, h * wd)
    y = (wmat[None] @ xr).reshape(n, o, h, wd)

    def vjp(g):
        gr = g.reshape(n, o, h * wd)
        gx = (wmat.T[None] @ gr).reshape(x.shape)
        gw = np.einsum("nop,ncp->oc", gr, xr).reshape(w.shape)
        return gx, gw

    return _node(y, (x, w), vjp)


def depthwise3x3(x, w):
    """Per-channel 3x3 conv, stride 1, pad 1; dispatched to the backend."""
    x, w = as_tensor(x), as_tensor(w)
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    y = kernels.depthwise3x3_forward(xd, wd)

    def vjp(g):
        g = np.ascontiguousarray(g)
        return (
            kernels.depthwise3x3_backward_input(g, wd),
            kernels.depthwise3x3_backward_weight(xd, g),
        )

    return _node(np.asarray(y), (x, w), vjp)


def batchnorm2d(x, gamma, beta, running_mean, running_var, *, eps, momentum,
                training, update_stats=True):
    """Channel batch norm over (N, H, W); mutates running stats in train mode."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        xhat = x.data - mean[None, :, None, None]
        var = np.einsum("nchw,nchw->c", xhat, xhat) / (x.data.size / x.shape[1])
        if update_stats:
            count = x.data.size // x.shape[1]
            unbiased = var * (count / max(count - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
        xhat = x.data - mean[None, :, None, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat *= inv_std[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat
    y += beta.data[None, :, None, None]

    def vjp(g):
        dgamma = np.einsum("nchw,nchw->c", g, xhat)
        dbeta = g.sum(axis=axes)
        scale = (gamma.data * inv_std)[None, :, None, None]
        if training:
            m = x.data.size / x.shape[1]
            dx = g - dbeta[None, :, None, None] / m
            dx -= xhat * (dgamma / m)[None, :, None, None]
            dx *= scale
        else:
            dx = scale * g
        return dx, dgamma, dbeta

    return _node(y, (x, gamma, beta), vjp)


def layernorm_channels(x, gamma, beta, *, eps):
    """Layer norm across the channel axis, independently per (n, h, w)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mean = x.data.mean(axis=1, keepdims=True)
    xhat = x.data - mean
    var = np.mean(xhat * xhat, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat *= inv_std
    y = gamma.data[None, :, None, None] * xhat
    y += beta.data[None, :, None, None]

    def vjp(g):
        dgamma = np.einsum("nchw,nchw->c", g, xhat)
        dbeta = g.sum(axis=(0, 2, 3))
        gh = g * gamma.data[None, :, None, None]
        dx = gh - gh.mean(axis=1, keepdims=True)
        dx -= xhat * np.mean(gh * xhat, axis=1, keepdims=True)
        dx *= inv_std
        return dx, dgamma, dbeta

    return _node(y, (x, gamma, beta), vjp)


def global_avg_pool(x):
    """(N, C, H, W) -> (N, C) mean over the spatial grid."""
    return as_tensor(x).mean(axis=(2, 3))


class Module:
    """Base class: parameter registry plus named-tensor checkpointing."""

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item
            else:
                yield name, value

    def parameters(self) -> list[Tensor]:
        out = []
        for _, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append(value)
            elif isinstance(value, Module):
                out.extend(value.parameters())
        return out

    def state_tensors(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, value in self._children():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value.data
            elif isinstance(value, np.ndarray):
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.state_tensors(f"{key}."))
        return out

    def load_state_tensors(self, tensors, prefix: str = "") -> None:
        for name, value in self._children():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                incoming = np.asarray(tensors[key], dtype=value.data.dtype)
                if incoming.shape != value.data.shape:
                    raise ValueError(
                        f"tensor {key!r}: expected shape {value.data.shape}, "
                        f"got {incoming.shape}"
                    )
                value.data = incoming.copy()
            elif isinstance(value, np.ndarray):
                incoming = np.asarray(tensors[key])
                if incoming.shape != value.shape:
                    raise ValueError(
                        f"tensor {key!r}: expected shape {value.shape}, "
                        f"got {incoming.shape}"
                    )
                value[...] = incoming
            elif isinstance(value, Module):
                value.load_state_tensors(tensors, f"{key}.")


def _fan_in_uniform(rng, shape, fan_in, dtype=np.float64) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride, rng, name, dtype=np.float64):
        self.kernel = kernel
        self.stride = stride
        fan_in = in_ch * kernel[0] * kernel[1]
        self.weight = parameter(
            _fan_in_uniform(rng, (out_ch, in_ch, *kernel), fan_in, dtype),
            name=f"{name}.weight",
            dtype=dtype,
        )

    def __call__(self, x):
        h, w = x.shape[2], x.shape[3]
        pad = (
            same_padding(h, self.kernel[0], self.stride[0]),
            same_padding(w, self.kernel[1], self.stride[1]),
        )
        return conv2d(x, self.weight, self.stride, pad)


class DepthwiseConv3x3(Module):
    def __init__(self, channels, rng, name, dtype=np.float64):
        self.weight = parameter(
            _fan_in_uniform(rng, (channels, 3, 3), 9, dtype),
            name=f"{name}.weight",
            dtype=dtype,
        )

    def __call__(self, x):
        return depthwise3x3(x, self.weight)


class PointwiseConv(Module):
    """1x1 convolution, implemented as a matmul over channel vectors."""

    def __init__(self, in_ch, out_ch, rng, name, dtype=np.float64):
        self.weight = parameter(
            _fan_in_uniform(rng, (out_ch, in_ch, 1, 1), in_ch, dtype),
            name=f"{name}.weight",
            dtype=dtype,
        )

    def __call__(self, x):
        return pointwise1x1(x, self.weight)


class BatchNorm2d(Module):
    def __init__(self, channels, name, eps=1e-5, momentum=0.1, dtype=np.float64):
        self.eps = eps
        self.momentum = momentum
        self.gamma = parameter(np.ones(channels), name=f"{name}.gamma", dtype=dtype)
        self.beta = parameter(np.zeros(channels), name=f"{name}.beta", dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x, *, training, update_stats=True):
        return batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            eps=self.eps,
            momentum=self.momentum,
            training=training,
            update_stats=update_stats,
        )


class LayerNormChannels(Module):
    def __init__(self, channels, name, eps=1e-5, dtype=np.float64):
        self.eps = eps
        self.gamma = parameter(np.ones(channels), name=f"{name}.gamma", dtype=dtype)
        self.beta = parameter(np.zeros(channels), name=f"{name}.beta", dtype=dtype)

    def __call__(self, x):
        return layernorm_channels(x, self.gamma, self.beta, eps=self.eps)
