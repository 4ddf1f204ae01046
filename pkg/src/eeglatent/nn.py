"""Minimal differentiable-computation substrate on numpy.

Networks are flat lists of layer specs evaluated by `forward`, which
records a tape; `backward` replays the tape in reverse and accumulates
parameter gradients into the owning ParamStore. Conv layers run stride-1
with explicit padding; downsampling is done by average pooling and
upsampling by its exact adjoint, so decoder stacks invert encoder shapes
exactly. A transposed convolution is defined as the adjoint (gradient
w.r.t. input) of its mirrored forward convolution.

All gradients are checked against `finite_difference_grad` in the test
suite; run gradient checks in float64 (finite differences are unreliable
in float32).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .util import ShapeError

CHECKPOINT_MAGIC = b"ELCP"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# parameter storage

class ParamStore:
    """Named parameter tensors with aligned gradient slots.

    Iteration order is insertion order, hence deterministic for a fixed
    construction path. Non-trainable entries (batchnorm running
    statistics) persist in checkpoints but are skipped by the optimizer
    and by the finite-difference oracle.
    """

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> None:
        if name in self._values:
            raise ValueError(f"duplicate parameter name: {name}")
        v = np.array(value, copy=True)
        self._values[name] = v
        self._grads[name] = np.zeros_like(v)
        self._trainable[name] = trainable

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def set(self, name: str, value) -> None:
        v = np.asarray(value)
        if v.shape != self._values[name].shape:
            raise ShapeError(
                f"parameter {name}: assigned shape {v.shape} != {self._values[name].shape}"
            )
        self._values[name] = v.astype(self._values[name].dtype, copy=False)

    def names(self, trainable_only: bool = False) -> list[str]:
        if trainable_only:
            return [n for n in self._values if self._trainable[n]]
        return list(self._values)

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return self._grads

    def add_grad(self, name: str, g: np.ndarray) -> None:
        if g.shape != self._grads[name].shape:
            raise ShapeError(
                f"gradient for {name}: shape {g.shape} != {self._grads[name].shape}"
            )
        self._grads[name] += g

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, v in self._values.items():
            out.add(name, v.copy(), trainable=self._trainable[name])
        return out

    def n_parameters(self, trainable_only: bool = True) -> int:
        return sum(self._values[n].size for n in self.names(trainable_only))


# ---------------------------------------------------------------------------
# initialization helpers

def truncated_normal(shape, std: float, rng: np.random.Generator, dtype) -> np.ndarray:
    """Normal draws re-sampled into [-2, 2] sigma, then scaled by std."""
    out = rng.standard_normal(shape)
    for _ in range(8):
        mask = np.abs(out) > 2.0
        if not mask.any():
            break
        out[mask] = rng.standard_normal(int(mask.sum()))
    np.clip(out, -2.0, 2.0, out=out)
    return (out * std).astype(dtype)


def _init_array(spec, shape, rng, dtype) -> np.ndarray:
    kind = spec[0]
    if kind == "normal":
        fan_in = spec[1]
        return truncated_normal(shape, 1.0 / np.sqrt(fan_in), rng, dtype)
    if kind == "zeros":
        return np.zeros(shape, dtype=dtype)
    if kind == "ones":
        return np.ones(shape, dtype=dtype)
    raise ValueError(f"unknown init kind {kind!r}")


# ---------------------------------------------------------------------------
# convolution primitives (stride 1, explicit padding, grouped)

def _pad4(x, pad):
    ph0, ph1, pw0, pw1 = pad
    if ph0 or ph1 or pw0 or pw1:
        return np.pad(x, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)))
    return x


def _windows(x, kh, kw, pad):
    # (N, C, OH, OW, kh, kw) view over the padded input
    xp = _pad4(x, pad)
    return np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d_forward(x, w, b, pad, groups):
    n, cin, _, _ = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin != cin_g * groups:
        raise ShapeError(f"input has {cin} channels, weight expects {cin_g * groups}")
    win = _windows(x, kh, kw, pad)
    cout_g = cout // groups
    if groups == 1:
        out = np.einsum("nchwuv,ocuv->nohw", win, w, optimize=True)
    elif cin_g == 1:
        # depthwise: one group per input channel, cout_g filters each
        wd = w.reshape(groups, cout_g, kh, kw)
        out = np.einsum("nchwuv,cduv->ncdhw", win, wd, optimize=True)
        out = out.reshape(n, cout, *win.shape[2:4])
    else:
        parts = []
        for g in range(groups):
            ci = slice(g * cin_g, (g + 1) * cin_g)
            co = slice(g * cout_g, (g + 1) * cout_g)
            parts.append(np.einsum("nchwuv,ocuv->nohw", win[:, ci], w[co], optimize=True))
        out = np.concatenate(parts, axis=1)
    if b is not None:
        out += b[None, :, None, None]
    return out


def conv2d_weight_grad(x, dy, w_shape, pad, groups):
    cout, cin_g, kh, kw = w_shape
    n = x.shape[0]
    win = _windows(x, kh, kw, pad)
    cout_g = cout // groups
    if groups == 1:
        return np.einsum("nchwuv,nohw->ocuv", win, dy, optimize=True)
    if cin_g == 1:
        dyd = dy.reshape(n, groups, cout_g, *dy.shape[2:])
        dw = np.einsum("nchwuv,ncdhw->cduv", win, dyd, optimize=True)
        return dw.reshape(w_shape)
    dw = np.empty(w_shape, dtype=x.dtype)
    for g in range(groups):
        ci = slice(g * cin_g, (g + 1) * cin_g)
        co = slice(g * cout_g, (g + 1) * cout_g)
        dw[co] = np.einsum("nchwuv,nohw->ocuv", win[:, ci], dy[:, co], optimize=True)
    return dw


def _swap_flip(w, groups):
    # (Cout, Cin/g, kh, kw) -> (Cin, Cout/g, kh, kw), kernels rotated 180deg
    cout, cin_g, kh, kw = w.shape
    cout_g = cout // groups
    w2 = np.empty((cin_g * groups, cout_g, kh, kw), dtype=w.dtype)
    for g in range(groups):
        blk = w[g * cout_g:(g + 1) * cout_g, :, ::-1, ::-1]
        w2[g * cin_g:(g + 1) * cin_g] = blk.transpose(1, 0, 2, 3)
    return w2


def conv2d_input_grad(dy, w, pad, groups):
    _, _, kh, kw = w.shape
    ph0, ph1, pw0, pw1 = pad
    pad_t = (kh - 1 - ph0, kh - 1 - ph1, kw - 1 - pw0, kw - 1 - pw1)
    return conv2d_forward(dy, _swap_flip(w, groups), None, pad_t, groups)


def _same_pad(k: int) -> tuple[int, int]:
    return ((k - 1) // 2, k - 1 - (k - 1) // 2)


# ---------------------------------------------------------------------------
# layer specs

class Layer:
    kind = "layer"

    def param_specs(self):
        """(relative name, shape, init spec, trainable) per parameter."""
        return []

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, params, prefix, mode, rng):
        raise NotImplementedError

    def backward(self, dy, cache, params, prefix):
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = in_dim
        self.out_dim = out_dim

    def param_specs(self):
        return [
            ("W", (self.in_dim, self.out_dim), ("normal", self.in_dim), True),
            ("b", (self.out_dim,), ("zeros",), True),
        ]

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ShapeError(f"dense expects ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)

    def forward(self, x, params, prefix, mode, rng):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"dense expects (N, {self.in_dim}), got {x.shape}")
        return x @ params[prefix + "W"] + params[prefix + "b"], x

    def backward(self, dy, cache, params, prefix):
        x = cache
        params.add_grad(prefix + "W", x.T @ dy)
        params.add_grad(prefix + "b", dy.sum(axis=0))
        return dy @ params[prefix + "W"].T


class Conv2d(Layer):
    """Stride-1 grouped 2D convolution over (N, F, H, W) tensors."""

    def __init__(self, in_channels, out_channels, kernel, padding="valid", groups=1,
                 bias=True, kind="conv"):
        if in_channels % groups or out_channels % groups:
            raise ValueError("channel counts must be divisible by groups")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh, self.kw = kernel
        self.groups = groups
        self.bias = bias
        self.kind = kind
        if padding == "same":
            self.pad = _same_pad(self.kh) + _same_pad(self.kw)
        elif padding == "valid":
            self.pad = (0, 0, 0, 0)
        else:
            self.pad = tuple(padding)

    def param_specs(self):
        cin_g = self.in_channels // self.groups
        specs = [
            ("W", (self.out_channels, cin_g, self.kh, self.kw),
             ("normal", cin_g * self.kh * self.kw), True),
        ]
        if self.bias:
            specs.append(("b", (self.out_channels,), ("zeros",), True))
        return specs

    def out_shape(self, in_shape):
        f, h, w = in_shape
        if f != self.in_channels:
            raise ShapeError(f"{self.kind} expects {self.in_channels} channels, got {f}")
        ph0, ph1, pw0, pw1 = self.pad
        oh = h + ph0 + ph1 - self.kh + 1
        ow = w + pw0 + pw1 - self.kw + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self.kind}: kernel ({self.kh},{self.kw}) too large for {in_shape}")
        return (self.out_channels, oh, ow)

    def forward(self, x, params, prefix, mode, rng):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.kind} expects (N, {self.in_channels}, H, W), got {x.shape}")
        b = params[prefix + "b"] if self.bias else None
        y = conv2d_forward(x, params[prefix + "W"], b, self.pad, self.groups)
        return y, x

    def param_grads_only(self, dy, cache, params, prefix):
        x = cache
        w = params[prefix + "W"]
        params.add_grad(prefix + "W", conv2d_weight_grad(x, dy, w.shape, self.pad, self.groups))
        if self.bias:
            params.add_grad(prefix + "b", dy.sum(axis=(0, 2, 3)))

    def backward(self, dy, cache, params, prefix):
        self.param_grads_only(dy, cache, params, prefix)
        return conv2d_input_grad(dy, params[prefix + "W"], self.pad, self.groups)


class TransposedConv2d(Layer):
    """Adjoint of a mirrored forward convolution; exactly inverts its shape.

    Declared by the geometry of the convolution it mirrors: an instance
    with (in_channels, out_channels) undoes a Conv2d(out_channels,
    in_channels) with the same kernel/padding/groups.
    """

    kind = "transposed-conv"

    def __init__(self, in_channels, out_channels, kernel, padding="valid", groups=1,
                 bias=True):
        if in_channels % groups or out_channels % groups:
            raise ValueError("channel counts must be divisible by groups")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh, self.kw = kernel
        self.groups = groups
        self.bias = bias
        if padding == "same":
            self.pad = _same_pad(self.kh) + _same_pad(self.kw)
        elif padding == "valid":
            self.pad = (0, 0, 0, 0)
        else:
            self.pad = tuple(padding)

    def param_specs(self):
        cout_g = self.out_channels // self.groups
        cin_g = self.in_channels // self.groups
        # weight laid out as (Cout_fwd=in, Cin_fwd/g=out/g, kh, kw)
        specs = [
            ("W", (self.in_channels, cout_g, self.kh, self.kw),
             ("normal", cin_g * self.kh * self.kw), True),
        ]
        if self.bias:
            specs.append(("b", (self.out_channels,), ("zeros",), True))
        return specs

    def out_shape(self, in_shape):
        f, h, w = in_shape
        if f != self.in_channels:
            raise ShapeError(f"transposed-conv expects {self.in_channels} channels, got {f}")
        ph0, ph1, pw0, pw1 = self.pad
        oh = h + self.kh - 1 - ph0 - ph1
        ow = w + self.kw - 1 - pw0 - pw1
        return (self.out_channels, oh, ow)

    def forward(self, x, params, prefix, mode, rng):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"transposed-conv expects (N, {self.in_channels}, H, W), got {x.shape}"
            )
        y = conv2d_input_grad(x, params[prefix + "W"], self.pad, self.groups)
        if self.bias:
            y += params[prefix + "b"][None, :, None, None]
        return y, x

    def param_grads_only(self, dy, cache, params, prefix):
        x = cache
        w = params[prefix + "W"]
        params.add_grad(prefix + "W", conv2d_weight_grad(dy, x, w.shape, self.pad, self.groups))
        if self.bias:
            params.add_grad(prefix + "b", dy.sum(axis=(0, 2, 3)))

    def backward(self, dy, cache, params, prefix):
        self.param_grads_only(dy, cache, params, prefix)
        return conv2d_forward(dy, params[prefix + "W"], None, self.pad, self.groups)


class AvgPool2d(Layer):
    kind = "average-pool"

    def __init__(self, pool):
        self.ph, self.pw = pool

    def out_shape(self, in_shape):
        f, h, w = in_shape
        oh, ow = h // self.ph, w // self.pw
        if oh < 1 or ow < 1:
            raise ShapeError(f"average-pool ({self.ph},{self.pw}) too large for {in_shape}")
        return (f, oh, ow)

    def forward(self, x, params, prefix, mode, rng):
        n, f, h, w = x.shape
        oh, ow = h // self.ph, w // self.pw
        if oh < 1 or ow < 1:
            raise ShapeError(f"average-pool ({self.ph},{self.pw}) too large for {x.shape}")
        xc = x[:, :, :oh * self.ph, :ow * self.pw]
        y = xc.reshape(n, f, oh, self.ph, ow, self.pw).mean(axis=(3, 5))
        return y, (h, w)

    def backward(self, dy, cache, params, prefix):
        h, w = cache
        n, f, oh, ow = dy.shape
        dx = np.zeros((n, f, h, w), dtype=dy.dtype)
        scaled = dy / (self.ph * self.pw)
        dx[:, :, :oh * self.ph, :ow * self.pw] = np.repeat(
            np.repeat(scaled, self.ph, axis=2), self.pw, axis=3
        )
        return dx


class Upsample2d(Layer):
    """Adjoint of AvgPool2d, restoring an explicit target spatial shape.

    Each input element spreads uniformly (scaled by 1/(ph*pw)) over its
    pooling window; positions the pool's floor-cropping discarded are
    filled with zeros.
    """

    kind = "upsample"

    def __init__(self, pool, target_hw):
        self.ph, self.pw = pool
        self.th, self.tw = target_hw

    def out_shape(self, in_shape):
        f, h, w = in_shape
        if (h, w) != (self.th // self.ph, self.tw // self.pw):
            raise ShapeError(
                f"upsample to ({self.th},{self.tw}) by ({self.ph},{self.pw}) "
                f"expects input ({self.th // self.ph},{self.tw // self.pw}), got ({h},{w})"
            )
        return (f, self.th, self.tw)

    def forward(self, x, params, prefix, mode, rng):
        n, f, h, w = x.shape
        self.out_shape((f, h, w))
        y = np.zeros((n, f, self.th, self.tw), dtype=x.dtype)
        y[:, :, :h * self.ph, :w * self.pw] = np.repeat(
            np.repeat(x / (self.ph * self.pw), self.ph, axis=2), self.pw, axis=3
        )
        return y, (h, w)

    def backward(self, dy, cache, params, prefix):
        h, w = cache
        n, f = dy.shape[:2]
        dyc = dy[:, :, :h * self.ph, :w * self.pw]
        return dyc.reshape(n, f, h, self.ph, w, self.pw).mean(axis=(3, 5))


class BatchNorm2d(Layer):
    kind = "batchnorm"

    def __init__(self, num_features, momentum=0.9, eps=1e-5):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps

    def param_specs(self):
        f = (self.num_features,)
        return [
            ("gamma", f, ("ones",), True),
            ("beta", f, ("zeros",), True),
            ("running_mean", f, ("zeros",), False),
            ("running_var", f, ("ones",), False),
        ]

    def out_shape(self, in_shape):
        if in_shape[0] != self.num_features:
            raise ShapeError(f"batchnorm expects {self.num_features} channels, got {in_shape[0]}")
        return in_shape

    def forward(self, x, params, prefix, mode, rng):
        if x.ndim != 4 or x.shape[1] != self.num_features:
            raise ShapeError(f"batchnorm expects (N, {self.num_features}, H, W), got {x.shape}")
        gamma = params[prefix + "gamma"]
        beta = params[prefix + "beta"]
        if mode == "train":
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            rm = params[prefix + "running_mean"]
            rv = params[prefix + "running_var"]
            rm *= self.momentum
            rm += (1.0 - self.momentum) * mean.astype(rm.dtype)
            rv *= self.momentum
            rv += (1.0 - self.momentum) * var.astype(rv.dtype)
        else:
            mean = params[prefix + "running_mean"]
            var = params[prefix + "running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
        return y, (xhat, inv_std, mode)

    def backward(self, dy, cache, params, prefix):
        xhat, inv_std, mode = cache
        gamma = params[prefix + "gamma"]
        params.add_grad(prefix + "gamma", (dy * xhat).sum(axis=(0, 2, 3)))
        params.add_grad(prefix + "beta", dy.sum(axis=(0, 2, 3)))
        dxhat = dy * gamma[None, :, None, None]
        if mode != "train":
            return dxhat * inv_std[None, :, None, None]
        n, _, h, w = dy.shape
        m = n * h * w
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (dxhat - sum_dxhat / m - xhat * sum_dxhat_xhat / m) * inv_std[None, :, None, None]
        return dx


class Activation(Layer):
    kind = "activation"

    def __init__(self, fn: str):
        if fn not in ("elu", "relu", "sigmoid", "softmax"):
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn
        self.kind = f"activation-{fn}"

    def forward(self, x, params, prefix, mode, rng):
        if self.fn == "elu":
            y = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
            return y, (x, y)
        if self.fn == "relu":
            return np.maximum(x, 0.0), (x, None)
        if self.fn == "sigmoid":
            y = 1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))
            return y, (None, y)
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=-1, keepdims=True)
        return y, (None, y)

    def backward(self, dy, cache, params, prefix):
        x, y = cache
        if self.fn == "elu":
            return dy * np.where(x > 0, 1.0, y + 1.0)
        if self.fn == "relu":
            return dy * (x > 0)
        if self.fn == "sigmoid":
            return dy * y * (1.0 - y)
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, params, prefix, mode, rng):
        if mode != "train" or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype)
        scale = 1.0 / (1.0 - self.rate)
        return x * keep * scale, keep * scale

    def backward(self, dy, cache, params, prefix):
        if cache is None:
            return dy
        return dy * cache


class Reshape(Layer):
    """Per-sample reshape; target None flattens to a vector."""

    kind = "reshape"

    def __init__(self, target=None):
        self.target = tuple(target) if target is not None else None

    def out_shape(self, in_shape):
        size = int(np.prod(in_shape))
        target = self.target if self.target is not None else (size,)
        if int(np.prod(target)) != size:
            raise ShapeError(f"cannot reshape {in_shape} to {target}")
        return target

    def forward(self, x, params, prefix, mode, rng):
        n = x.shape[0]
        target = self.out_shape(x.shape[1:])
        return x.reshape((n,) + target), x.shape

    def backward(self, dy, cache, params, prefix):
        return dy.reshape(cache)


# ---------------------------------------------------------------------------
# sequential evaluation

@dataclass
class Tape:
    """Evaluation record of one forward pass, consumed by `backward`."""

    entries: list
    params: ParamStore
    mode: str


def layer_prefix(prefix: str, index: int, layer: Layer) -> str:
    return f"{prefix}{index:02d}_{layer.kind}."


def forward(network, params, x, mode="train", rng=None, prefix=""):
    """Evaluate a layer list; returns (output, tape).

    Deterministic given (params, input, rng seed, mode). Eval mode
    disables dropout and uses batchnorm running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    entries = []
    for i, layer in enumerate(network):
        lp = layer_prefix(prefix, i, layer)
        try:
            x, cache = layer.forward(x, params, lp, mode, rng)
        except ShapeError as e:
            raise ShapeError(f"layer {i} ({layer.kind}): {e}") from e
        entries.append((layer, lp, cache))
    return x, Tape(entries=entries, params=params, mode=mode)


def backward(tape: Tape, output_gradient: np.ndarray,
             need_input_grad: bool = True) -> np.ndarray | None:
    """Replay a tape in reverse; accumulates parameter gradients.

    Returns the gradient w.r.t. the network input, or None when
    `need_input_grad` is False (skips the outermost input-gradient
    computation, which is the most expensive contraction of a conv-first
    network and unused when the network starts the chain).
    """
    dx = output_gradient
    for i, (layer, lp, cache) in enumerate(reversed(tape.entries)):
        last = i == len(tape.entries) - 1
        if last and not need_input_grad and isinstance(layer, (Conv2d, TransposedConv2d)):
            layer.param_grads_only(dx, cache, tape.params, lp)
            return None
        dx = layer.backward(dx, cache, tape.params, lp)
    return dx if need_input_grad else None


def init_network_params(network, in_shape, params, prefix, rng, dtype=np.float32):
    """Create the parameters of a layer list; returns the output shape.

    Also validates the declared shape chain, so inconsistent stacks fail
    at construction rather than first use.
    """
    shape = tuple(in_shape)
    for i, layer in enumerate(network):
        lp = layer_prefix(prefix, i, layer)
        for name, pshape, init, trainable in layer.param_specs():
            params.add(lp + name, _init_array(init, pshape, rng, dtype), trainable=trainable)
        shape = layer.out_shape(shape)
    return shape


def network_out_shape(network, in_shape):
    shape = tuple(in_shape)
    for layer in network:
        shape = layer.out_shape(shape)
    return shape


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(params: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name in params.names(trainable_only=True):
        state.m[name] = np.zeros_like(params[name])
        state.v[name] = np.zeros_like(params[name])
    return state


def adam_step(params: ParamStore, grads, state: AdamState):
    """One bias-corrected Adam update, in place; returns (params, state).

    `grads` maps parameter name -> gradient array (a ParamStore's `.grads`
    dict works directly). Raises on NaN gradients, naming the parameter.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in params.names(trainable_only=True):
        g = grads[name]
        if np.isnan(g).any():
            raise FloatingPointError(f"NaN gradient for parameter {name} at step {t}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        arr = params[name]
        arr -= (state.lr * update).astype(arr.dtype, copy=False)
    return params, state


# ---------------------------------------------------------------------------
# finite-difference oracle

def finite_difference_grad(loss_fn, params: ParamStore, epsilon: float = 1e-5) -> dict:
    """Central-difference gradient estimate per trainable coordinate.

    loss_fn must be a deterministic function of the store (re-derive any
    rng inside it). Use float64 parameters.
    """
    grads = {}
    for name in params.names(trainable_only=True):
        arr = params[name]
        flat = arr.reshape(-1)
        g = np.zeros(arr.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = float(loss_fn(params))
            flat[i] = orig - epsilon
            lm = float(loss_fn(params))
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError(f"non-finite loss while probing {name}[{i}]")
            g[i] = (lp - lm) / (2.0 * epsilon)
        grads[name] = g.reshape(arr.shape)
    return grads


def max_relative_error(analytic: dict, reference: dict, floor: float = 1e-8) -> float:
    """max over parameters of |g_a - g_ref| / (|g_ref| + floor)."""
    worst = 0.0
    for name, ref in reference.items():
        a = analytic[name]
        err = np.abs(a - ref) / (np.abs(ref) + floor)
        worst = max(worst, float(err.max()))
    return worst


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params: ParamStore, adam: AdamState | None = None,
                    meta: dict | None = None) -> Path:
    """Versioned binary container; byte-exact save/load round-trip.

    Layout: magic, u32 version, u64 header length, JSON header, then raw
    little-endian payloads (parameters in store order, then Adam moments).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = params.names()
    le_dtypes = {n: params[n].dtype.newbyteorder("<") for n in names}
    header = {
        "format_version": CHECKPOINT_VERSION,
        "params": [
            {
                "name": n,
                "shape": list(params[n].shape),
                "dtype": le_dtypes[n].str,
                "trainable": params.is_trainable(n),
            }
            for n in names
        ],
        "adam": None,
        "meta": meta or {},
    }
    payloads = [np.ascontiguousarray(params[n]).astype(le_dtypes[n]).tobytes() for n in names]
    if adam is not None:
        tnames = params.names(trainable_only=True)
        header["adam"] = {
            "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
            "eps": adam.eps, "step": adam.step, "names": tnames,
        }
        for n in tnames:
            payloads.append(np.ascontiguousarray(adam.m[n]).astype(
                adam.m[n].dtype.newbyteorder("<")).tobytes())
            payloads.append(np.ascontiguousarray(adam.v[n]).astype(
                adam.v[n].dtype.newbyteorder("<")).tobytes())
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for chunk in payloads:
            f.write(chunk)
    return path


def load_checkpoint(path):
    """Returns (ParamStore, AdamState | None, meta dict)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    hlen = struct.unpack("<Q", raw[8:16])[0]
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    params = ParamStore()
    for spec in header["params"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype=dtype).reshape(spec["shape"])
        offset += nbytes
        params.add(spec["name"], arr.copy(), trainable=spec["trainable"])
    adam = None
    if header["adam"] is not None:
        h = header["adam"]
        adam = AdamState(lr=h["lr"], beta1=h["beta1"], beta2=h["beta2"],
                         eps=h["eps"], step=h["step"])
        for n in h["names"]:
            dtype = params[n].dtype
            nbytes = params[n].size * dtype.itemsize
            adam.m[n] = np.frombuffer(raw[offset:offset + nbytes], dtype=dtype).reshape(
                params[n].shape).copy()
            offset += nbytes
            adam.v[n] = np.frombuffer(raw[offset:offset + nbytes], dtype=dtype).reshape(
                params[n].shape).copy()
            offset += nbytes
    return params, adam, header.get("meta", {})
