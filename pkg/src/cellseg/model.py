"""UNet encoder-decoder with same padding, written directly against numpy.

Layout conventions
------------------
The public API takes and returns ``N x C x H x W`` arrays. Internally the
network runs channels-last (``N x H x W x C``) because every convolution
becomes a single matrix product in that layout.

Weights are stored as:

* 3x3 / 1x1 convolutions: ``(k, k, c_in, c_out)``, bias ``(c_out,)``.
  ``out[y, x, o] = b[o] + sum_{i,j,c} in_pad[y+i, x+j, c] * w[i, j, c, o]``
  with one pixel of zero padding for ``k = 3``.
* 2x2 stride-2 transposed convolutions: ``(2, 2, c_in, c_out)``.
  ``out[2y+i, 2x+j, o] = b[o] + sum_c in[y, x, c] * w[i, j, c, o]``.

Parameter names: ``enc{i}.conv{1,2}.{weight,bias}``, ``bottleneck.conv{1,2}.*``,
``up{i}.{weight,bias}``, ``dec{i}.conv{1,2}.*`` and ``head.*``, where ``i`` is
the resolution level (0 is full resolution). With ``batch_norm`` enabled each
3x3 conv also owns ``.bn.gamma`` / ``.bn.beta`` parameters and
``.bn.running_mean`` / ``.bn.running_var`` buffers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .rng import numpy_rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    out_channels: int = 1
    depth: int = 4
    base_filters: int = 64
    seed: int = 0
    batch_norm: bool = False

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "depth", "base_filters"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"UNetConfig.{name} must be a positive integer, got {value!r}")

    @property
    def size_multiple(self) -> int:
        return 2 ** self.depth

    def channels(self, level: int) -> int:
        """Output channels of encoder ``level``; ``level == depth`` is the bottleneck."""
        return self.base_filters * 2 ** level

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "UNetConfig":
        return cls(**data)


def layer_shapes(config: UNetConfig) -> dict[str, tuple[int, ...]]:
    """Ordered mapping from parameter name to shape for ``config``."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(prefix: str, k: int, cin: int, cout: int, bn: bool = False):
        shapes[f"{prefix}.weight"] = (k, k, cin, cout)
        shapes[f"{prefix}.bias"] = (cout,)
        if bn:
            shapes[f"{prefix}.bn.gamma"] = (cout,)
            shapes[f"{prefix}.bn.beta"] = (cout,)

    bn = config.batch_norm
    cin = config.in_channels
    for level in range(config.depth):
        c = config.channels(level)
        conv(f"enc{level}.conv1", 3, cin, c, bn)
        conv(f"enc{level}.conv2", 3, c, c, bn)
        cin = c
    c = config.channels(config.depth)
    conv("bottleneck.conv1", 3, cin, c, bn)
    conv("bottleneck.conv2", 3, c, c, bn)
    for level in reversed(range(config.depth)):
        c = config.channels(level)
        conv(f"up{level}", 2, 2 * c, c)
        conv(f"dec{level}.conv1", 3, 2 * c, c, bn)
        conv(f"dec{level}.conv2", 3, c, c, bn)
    conv("head", 1, config.base_filters, config.out_channels)
    return shapes


def parameter_count(config: UNetConfig) -> int:
    """Closed form: sum over layers of ``k*k*c_in*c_out + c_out`` (+ ``2*c_out`` per BN)."""
    f, d = config.base_filters, config.depth
    bn = 2 if config.batch_norm else 0

    def conv(k, cin, cout, has_bn=False):
        return k * k * cin * cout + cout + (bn * cout if has_bn else 0)

    total = 0
    cin = config.in_channels
    for level in range(d + 1):
        c = f * 2 ** level
        total += conv(3, cin, c, True) + conv(3, c, c, True)
        cin = c
    for level in range(d):
        c = f * 2 ** level
        total += conv(2, 2 * c, c) + conv(3, 2 * c, c, True) + conv(3, c, c, True)
    return total + conv(1, f, config.out_channels)


# ---------------------------------------------------------------- layers


def conv_forward(x, w, b):
    n, h, wd, c = x.shape
    k = w.shape[0]
    if k == 1:
        cols = x.reshape(-1, c)
    else:
        p = k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))  # n, h, w, c, k, k
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, k * k * c)
    out = cols @ w.reshape(-1, w.shape[-1])
    out += b
    return out.reshape(n, h, wd, -1), cols


def conv_backward(dout, cols, w, x_shape):
    n, h, wd, c = x_shape
    k, cout = w.shape[0], w.shape[-1]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = d2 @ w.reshape(-1, cout).T
    if k == 1:
        return dcols.reshape(x_shape), dw, db
    p = k // 2
    dcols = dcols.reshape(n, h, wd, k, k, c)
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + wd] += dcols[:, :, :, i, j]
    return dxp[:, p:p + h, p:p + wd], dw, db


def maxpool_forward(x):
    n, h, w, c = x.shape
    v = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = v.argmax(axis=-1)[..., None]
    return np.take_along_axis(v, idx, axis=-1)[..., 0], idx


def maxpool_backward(dout, idx, x_shape):
    # gradient goes to the first maximum of each window only
    n, h, w, c = x_shape
    dv = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(dv, idx, dout[..., None], axis=-1)
    return dv.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)


def upconv_forward(x, w, b):
    n, h, wd, c = x.shape
    cout = w.shape[-1]
    wmat = w.transpose(2, 0, 1, 3).reshape(c, 4 * cout)
    y = (x.reshape(-1, c) @ wmat).reshape(n, h, wd, 2, 2, cout)
    y = y.transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * h, 2 * wd, cout)
    return y + b


def upconv_backward(dout, x, w):
    n, h, wd, c = x.shape
    cout = w.shape[-1]
    wmat = w.transpose(2, 0, 1, 3).reshape(c, 4 * cout)
    d = dout.reshape(n, h, 2, wd, 2, cout).transpose(0, 1, 3, 2, 4, 5).reshape(-1, 4 * cout)
    dw = (x.reshape(-1, c).T @ d).reshape(c, 2, 2, cout).transpose(1, 2, 0, 3)
    db = dout.sum(axis=(0, 1, 2))
    dx = (d @ wmat.T).reshape(n, h, wd, c)
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training):
    if training:
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        m = x.size // x.shape[-1]
        unbiased = var * m / max(m - 1, 1)
        running_mean *= 1 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1 - BN_MOMENTUM
        running_var += BN_MOMENTUM * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    return xhat * gamma + beta, (xhat, inv_std, training)


def batchnorm_backward(dout, cache, gamma):
    xhat, inv_std, training = cache
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    if not training:
        return dxhat * inv_std, dgamma, dbeta
    m = dout.size // dout.shape[-1]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
    return dx, dgamma, dbeta


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------- model


class UNetModel:
    """Materialized UNet: a config plus named weight arrays.

    ``forward`` never mutates the model (except BN running statistics when
    called with ``training=True``), so inference is safe to share.
    """

    def __init__(self, config: UNetConfig, params: dict[str, np.ndarray],
                 buffers: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params
        self.buffers = buffers if buffers is not None else {}

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self) -> "UNetModel":
        return UNetModel(self.config, {k: v.copy() for k, v in self.params.items()},
                         {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> "UNetModel":
        return UNetModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()},
                         {k: v.astype(dtype) for k, v in self.buffers.items()})

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # -- forward / backward

    def _check_input(self, x):
        if x.ndim != 4:
            raise ShapeError(f"expected an N x C x H x W batch, got shape {x.shape}")
        n, c, h, w = x.shape
        if c != self.config.in_channels:
            raise ShapeError(f"model expects {self.config.in_channels} input channels, got {c}")
        m = self.config.size_multiple
        if h % m or w % m:
            raise ShapeError(f"input height and width must be multiples of {m} for depth "
                             f"{self.config.depth}, got {h}x{w}")

    def _block(self, prefix, x, training, tape):
        for conv in ("conv1", "conv2"):
            name = f"{prefix}.{conv}"
            z, cols = conv_forward(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])
            bn_cache = None
            if self.config.batch_norm:
                z, bn_cache = batchnorm_forward(
                    z, self.params[f"{name}.bn.gamma"], self.params[f"{name}.bn.beta"],
                    self.buffers[f"{name}.bn.running_mean"], self.buffers[f"{name}.bn.running_var"],
                    training)
            a = np.maximum(z, 0)
            if tape is not None:
                tape.append(("conv", name, cols, x.shape, bn_cache, a > 0))
            x = a
        return x

    def logits(self, x, *, training: bool = False, zero_skips: bool = False, tape: list | None = None):
        """Pre-sigmoid outputs, channels-last. Appends backward records to ``tape`` if given."""
        self._check_input(x)
        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=self.dtype)
        skips = []
        for level in range(self.config.depth):
            h = self._block(f"enc{level}", h, training, tape)
            skips.append(h)
            pooled, idx = maxpool_forward(h)
            if tape is not None:
                tape.append(("pool", idx, h.shape))
            h = pooled
        h = self._block("bottleneck", h, training, tape)
        for level in reversed(range(self.config.depth)):
            name = f"up{level}"
            up = upconv_forward(h, self.params[f"{name}.weight"], self.params[f"{name}.bias"])
            skip = np.zeros_like(skips[level]) if zero_skips else skips[level]
            if tape is not None:
                tape.append(("up", name, h, up.shape[-1], zero_skips))
            h = np.concatenate([up, skip], axis=-1)
            h = self._block(f"dec{level}", h, training, tape)
        out, cols = conv_forward(h, self.params["head.weight"], self.params["head.bias"])
        if tape is not None:
            tape.append(("head", cols, h.shape))
        return out

    def forward(self, x, *, training: bool = False, zero_skips: bool = False):
        """Probabilities ``N x C_out x H x W`` for an ``N x C_in x H x W`` batch."""
        z = self.logits(x, training=training, zero_skips=zero_skips)
        return sigmoid(z).transpose(0, 3, 1, 2)

    def backward(self, tape: list, dlogits) -> dict[str, np.ndarray]:
        """Gradients of every parameter given d(loss)/d(logits) in channels-last layout."""
        grads: dict[str, np.ndarray] = {}
        skip_grads: list = []
        _, cols, shape = tape[-1]
        dh, grads["head.weight"], grads["head.bias"] = conv_backward(
            dlogits, cols, self.params["head.weight"], shape)
        for record in reversed(tape[:-1]):
            kind = record[0]
            if kind == "conv":
                _, name, cols, x_shape, bn_cache, active = record
                dz = dh * active
                if bn_cache is not None:
                    dz, grads[f"{name}.bn.gamma"], grads[f"{name}.bn.beta"] = batchnorm_backward(
                        dz, bn_cache, self.params[f"{name}.bn.gamma"])
                dh, grads[f"{name}.weight"], grads[f"{name}.bias"] = conv_backward(
                    dz, cols, self.params[f"{name}.weight"], x_shape)
            elif kind == "up":
                _, name, h_in, c_up, zero_skips = record
                dup, dskip = dh[..., :c_up], dh[..., c_up:]
                skip_grads.append(None if zero_skips else dskip)
                dh, grads[f"{name}.weight"], grads[f"{name}.bias"] = upconv_backward(
                    np.ascontiguousarray(dup), h_in, self.params[f"{name}.weight"])
            elif kind == "pool":
                _, idx, x_shape = record
                dh = maxpool_backward(dh, idx, x_shape)
                # decoder levels were unwound shallow-to-deep, so the deepest skip is last
                dskip = skip_grads.pop()
                if dskip is not None:
                    dh = dh + dskip
        return grads


def build_unet(config: UNetConfig, dtype=np.float32) -> UNetModel:
    """Fresh model with fan-in scaled uniform weights (He uniform, bound sqrt(6/fan_in)).

    Fan-in is ``k*k*c_in`` for convolutions and ``c_in`` for the 2x2 stride-2
    transposed convolutions, whose output pixels each see a single input
    pixel. Each tensor draws from its own PCG64 stream keyed by its position
    in :func:`layer_shapes`, biases and BN shifts start at zero, BN scales at one.
    """
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for index, (name, shape) in enumerate(layer_shapes(config).items()):
        if name.endswith(".weight"):
            k, _, cin, _ = shape
            fan_in = cin if name.startswith("up") else k * k * cin
            bound = np.sqrt(6.0 / fan_in)
            params[name] = numpy_rng(config.seed, index).uniform(-bound, bound, size=shape).astype(dtype)
        elif name.endswith(".bn.gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
        if name.endswith(".bn.gamma"):
            prefix = name[: -len("gamma")]
            buffers[prefix + "running_mean"] = np.zeros(shape, dtype=dtype)
            buffers[prefix + "running_var"] = np.ones(shape, dtype=dtype)
    return UNetModel(config, params, buffers)


def forward(model: UNetModel, batch, **kwargs):
    return model.forward(batch, **kwargs)


def zero_weight_model(config: UNetConfig, dtype=np.float32) -> UNetModel:
    """Model with every parameter zeroed; its outputs are exactly sigmoid(0) = 0.5."""
    model = build_unet(config, dtype)
    for v in model.params.values():
        v[...] = 0
    return model

