"""Layer forward/backward passes on dense float64 tensors.

Every op is a pure function: forward(x, params) -> out and
backward(x, params, d_out) -> exact analytic gradients. Inputs are
(C, H, W) or (B, C, H, W); single images are promoted to a batch of one.
Composite layers (block, rdn, cbam) also expose a *_run variant returning
(out, cache) so training loops can avoid recomputing activations; backward
accepts that cache but never requires it.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import NumericError, ShapeError
from . import backend


def _as4d(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected 3D or 4D tensor, got shape {x.shape}")
    return x, False


def _require_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NumericError(where=where,
                           detail="non-finite values in activation")


@dataclass
class ConvParams:
    """Conv layer parameters. weights: (out_ch, in_ch, k_h, k_w)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    pad: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4D, got "
                             f"{self.weights.shape}")
        o, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel dims must be odd, got {kh}x{kw}")
        if self.bias.shape != (o,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({o},)")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if not (np.all(np.isfinite(self.weights))
                and np.all(np.isfinite(self.bias))):
            raise NumericError(where="ConvParams",
                               detail="non-finite parameter entries")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]


@dataclass
class LayerGrads:
    """Gradients of one conv layer: parameter grads plus the input grad."""

    d_weights: np.ndarray
    d_bias: np.ndarray
    d_input: np.ndarray


def init_conv(rng, out_ch, in_ch, k=3, stride=1, pad=None, bias_fill=0.0):
    """Centered-uniform fan-in init: bound = sqrt(6 / (in_ch * k * k))."""
    bound = np.sqrt(6.0 / (in_ch * k * k))
    w = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k))
    b = np.full(out_ch, float(bias_fill))
    if pad is None:
        pad = (k - 1) // 2
    return ConvParams(weights=w, bias=b, stride=stride, pad=pad)


def conv2d_forward(x, p):
    x4, squeeze = _as4d(x)
    o, c_in, kh, kw = p.weights.shape
    if x4.shape[1] != c_in:
        raise ShapeError(f"input has {x4.shape[1]} channels, conv expects "
                         f"{c_in}")
    if x4.shape[2] + 2 * p.pad < kh or x4.shape[3] + 2 * p.pad < kw:
        raise ShapeError(f"padded input {x4.shape[2:]} smaller than kernel "
                         f"{kh}x{kw}")
    k = backend.get_kernel()
    out = k.conv2d_forward_kernel(np.ascontiguousarray(x4),
                                  np.ascontiguousarray(p.weights),
                                  p.stride, p.pad)
    out += p.bias[None, :, None, None]
    _require_finite(out, "conv2d_forward")
    return out[0] if squeeze else out


def conv2d_backward(x, p, d_out):
    x4, squeeze = _as4d(x)
    d4, _ = _as4d(d_out)
    o, c_in, kh, kw = p.weights.shape
    ho = (x4.shape[2] + 2 * p.pad - kh) // p.stride + 1
    wo = (x4.shape[3] + 2 * p.pad - kw) // p.stride + 1
    if d4.shape != (x4.shape[0], o, ho, wo):
        raise ShapeError(f"d_out shape {d4.shape} does not match forward "
                         f"output ({x4.shape[0]}, {o}, {ho}, {wo})")
    k = backend.get_kernel()
    dx, dw = k.conv2d_backward_kernel(np.ascontiguousarray(x4),
                                      np.ascontiguousarray(p.weights),
                                      np.ascontiguousarray(d4),
                                      p.stride, p.pad)
    db = d4.sum(axis=(0, 2, 3))
    return LayerGrads(d_weights=dw, d_bias=db,
                      d_input=dx[0] if squeeze else dx)


def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, d_out):
    # subgradient at exactly 0 is taken as 0
    return np.asarray(d_out) * (np.asarray(x) > 0.0)


def softmax_forward(x, axis):
    """Numerically-stabilized softmax along `axis` (int or tuple of ints)."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(x, axis, d_out):
    s = softmax_forward(x, axis)
    inner = np.sum(d_out * s, axis=axis, keepdims=True)
    return s * (d_out - inner)


@dataclass
class NormParams:
    """Per-channel affine normalization over batch statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ShapeError("gamma/beta must be matching 1D vectors")


def init_norm(channels):
    return NormParams(gamma=np.ones(channels), beta=np.zeros(channels))


def _norm_stats(x4, p):
    mu = x4.mean(axis=(0, 2, 3), keepdims=True)
    var = x4.var(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x4 - mu) * inv_std
    return xhat, inv_std


def norm_forward(x, p):
    x4, squeeze = _as4d(x)
    if x4.shape[1] != p.gamma.shape[0]:
        raise ShapeError(f"norm over {p.gamma.shape[0]} channels got input "
                         f"with {x4.shape[1]}")
    xhat, _ = _norm_stats(x4, p)
    out = p.gamma[None, :, None, None] * xhat + p.beta[None, :, None, None]
    _require_finite(out, "norm_forward")
    return out[0] if squeeze else out


def norm_backward(x, p, d_out):
    """Returns (d_input, grads) with grads a NormParams holding d_gamma/d_beta."""
    x4, squeeze = _as4d(x)
    d4, _ = _as4d(d_out)
    xhat, inv_std = _norm_stats(x4, p)
    d_gamma = np.sum(d4 * xhat, axis=(0, 2, 3))
    d_beta = np.sum(d4, axis=(0, 2, 3))
    n = x4.shape[0] * x4.shape[2] * x4.shape[3]
    dxhat = d4 * p.gamma[None, :, None, None]
    s1 = np.sum(dxhat, axis=(0, 2, 3), keepdims=True)
    s2 = np.sum(dxhat * xhat, axis=(0, 2, 3), keepdims=True)
    dx = inv_std * (dxhat - s1 / n - xhat * s2 / n)
    return (dx[0] if squeeze else dx,
            NormParams(gamma=d_gamma, beta=d_beta, eps=p.eps))


def residual_block_forward(x, p):
    """Basic block g(x) = ReLU(Conv(x))."""
    return relu_forward(conv2d_forward(x, p))


def residual_block_backward(x, p, d_out, pre=None):
    if pre is None:
        pre = conv2d_forward(x, p)
    return conv2d_backward(x, p, relu_backward(pre, d_out))


@dataclass
class BlockParams:
    """Conv -> (optional) Norm -> ReLU block used by the denoisers."""

    conv: ConvParams
    norm: Optional[NormParams] = None


def block_run(x, bp):
    z1 = conv2d_forward(x, bp.conv)
    z2 = norm_forward(z1, bp.norm) if bp.norm is not None else z1
    return relu_forward(z2), (z1, z2)


def block_forward(x, bp):
    return block_run(x, bp)[0]


def block_backward(x, bp, d_out, cache=None):
    """Returns (d_input, BlockParams-shaped grads)."""
    if cache is None:
        _, cache = block_run(x, bp)
    z1, z2 = cache
    d_z2 = relu_backward(z2, d_out)
    if bp.norm is not None:
        d_z1, d_norm = norm_backward(z1, bp.norm, d_z2)
    else:
        d_z1, d_norm = d_z2, None
    lg = conv2d_backward(x, bp.conv, d_z1)
    g_conv = ConvParams(weights=lg.d_weights, bias=lg.d_bias,
                        stride=bp.conv.stride, pad=bp.conv.pad)
    return lg.d_input, BlockParams(conv=g_conv, norm=d_norm)


@dataclass
class RdnParams:
    """Residual dense block: densely connected convs plus a 1x1 fusion.

    Layer n maps (in_ch + n*growth) channels to `growth`; the fusion conv
    maps the full concatenation back to in_ch. Output adds the block input.
    """

    layers: list = field(default_factory=list)   # ConvParams
    fusion: ConvParams = None


def init_rdn(rng, channels, b_layers, growth=None, k=3):
    growth = channels if growth is None else growth
    layers = [init_conv(rng, growth, channels + n * growth, k=k)
              for n in range(b_layers)]
    fusion = init_conv(rng, channels, channels + b_layers * growth, k=1)
    return RdnParams(layers=layers, fusion=fusion)


def rdn_run(x, p):
    x4, squeeze = _as4d(x)
    feats = [x4]
    pres = []
    for conv in p.layers:
        cat = np.concatenate(feats, axis=1)
        pre = conv2d_forward(cat, conv)
        pres.append(pre)
        feats.append(relu_forward(pre))
    cat_all = np.concatenate(feats, axis=1)
    fused = conv2d_forward(cat_all, p.fusion)
    if fused.shape != x4.shape:
        raise ShapeError(f"fusion output {fused.shape} does not match block "
                         f"input {x4.shape}")
    out = fused + x4
    return (out[0] if squeeze else out), (feats, pres, squeeze)


def rdn_forward(x, p):
    return rdn_run(x, p)[0]


def rdn_backward(x, p, d_out, cache=None):
    """Returns (d_input, RdnParams-shaped grads)."""
    if cache is None:
        _, cache = rdn_run(x, p)
    feats, pres, squeeze = cache
    d4, _ = _as4d(d_out)
    widths = [f.shape[1] for f in feats]
    offsets = np.cumsum([0] + widths)

    d_feats = [np.zeros_like(f) for f in feats]
    cat_all = np.concatenate(feats, axis=1)
    lg = conv2d_backward(cat_all, p.fusion, d4)
    g_fusion = ConvParams(weights=lg.d_weights, bias=lg.d_bias,
                          stride=p.fusion.stride, pad=p.fusion.pad)
    for i in range(len(feats)):
        d_feats[i] += lg.d_input[:, offsets[i]:offsets[i + 1]]

    g_layers = [None] * len(p.layers)
    for n in range(len(p.layers) - 1, -1, -1):
        d_pre = relu_backward(pres[n], d_feats[n + 1])
        cat = np.concatenate(feats[:n + 1], axis=1)
        lg = conv2d_backward(cat, p.layers[n], d_pre)
        g_layers[n] = ConvParams(weights=lg.d_weights, bias=lg.d_bias,
                                 stride=p.layers[n].stride,
                                 pad=p.layers[n].pad)
        for i in range(n + 1):
            d_feats[i] += lg.d_input[:, offsets[i]:offsets[i + 1]]

    d_x = d_feats[0] + d4  # local residual path
    return (d_x[0] if squeeze else d_x,
            RdnParams(layers=g_layers, fusion=g_fusion))


@dataclass
class CbamParams:
    """Attention stage realized literally as Conv -> ReLU -> Conv."""

    conv1: ConvParams
    conv2: ConvParams


def init_cbam(rng, channels, k=3):
    return CbamParams(conv1=init_conv(rng, channels, channels, k=k),
                      conv2=init_conv(rng, channels, channels, k=k))


def cbam_run(x, p):
    z1 = conv2d_forward(x, p.conv1)
    a1 = relu_forward(z1)
    return conv2d_forward(a1, p.conv2), (z1, a1)


def cbam_forward(x, p):
    return cbam_run(x, p)[0]


def cbam_backward(x, p, d_out, cache=None):
    """Returns (d_input, CbamParams-shaped grads)."""
    if cache is None:
        _, cache = cbam_run(x, p)
    z1, a1 = cache
    lg2 = conv2d_backward(a1, p.conv2, d_out)
    d_z1 = relu_backward(z1, lg2.d_input)
    lg1 = conv2d_backward(x, p.conv1, d_z1)
    g = CbamParams(
        conv1=ConvParams(weights=lg1.d_weights, bias=lg1.d_bias,
                         stride=p.conv1.stride, pad=p.conv1.pad),
        conv2=ConvParams(weights=lg2.d_weights, bias=lg2.d_bias,
                         stride=p.conv2.stride, pad=p.conv2.pad))
    return lg1.d_input, g
