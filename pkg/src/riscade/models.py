"""The three channel estimators assembled from nn layers.

All share one convention: the network input is the packed real observation
Y (N_b x 2N_u, one channel) and the estimate stays in that packed domain.
CBDNet predicts the noise image H_m and subtracts it (est = y - H_m); MRDN
carries a global residual and adds its correction (est = y + out). The
public *_forward functions take a single image or a (B, H, W) batch; the
*_run/*_backward pairs are the batched training path and exchange
(B, 1, H, W) tensors plus opaque caches.
"""
from dataclasses import dataclass, field

import numpy as np

from . import rngs
from .channel import unpack_real
from .errors import ConfigError, NumericError, ShapeError
from .nn import (BlockParams, CbamParams, ConvParams, block_backward,
                 block_run, cbam_backward, cbam_run, conv2d_backward,
                 conv2d_forward, init_cbam, init_conv, init_norm, init_rdn,
                 norm_forward, rdn_backward, rdn_run, relu_backward,
                 relu_forward, softmax_backward, softmax_forward)

SIGMA_FLOOR = 1e-8


@dataclass
class CBDNetSpec:
    b_c: int = 5          # conv+relu layers in the noise estimator
    k_s: int = 1          # softmax stages in the noise estimator head
    b_blocks: int = 12    # conv-norm-relu blocks in the denoiser
    features: int = 96
    use_norm: bool = True

    def __post_init__(self):
        if min(self.b_c, self.k_s, self.b_blocks, self.features) < 1:
            raise ConfigError("all CBDNet layer counts must be >= 1")


@dataclass
class MRDNSpec:
    n_r: int = 6          # chained residual dense blocks
    b_layers: int = 4     # dense conv layers inside each block
    features: int = 80

    def __post_init__(self):
        if min(self.n_r, self.b_layers, self.features) < 1:
            raise ConfigError("all MRDN layer counts must be >= 1")


@dataclass
class GANSpec:
    generator: CBDNetSpec = field(default_factory=CBDNetSpec)
    disc_layers: int = 4
    disc_features: int = 32

    def __post_init__(self):
        if min(self.disc_layers, self.disc_features) < 1:
            raise ConfigError("discriminator layer counts must be >= 1")


@dataclass
class CBDNetParams:
    est_convs: list       # b_c ConvParams, 1 -> f then f -> f
    score_convs: list     # k_s ConvParams, f -> 1 then 1 -> 1
    value_conv: ConvParams
    blocks: list          # b_blocks BlockParams, first conv 2 -> f
    out_conv: ConvParams  # f -> 1


@dataclass
class MrdnParams:
    in_conv: ConvParams   # 1 -> f
    cbam: CbamParams
    rdns: list            # n_r RdnParams
    out_conv: ConvParams  # f -> 1


@dataclass
class DiscParams:
    convs: list           # stride-2 ConvParams, 1 -> df then df -> df
    head_w: np.ndarray    # (df,)
    head_b: np.ndarray    # (1,)


@dataclass
class GanParams:
    gen: CBDNetParams
    disc: DiscParams


def init_cbdnet(spec, seed):
    rng = rngs.substream(seed, rngs.INIT, 0)
    f = spec.features
    est = [init_conv(rng, f, 1 if i == 0 else f) for i in range(spec.b_c)]
    score = [init_conv(rng, 1, f if j == 0 else 1) for j in range(spec.k_s)]
    # bias starts at 1 so sigma_hat opens near unit scale instead of ~0,
    # keeping the 1/sigma reconstruction weight bounded at step 1
    value = init_conv(rng, 1, f, bias_fill=1.0)
    blocks = []
    for i in range(spec.b_blocks):
        conv = init_conv(rng, f, 2 if i == 0 else f)
        norm = init_norm(f) if spec.use_norm else None
        blocks.append(BlockParams(conv=conv, norm=norm))
    out = init_conv(rng, 1, f)
    return CBDNetParams(est_convs=est, score_convs=score, value_conv=value,
                        blocks=blocks, out_conv=out)


def init_mrdn(spec, seed):
    rng = rngs.substream(seed, rngs.INIT, 1)
    f = spec.features
    return MrdnParams(
        in_conv=init_conv(rng, f, 1),
        cbam=init_cbam(rng, f),
        rdns=[init_rdn(rng, f, spec.b_layers) for _ in range(spec.n_r)],
        out_conv=init_conv(rng, 1, f))


def init_disc(spec, seed):
    rng = rngs.substream(seed, rngs.INIT, 2)
    df = spec.disc_features
    convs = [init_conv(rng, df, 1 if i == 0 else df, stride=2)
             for i in range(spec.disc_layers)]
    bound = np.sqrt(6.0 / df)
    return DiscParams(convs=convs,
                      head_w=rng.uniform(-bound, bound, size=df),
                      head_b=np.zeros(1))


def init_gan(spec, seed):
    return GanParams(gen=init_cbdnet(spec.generator, seed),
                     disc=init_disc(spec, seed))


def _as_batch_images(y):
    """(H, W) or (B, H, W) -> ((B, 1, H, W), was_single)."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        return y[None, None], True
    if y.ndim == 3:
        return y[:, None], False
    raise ShapeError(f"expected (H, W) or (B, H, W) image(s), got {y.shape}")


def _stage(fn, where, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except NumericError as exc:
        raise NumericError(where=where, detail=str(exc)) from exc


# ---------------------------------------------------------------- CBDNet

def cbdnet_run(spec, params, y4):
    """Batched forward. Returns (sigma (B,), est (B,1,H,W), cache)."""
    feats = y4
    est_cache = []
    for i, conv in enumerate(params.est_convs):
        pre = _stage(conv2d_forward, f"cbdnet est_conv {i}", feats, conv)
        est_cache.append((feats, pre))
        feats = relu_forward(pre)

    score_cache = []
    s_in = feats
    for j, conv in enumerate(params.score_convs):
        pre = _stage(conv2d_forward, f"cbdnet score_conv {j}", s_in, conv)
        w = softmax_forward(pre, axis=(2, 3))
        score_cache.append((s_in, pre))
        s_in = w
    w = s_in
    v = _stage(conv2d_forward, "cbdnet value_conv", feats, params.value_conv)
    u = np.sum(w * v, axis=(1, 2, 3))
    sigma = np.abs(u) + SIGMA_FLOOR

    m = np.broadcast_to(sigma[:, None, None, None], y4.shape)
    stack = np.concatenate([y4, m], axis=1)
    h = stack
    block_cache = []
    for i, bp in enumerate(params.blocks):
        out, bc = _stage(block_run, f"cbdnet block {i}", h, bp)
        block_cache.append((h, bc))
        h = out
    hm = _stage(conv2d_forward, "cbdnet out_conv", h, params.out_conv)
    est = y4 - hm
    cache = (est_cache, score_cache, feats, w, v, u, block_cache, h)
    return sigma, est, cache


def cbdnet_backward(spec, params, y4, cache, d_est, d_sigma=None):
    """Gradients for all CBDNet parameters.

    d_est is dJ/d(est); d_sigma is the direct dJ/d(sigma_hat) from the loss
    (the indirect path through the noise map M is handled here). Returns a
    CBDNetParams-shaped gradient tree.
    """
    est_cache, score_cache, feats, w, v, u, block_cache, h_last = cache
    d_hm = -np.asarray(d_est)

    lg_out = conv2d_backward(h_last, params.out_conv, d_hm)
    g_out = ConvParams(lg_out.d_weights, lg_out.d_bias,
                       params.out_conv.stride, params.out_conv.pad)
    d_h = lg_out.d_input
    g_blocks = [None] * len(params.blocks)
    for i in range(len(params.blocks) - 1, -1, -1):
        x_in, bc = block_cache[i]
        d_h, g_blocks[i] = block_backward(x_in, params.blocks[i], d_h,
                                          cache=bc)
    d_m = d_h[:, 1:2]

    d_sig = d_m.sum(axis=(1, 2, 3))
    if d_sigma is not None:
        d_sig = d_sig + d_sigma
    du = d_sig * np.sign(u)
    d_w = du[:, None, None, None] * v
    d_v = du[:, None, None, None] * w

    lg_v = conv2d_backward(feats, params.value_conv, d_v)
    g_value = ConvParams(lg_v.d_weights, lg_v.d_bias,
                         params.value_conv.stride, params.value_conv.pad)
    d_feats = lg_v.d_input

    g_score = [None] * len(params.score_convs)
    d_cur = d_w
    for j in range(len(params.score_convs) - 1, -1, -1):
        s_in, pre = score_cache[j]
        d_pre = softmax_backward(pre, (2, 3), d_cur)
        lg = conv2d_backward(s_in, params.score_convs[j], d_pre)
        g_score[j] = ConvParams(lg.d_weights, lg.d_bias,
                                params.score_convs[j].stride,
                                params.score_convs[j].pad)
        if j == 0:
            d_feats = d_feats + lg.d_input
        else:
            d_cur = lg.d_input

    g_est = [None] * len(params.est_convs)
    d_f = d_feats
    for i in range(len(params.est_convs) - 1, -1, -1):
        x_in, pre = est_cache[i]
        d_pre = relu_backward(pre, d_f)
        lg = conv2d_backward(x_in, params.est_convs[i], d_pre)
        g_est[i] = ConvParams(lg.d_weights, lg.d_bias,
                              params.est_convs[i].stride,
                              params.est_convs[i].pad)
        d_f = lg.d_input

    return CBDNetParams(est_convs=g_est, score_convs=g_score,
                        value_conv=g_value, blocks=g_blocks, out_conv=g_out)


def cbdnet_forward(spec, params, y):
    """Single-image (or batch) API: returns (sigma_hat, h_hat, noise_map)."""
    y4, single = _as_batch_images(y)
    sigma, est, _ = cbdnet_run(spec, params, y4)
    m = sigma[:, None, None] * np.ones_like(y4[:, 0])
    h_hat = unpack_real(est[:, 0])
    if single:
        return float(sigma[0]), h_hat[0], m[0]
    return sigma, h_hat, m


# ----------------------------------------------------------------- MRDN

def mrdn_run(spec, params, y4):
    """Batched forward. Returns (est (B,1,H,W), cache)."""
    z0 = _stage(conv2d_forward, "mrdn in_conv", y4, params.in_conv)
    a, cbam_cache = _stage(cbam_run, "mrdn cbam", z0, params.cbam)
    h = a
    rdn_caches = []
    for i, rp in enumerate(params.rdns):
        out, rc = _stage(rdn_run, f"mrdn rdn {i}", h, rp)
        rdn_caches.append((h, rc))
        h = out
    out = _stage(conv2d_forward, "mrdn out_conv", h, params.out_conv)
    est = y4 + out
    return est, (z0, cbam_cache, rdn_caches, h)


def mrdn_backward(spec, params, y4, cache, d_est):
    z0, cbam_cache, rdn_caches, h_last = cache
    lg_out = conv2d_backward(h_last, params.out_conv, np.asarray(d_est))
    g_out = ConvParams(lg_out.d_weights, lg_out.d_bias,
                       params.out_conv.stride, params.out_conv.pad)
    d_h = lg_out.d_input
    g_rdns = [None] * len(params.rdns)
    for i in range(len(params.rdns) - 1, -1, -1):
        x_in, rc = rdn_caches[i]
        d_h, g_rdns[i] = rdn_backward(x_in, params.rdns[i], d_h, cache=rc)
    d_z0, g_cbam = cbam_backward(z0, params.cbam, d_h, cache=cbam_cache)
    lg_in = conv2d_backward(y4, params.in_conv, d_z0)
    g_in = ConvParams(lg_in.d_weights, lg_in.d_bias,
                      params.in_conv.stride, params.in_conv.pad)
    return MrdnParams(in_conv=g_in, cbam=g_cbam, rdns=g_rdns, out_conv=g_out)


def mrdn_forward(spec, params, y):
    y4, single = _as_batch_images(y)
    est, _ = mrdn_run(spec, params, y4)
    h_hat = unpack_real(est[:, 0])
    return h_hat[0] if single else h_hat


# -------------------------------------------------------- discriminator

def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def disc_run(spec, params, x4):
    """Batched forward. Returns (prob (B,), cache)."""
    h = x4
    conv_cache = []
    for i, conv in enumerate(params.convs):
        pre = _stage(conv2d_forward, f"disc conv {i}", h, conv)
        conv_cache.append((h, pre))
        h = relu_forward(pre)
    pooled = h.mean(axis=(2, 3))                      # (B, df)
    logit = pooled @ params.head_w + params.head_b[0]  # (B,)
    prob = _sigmoid(logit)
    return prob, (conv_cache, h, pooled, prob)


def disc_backward(spec, params, x4, cache, d_prob):
    """Returns (DiscParams-shaped grads, d_input)."""
    conv_cache, h_last, pooled, prob = cache
    d_logit = np.asarray(d_prob) * prob * (1.0 - prob)
    d_head_w = pooled.T @ d_logit
    d_head_b = np.array([d_logit.sum()])
    d_pooled = d_logit[:, None] * params.head_w[None, :]
    hw = h_last.shape[2] * h_last.shape[3]
    d_h = np.broadcast_to(d_pooled[:, :, None, None] / hw,
                          h_last.shape).copy()
    g_convs = [None] * len(params.convs)
    for i in range(len(params.convs) - 1, -1, -1):
        x_in, pre = conv_cache[i]
        d_pre = relu_backward(pre, d_h)
        lg = conv2d_backward(x_in, params.convs[i], d_pre)
        g_convs[i] = ConvParams(lg.d_weights, lg.d_bias,
                                params.convs[i].stride, params.convs[i].pad)
        d_h = lg.d_input
    return DiscParams(convs=g_convs, head_w=d_head_w, head_b=d_head_b), d_h


def discriminator_forward(spec, params, h_image):
    y4, single = _as_batch_images(h_image)
    prob, _ = disc_run(spec, params, y4)
    return float(prob[0]) if single else prob


# ------------------------------------------------------------ packaging

MODEL_KINDS = ("cbdnet", "gan", "mrdn")


@dataclass
class Model:
    kind: str
    spec: object
    params: object
    seed: int


def default_spec(kind):
    if kind == "cbdnet":
        return CBDNetSpec()
    if kind == "gan":
        return GANSpec()
    if kind == "mrdn":
        return MRDNSpec()
    raise ConfigError(f"unknown model kind {kind!r} (have {MODEL_KINDS})")


def build_model(kind, spec=None, seed=0):
    if spec is None:
        spec = default_spec(kind)
    if kind == "cbdnet":
        params = init_cbdnet(spec, seed)
    elif kind == "gan":
        params = init_gan(spec, seed)
    elif kind == "mrdn":
        params = init_mrdn(spec, seed)
    else:
        raise ConfigError(f"unknown model kind {kind!r} (have {MODEL_KINDS})")
    return Model(kind=kind, spec=spec, params=params, seed=seed)


def estimate(model, y):
    """Packed-domain estimate (B,H,W) or (H,W) for any model kind."""
    y4, single = _as_batch_images(y)
    if model.kind == "mrdn":
        est, _ = mrdn_run(model.spec, model.params, y4)
    elif model.kind == "cbdnet":
        _, est, _ = cbdnet_run(model.spec, model.params, y4)
    else:
        _, est, _ = cbdnet_run(model.spec.generator, model.params.gen, y4)
    return est[0, 0] if single else est[:, 0]


# ----------------------------------------------------------- op counting

@dataclass
class OpsBudget:
    """Scale factors entering the closed-form training cost."""

    n_b: int = 16
    n_u: int = 8
    s: int = 1        # samples per epoch
    t: int = 1        # epochs
    k: int = 3        # kernel size

    @property
    def pixels(self):
        return self.n_b * 2 * self.n_u


@dataclass
class ComplexityReport:
    model: str
    formula_ops: float
    exact_macs_per_sample: float
    exact_macs_total: float
    inputs: dict


def cbdnet_formula(pixels, k, s, t, l_d, d_l, l_e, e_l):
    return pixels * k ** 2 * s * t * (l_d * d_l ** 2 + l_e * e_l ** 2)


def gan_formula(pixels, k, s, t, l_d, d_l, l_e, e_l, l_a, e_a):
    return pixels * k ** 2 * s * t * (
        l_d * d_l ** 2 + l_e * e_l ** 2 + l_a * e_a ** 2)


def mrdn_formula(pixels, k, s, t, l_m, d_m):
    return pixels * k ** 2 * s * t * (l_m ** 2 * d_m ** 2)


def _conv_macs(in_ch, out_ch, h, w, k, stride=1, pad=None):
    if pad is None:
        pad = (k - 1) // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    return ho * wo * out_ch * in_ch * k * k, ho, wo


def _exact_macs(spec, h, w):
    """Forward multiply-accumulates per sample from actual layer shapes."""
    total = 0
    if isinstance(spec, CBDNetSpec):
        f = spec.features
        for i in range(spec.b_c):
            m, _, _ = _conv_macs(1 if i == 0 else f, f, h, w, 3)
            total += m
        for j in range(spec.k_s):
            m, _, _ = _conv_macs(f if j == 0 else 1, 1, h, w, 3)
            total += m
        total += _conv_macs(f, 1, h, w, 3)[0]          # value head
        for i in range(spec.b_blocks):
            total += _conv_macs(2 if i == 0 else f, f, h, w, 3)[0]
        total += _conv_macs(f, 1, h, w, 3)[0]          # output conv
        return total
    if isinstance(spec, MRDNSpec):
        f = spec.features
        total += _conv_macs(1, f, h, w, 3)[0]
        total += 2 * _conv_macs(f, f, h, w, 3)[0]      # attention convs
        per_rdn = 0
        for n in range(spec.b_layers):
            per_rdn += _conv_macs(f + n * f, f, h, w, 3)[0]
        per_rdn += _conv_macs(f + spec.b_layers * f, f, h, w, 1, pad=0)[0]
        total += spec.n_r * per_rdn
        total += _conv_macs(f, 1, h, w, 3)[0]
        return total
    if isinstance(spec, GANSpec):
        total = _exact_macs(spec.generator, h, w)
        hh, ww = h, w
        for i in range(spec.disc_layers):
            m, hh, ww = _conv_macs(1 if i == 0 else spec.disc_features,
                                   spec.disc_features, hh, ww, 3, stride=2)
            total += m
        total += spec.disc_features  # head affine
        return total
    raise ConfigError(f"count_ops cannot handle spec type {type(spec)}")


def count_ops(spec, budget):
    """Closed-form training cost next to an exact per-layer MAC count.

    Layer-count symbols in the closed forms name the repeated trunk stages:
    L_d = denoiser blocks, L_e = estimator convs, L_a = discriminator convs,
    L_m = residual dense blocks.
    """
    px, k, s, t = budget.pixels, budget.k, budget.s, budget.t
    if isinstance(spec, CBDNetSpec):
        inputs = dict(pixels=px, k=k, s=s, t=t, l_d=spec.b_blocks,
                      d_l=spec.features, l_e=spec.b_c, e_l=spec.features)
        formula = cbdnet_formula(**inputs)
        name = "cbdnet"
    elif isinstance(spec, GANSpec):
        g = spec.generator
        inputs = dict(pixels=px, k=k, s=s, t=t, l_d=g.b_blocks,
                      d_l=g.features, l_e=g.b_c, e_l=g.features,
                      l_a=spec.disc_layers, e_a=spec.disc_features)
        formula = gan_formula(**inputs)
        name = "gan"
    elif isinstance(spec, MRDNSpec):
        inputs = dict(pixels=px, k=k, s=s, t=t, l_m=spec.n_r,
                      d_m=spec.features)
        formula = mrdn_formula(**inputs)
        name = "mrdn"
    else:
        raise ConfigError(f"count_ops cannot handle spec type {type(spec)}")
    per_sample = _exact_macs(spec, budget.n_b, 2 * budget.n_u)
    return ComplexityReport(model=name, formula_ops=float(formula),
                            exact_macs_per_sample=float(per_sample),
                            exact_macs_total=float(per_sample) * s * t,
                            inputs=inputs)
