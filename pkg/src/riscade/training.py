"""Losses, SGD, mini-batch training loops and the gradient-check harness.

Training works entirely in the packed real image domain: per-sample loss

    l_i = (1/sigma_hat_i) * ||est_i - truth_i||_F^2
          + alpha * w_i * (sigma_hat_i - sigma_true_i)^2

with w_i = beta (> 1) when the noise level is underestimated, else 1, and
the batch loss is the mean of l_i. MRDN has no noise head; it trains with
sigma_hat fixed at 1 and alpha = 0, reducing to the plain squared error.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from . import models, rngs
from .errors import ConfigError, NumericError, ShapeError
from .nn import tree

_DEFAULT_LR = {"mrdn": 1e-4, "cbdnet": 1e-3, "gan": 1e-3}


@dataclass
class TrainConfig:
    model_kind: str = "mrdn"
    learning_rate: float = None   # None means the per-model default
    batch_size: int = 20
    epochs: int = 1
    seed: int = 0
    alpha: float = 0.5            # weight of the sigma-matching term
    beta: float = 3.0             # extra penalty when sigma is underestimated
    gan_mix: float = 0.01         # adversarial share of the generator loss
    momentum: float = 0.0         # plain SGD unless raised
    clip_norm: float = 10.0       # 0 disables gradient clipping
    record_timing: bool = False   # wall-clock per step breaks byte identity
    val_chunk: int = 100          # deterministic validation batching

    def __post_init__(self):
        if self.model_kind not in models.MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size >= 1 and epochs >= 0 required")
        if self.beta < 1.0:
            raise ConfigError("beta must be >= 1 (penalize underestimation)")

    @property
    def lr(self):
        if self.learning_rate is None:
            return _DEFAULT_LR[self.model_kind]
        return self.learning_rate


# ---------------------------------------------------------------- losses

def rec_loss(h_hat, h_true, sigma_hat, sigma_true=None, alpha=0.5, beta=3.0):
    """Weighted reconstruction loss, batch mean.

    Accepts (H, W) singles or (B, ...) batches in the packed real domain
    (complex arrays work too: the squared Frobenius norm is the same).
    Returns (loss, d_h_hat, d_sigma_hat).
    """
    h_hat = np.asarray(h_hat)
    h_true = np.asarray(h_true)
    single = h_hat.ndim == 2
    if single:
        h_hat, h_true = h_hat[None], h_true[None]
    b = h_hat.shape[0]
    sigma_hat = np.atleast_1d(np.asarray(sigma_hat, dtype=np.float64))
    if np.any(sigma_hat <= 0):
        raise NumericError(where="rec_loss",
                           detail="sigma_hat must be positive")
    if sigma_true is None:
        sigma_true = np.zeros(b)
        alpha = 0.0
    sigma_true = np.atleast_1d(np.asarray(sigma_true, dtype=np.float64))

    if np.iscomplexobj(h_hat) or np.iscomplexobj(h_true):
        raise ShapeError("rec_loss works in the packed real domain; "
                         "pack complex matrices first")
    err = h_hat - h_true
    sq = np.sum(err ** 2, axis=tuple(range(1, err.ndim)))
    w = np.where(sigma_hat < sigma_true, beta, 1.0)
    diff = sigma_hat - sigma_true
    per = sq / sigma_hat + alpha * w * diff ** 2
    loss = float(np.mean(per))

    shape_tail = (1,) * (err.ndim - 1)
    d_h = (2.0 / b) * err / sigma_hat.reshape((b,) + shape_tail)
    d_sigma = (-sq / sigma_hat ** 2 + 2.0 * alpha * w * diff) / b
    if single:
        return loss, d_h[0], d_sigma
    return loss, d_h, d_sigma


class ClampCounter:
    """Counts probability clamps applied inside gan_losses."""

    def __init__(self):
        self.count = 0

    def bump(self, n):
        self.count += int(n)


clamp_counter = ClampCounter()
_P_EPS = 1e-12


@dataclass
class GanLossGrads:
    d_real: np.ndarray    # d(d_loss)/d(d_real)
    d_fake_d: np.ndarray  # d(d_loss)/d(d_fake)
    d_fake_g: np.ndarray  # d(g_loss)/d(d_fake)


def gan_losses(d_real, d_fake):
    """Discriminator and (non-saturating) generator adversarial losses.

    d_loss = mean(-log d_real - log(1 - d_fake)); g_loss = mean(-log d_fake).
    Probabilities at the boundary are clamped to [1e-12, 1 - 1e-12] and
    counted in clamp_counter.
    """
    d_real = np.atleast_1d(np.asarray(d_real, dtype=np.float64))
    d_fake = np.atleast_1d(np.asarray(d_fake, dtype=np.float64))
    n_clamped = int(np.sum((d_real < _P_EPS) | (d_real > 1 - _P_EPS))
                    + np.sum((d_fake < _P_EPS) | (d_fake > 1 - _P_EPS)))
    if n_clamped:
        clamp_counter.bump(n_clamped)
    pr = np.clip(d_real, _P_EPS, 1.0 - _P_EPS)
    pf = np.clip(d_fake, _P_EPS, 1.0 - _P_EPS)
    b = pr.shape[0]
    d_loss = float(np.mean(-np.log(pr) - np.log(1.0 - pf)))
    g_loss = float(np.mean(-np.log(pf)))
    grads = GanLossGrads(d_real=-1.0 / (b * pr),
                         d_fake_d=1.0 / (b * (1.0 - pf)),
                         d_fake_g=-1.0 / (b * pf))
    return d_loss, g_loss, grads


# ------------------------------------------------------------- optimizer

def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """Plain descent p <- p - lr*g; returns new trees (inputs untouched).

    With momentum > 0 the velocity tree v <- momentum*v + g is used in
    place of g; pass the previous velocity (or None to start at zero).
    Returns (new_params, new_velocity); velocity is None when momentum is 0.
    """
    if lr < 0:
        raise ConfigError("learning rate must be nonnegative")
    def descend(p, g):
        p -= lr * g

    if momentum == 0.0:
        new_params = tree.clone(params)
        tree.update_in_place(new_params, grads, descend)
        return new_params, None
    if velocity is None:
        velocity = tree.zeros_like(params)

    def accumulate(v, g):
        v *= momentum
        v += g

    new_v = tree.clone(velocity)
    tree.update_in_place(new_v, grads, accumulate)
    new_params = tree.clone(params)
    tree.update_in_place(new_params, new_v, descend)
    return new_params, new_v


def clip_grads(grads, max_norm):
    """Scale the whole gradient tree so its global norm is <= max_norm."""
    norm = tree.global_norm(grads)
    if not np.isfinite(norm):
        raise NumericError(where="clip_grads",
                           detail="non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        tree.scale_in_place(grads, max_norm / norm)
    return grads, norm


# ---------------------------------------------------------- training loop

def _batched_views(split, idx):
    y4 = split.y[idx][:, None]        # (B, 1, H, W)
    h4 = split.h_true[idx][:, None]
    return np.ascontiguousarray(y4), np.ascontiguousarray(h4), \
        split.sigma_n[idx]


def _val_nmse_db(model, split, chunk):
    from . import bench

    n = len(split)
    err = 0.0
    ref = 0.0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        est = models.estimate(model, split.y[lo:hi])
        err += float(np.sum((est - split.h_true[lo:hi]) ** 2))
        ref += float(np.sum(split.h_true[lo:hi] ** 2))
    return bench.to_db(err / ref)


def _abort(iteration, idx, history, what):
    raise NumericError(
        where=f"train iteration {iteration}",
        detail={"reason": what, "iteration": iteration,
                "batch_indices": [int(i) for i in idx],
                "loss_tail": [float(v) for v in history[-10:]]})


def train(model, dataset, cfg, on_epoch_end=None):
    """Mini-batch SGD over dataset.train; returns (trained Model, metrics).

    Metrics is a list of per-iteration row dicts (see dataio.METRIC_FIELDS);
    val_nmse_db is filled on the last iteration of each epoch. GAN mode
    takes one discriminator step then one generator step per batch.
    """
    if len(dataset.train) == 0:
        raise ConfigError("training split is empty")
    if model.kind != cfg.model_kind:
        raise ConfigError(f"model is {model.kind!r} but config says "
                          f"{cfg.model_kind!r}")
    params = tree.clone(model.params)
    shuffle_rng = rngs.substream(cfg.seed, rngs.SHUFFLE)
    metrics = []
    history = []
    vel = {"main": None, "disc": None}
    iteration = 0
    n = len(dataset.train)
    cur = models.Model(kind=model.kind, spec=model.spec, params=params,
                       seed=model.seed)

    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            iteration += 1
            t0 = time.perf_counter() if cfg.record_timing else 0.0
            y4, h4, sig_true = _batched_views(dataset.train, idx)

            try:
                loss, sigma_mean, params = _train_step(
                    model, params, cfg, vel, y4, h4, sig_true)
            except NumericError as exc:
                _abort(iteration, idx, history, str(exc))

            history.append(loss)
            cur = models.Model(kind=model.kind, spec=model.spec,
                               params=params, seed=model.seed)
            row = {"iteration": iteration, "loss": float(loss),
                   "val_nmse_db": None, "sigma_hat_mean": sigma_mean,
                   "ms_per_step": None}
            if cfg.record_timing:
                row["ms_per_step"] = (time.perf_counter() - t0) * 1e3
            metrics.append(row)

        if len(dataset.val) > 0 and metrics:
            metrics[-1]["val_nmse_db"] = _val_nmse_db(cur, dataset.val,
                                                      cfg.val_chunk)
        if on_epoch_end is not None:
            on_epoch_end(epoch, cur, metrics)

    return cur, metrics


def _train_step(model, params, cfg, vel, y4, h4, sig_true):
    """One optimizer step; returns (loss, sigma_hat_mean, new params)."""
    if model.kind == "mrdn":
        est, cache = models.mrdn_run(model.spec, params, y4)
        loss, d_est, _ = rec_loss(est[:, 0], h4[:, 0], np.ones(y4.shape[0]))
        if not np.isfinite(loss):
            raise NumericError(where="train", detail="non-finite loss")
        grads = models.mrdn_backward(model.spec, params, y4, cache,
                                     d_est[:, None])
        grads, _ = clip_grads(grads, cfg.clip_norm)
        params, vel["main"] = sgd_step(params, grads, cfg.lr,
                                       cfg.momentum, vel["main"])
        return loss, None, params

    if model.kind == "cbdnet":
        sigma, est, cache = models.cbdnet_run(model.spec, params, y4)
        loss, d_est, d_sig = rec_loss(est[:, 0], h4[:, 0], sigma,
                                      sig_true, cfg.alpha, cfg.beta)
        if not np.isfinite(loss):
            raise NumericError(where="train", detail="non-finite loss")
        grads = models.cbdnet_backward(model.spec, params, y4, cache,
                                       d_est[:, None], d_sig)
        grads, _ = clip_grads(grads, cfg.clip_norm)
        params, vel["main"] = sgd_step(params, grads, cfg.lr,
                                       cfg.momentum, vel["main"])
        return loss, float(sigma.mean()), params

    # gan: one discriminator step, then one generator step per batch
    gspec = model.spec.generator
    sigma, est, gcache = models.cbdnet_run(gspec, params.gen, y4)
    p_real, c_real = models.disc_run(model.spec, params.disc, h4)
    p_fake, c_fake = models.disc_run(model.spec, params.disc, est)
    d_loss, _, lg = gan_losses(p_real, p_fake)
    if not np.isfinite(d_loss):
        raise NumericError(where="train", detail="non-finite disc loss")
    g_r, _ = models.disc_backward(model.spec, params.disc, h4, c_real,
                                  lg.d_real)
    g_f, _ = models.disc_backward(model.spec, params.disc, est, c_fake,
                                  lg.d_fake_d)
    tree.add_in_place(g_r, g_f)
    g_r, _ = clip_grads(g_r, cfg.clip_norm)
    new_disc, vel["disc"] = sgd_step(params.disc, g_r, cfg.lr,
                                     cfg.momentum, vel["disc"])
    params = models.GanParams(gen=params.gen, disc=new_disc)

    p_fake2, c_fake2 = models.disc_run(model.spec, params.disc, est)
    rloss, d_est_rec, d_sig = rec_loss(est[:, 0], h4[:, 0], sigma, sig_true,
                                       cfg.alpha, cfg.beta)
    _, g_adv, lg2 = gan_losses(p_real, p_fake2)
    _, d_est_adv = models.disc_backward(model.spec, params.disc, est,
                                        c_fake2, lg2.d_fake_g)
    loss = rloss + cfg.gan_mix * g_adv
    if not np.isfinite(loss):
        raise NumericError(where="train", detail="non-finite gen loss")
    d_est = d_est_rec[:, None] + cfg.gan_mix * d_est_adv
    g_gen = models.cbdnet_backward(gspec, params.gen, y4, gcache, d_est,
                                   d_sig)
    g_gen, _ = clip_grads(g_gen, cfg.clip_norm)
    new_gen, vel["main"] = sgd_step(params.gen, g_gen, cfg.lr,
                                    cfg.momentum, vel["main"])
    return loss, float(sigma.mean()), models.GanParams(gen=new_gen,
                                                       disc=params.disc)


# ------------------------------------------------------------ grad check

@dataclass
class GradCheckReport:
    model: str
    tol: float
    max_rel_err: float
    per_layer: dict = field(default_factory=dict)
    passed: bool = False
    n_params: int = 0
    instance_seed: int = 0


def _micro_model(kind, seed, features=4):
    if kind == "cbdnet":
        spec = models.CBDNetSpec(b_c=2, k_s=1, b_blocks=2, features=features)
    elif kind == "mrdn":
        spec = models.MRDNSpec(n_r=1, b_layers=1, features=features)
    elif kind == "gan":
        spec = models.GANSpec(
            generator=models.CBDNetSpec(b_c=2, k_s=1, b_blocks=2,
                                        features=features),
            disc_layers=2, disc_features=features)
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    return models.build_model(kind, spec=spec, seed=seed)


def _min_abs(*arrays):
    return min(float(np.min(np.abs(a))) for a in arrays)


def _cbdnet_clearance(spec, params, y4, sigma_true):
    """Min distance of every kink-adjacent quantity from its kink."""
    sigma, _, cache = models.cbdnet_run(spec, params, y4)
    est_cache, _, _, _, _, u, block_cache, _ = cache
    pres = [pre for _, pre in est_cache] + [bc[1] for _, bc in block_cache]
    clear = _min_abs(*pres)
    clear = min(clear, _min_abs(u))
    clear = min(clear, float(np.min(np.abs(sigma - sigma_true))))
    return clear


def _mrdn_clearance(spec, params, y4):
    _, cache = models.mrdn_run(spec, params, y4)
    _, cbam_cache, rdn_caches, _ = cache
    clear = _min_abs(cbam_cache[0])
    for _, rc in rdn_caches:
        _, pres, _ = rc
        if pres:
            clear = min(clear, _min_abs(*pres))
    return clear


def _disc_clearance(spec, params, x4):
    _, cache = models.disc_run(spec, params, x4)
    conv_cache = cache[0]
    return _min_abs(*[pre for _, pre in conv_cache])


_CLEARANCE = 1e-3


def grad_check(kind, tol=1e-5, h=1e-5, seed=0, image_hw=(4, 8),
               max_seed_bumps=25):
    """Central finite differences vs analytic gradients on a micro model.

    Instances whose ReLU pre-activations (or other kink-adjacent values)
    sit within 1e-3 of a kink are discarded and redrawn with the next
    instance seed, since finite differences are invalid across kinks;
    the comparison itself is never retried.
    """
    hgt, wid = image_hw
    if kind == "linear":
        return _grad_check_linear(tol, h, seed, image_hw)

    for bump in range(max_seed_bumps):
        inst_seed = seed + bump
        rng = rngs.substream(inst_seed, rngs.GRADCHECK)
        model = _micro_model(kind, inst_seed)
        y4 = rng.normal(size=(2, 1, hgt, wid))
        h4 = rng.normal(size=(2, 1, hgt, wid))
        sigma_true = rng.uniform(0.3, 0.6, size=2)
        if kind == "cbdnet":
            ok = _cbdnet_clearance(model.spec, model.params, y4,
                                   sigma_true) > _CLEARANCE
        elif kind == "mrdn":
            ok = _mrdn_clearance(model.spec, model.params, y4) > _CLEARANCE
        else:
            gspec = model.spec.generator
            _, est, _ = models.cbdnet_run(gspec, model.params.gen, y4)
            ok = (_cbdnet_clearance(gspec, model.params.gen, y4,
                                    sigma_true) > _CLEARANCE
                  and _disc_clearance(model.spec, model.params.disc,
                                      h4) > _CLEARANCE
                  and _disc_clearance(model.spec, model.params.disc,
                                      est) > _CLEARANCE)
        if ok:
            break
    else:
        raise NumericError(where="grad_check",
                           detail="no kink-clear instance found")

    if kind == "cbdnet":
        params = model.params

        def loss():
            sigma, est, _ = models.cbdnet_run(model.spec, params, y4)
            val, _, _ = rec_loss(est[:, 0], h4[:, 0], sigma, sigma_true)
            return val

        def analytic():
            sigma, est, cache = models.cbdnet_run(model.spec, params, y4)
            _, d_est, d_sig = rec_loss(est[:, 0], h4[:, 0], sigma,
                                       sigma_true)
            return models.cbdnet_backward(model.spec, params, y4, cache,
                                          d_est[:, None], d_sig)

        report = _fd_compare(kind, loss, analytic(), params, tol, h)

    elif kind == "mrdn":
        params = model.params

        def loss():
            est, _ = models.mrdn_run(model.spec, params, y4)
            val, _, _ = rec_loss(est[:, 0], h4[:, 0], np.ones(2))
            return val

        def analytic():
            est, cache = models.mrdn_run(model.spec, params, y4)
            _, d_est, _ = rec_loss(est[:, 0], h4[:, 0], np.ones(2))
            return models.mrdn_backward(model.spec, params, y4, cache,
                                        d_est[:, None])

        report = _fd_compare(kind, loss, analytic(), params, tol, h)

    else:  # gan: generator under rec + mixed adversarial, disc under d_loss
        params = model.params
        gspec = model.spec.generator
        mix = 0.01

        def gen_loss():
            sigma, est, _ = models.cbdnet_run(gspec, params.gen, y4)
            p_fake, _ = models.disc_run(model.spec, params.disc, est)
            rl, _, _ = rec_loss(est[:, 0], h4[:, 0], sigma, sigma_true)
            _, g_adv, _ = gan_losses(np.full(2, 0.5), p_fake)
            return rl + mix * g_adv

        def gen_analytic():
            sigma, est, cache = models.cbdnet_run(gspec, params.gen, y4)
            p_fake, c_fake = models.disc_run(model.spec, params.disc, est)
            _, d_est_rec, d_sig = rec_loss(est[:, 0], h4[:, 0], sigma,
                                           sigma_true)
            _, _, lg = gan_losses(np.full(2, 0.5), p_fake)
            _, d_est_adv = models.disc_backward(model.spec, params.disc,
                                                est, c_fake, lg.d_fake_g)
            d_est = d_est_rec[:, None] + mix * d_est_adv
            return models.cbdnet_backward(gspec, params.gen, y4, cache,
                                          d_est, d_sig)

        def disc_loss():
            sigma, est, _ = models.cbdnet_run(gspec, params.gen, y4)
            p_real, _ = models.disc_run(model.spec, params.disc, h4)
            p_fake, _ = models.disc_run(model.spec, params.disc, est)
            dl, _, _ = gan_losses(p_real, p_fake)
            return dl

        def disc_analytic():
            _, est, _ = models.cbdnet_run(gspec, params.gen, y4)
            p_real, c_real = models.disc_run(model.spec, params.disc, h4)
            p_fake, c_fake = models.disc_run(model.spec, params.disc, est)
            _, _, lg = gan_losses(p_real, p_fake)
            g_r, _ = models.disc_backward(model.spec, params.disc, h4,
                                          c_real, lg.d_real)
            g_f, _ = models.disc_backward(model.spec, params.disc, est,
                                          c_fake, lg.d_fake_d)
            tree.add_in_place(g_r, g_f)
            return g_r

        rep_g = _fd_compare("gan generator", gen_loss, gen_analytic(),
                            params.gen, tol, h)
        rep_d = _fd_compare("gan discriminator", disc_loss, disc_analytic(),
                            params.disc, tol, h)
        per_layer = {f"gen.{k}": v for k, v in rep_g.per_layer.items()}
        per_layer.update({f"disc.{k}": v for k, v in rep_d.per_layer.items()})
        report = GradCheckReport(
            model="gan", tol=tol,
            max_rel_err=max(rep_g.max_rel_err, rep_d.max_rel_err),
            per_layer=per_layer,
            passed=rep_g.passed and rep_d.passed,
            n_params=rep_g.n_params + rep_d.n_params)

    report.instance_seed = inst_seed
    return report


def _grad_check_linear(tol, h, seed, image_hw):
    """Single conv layer under a linear functional: fd is exact."""
    from .nn import ConvParams, conv2d_backward, conv2d_forward, init_conv

    rng = rngs.substream(seed, rngs.GRADCHECK, 7)
    p = init_conv(rng, 1, 1)
    x = rng.normal(size=(1, 1) + image_hw)
    r = rng.normal(size=x.shape)

    def loss():
        return float(np.sum(conv2d_forward(x, p) * r))

    lg = conv2d_backward(x, p, r)
    grads = ConvParams(weights=lg.d_weights, bias=lg.d_bias)
    report = _fd_compare("linear", loss, grads, p, tol, h)
    report.instance_seed = seed
    return report


def _fd_compare(name, loss, grads, params, tol, h):
    per_layer = {}
    worst = 0.0
    count = 0
    for path, p_arr, g_arr in tree.zip_arrays(params, grads):
        flat_p = p_arr.reshape(-1)
        flat_g = g_arr.reshape(-1)
        layer_worst = 0.0
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            fp = loss()
            flat_p[i] = orig - h
            fm = loss()
            flat_p[i] = orig
            num = (fp - fm) / (2.0 * h)
            rel = abs(num - flat_g[i]) / max(abs(num), abs(flat_g[i]), 1.0)
            layer_worst = max(layer_worst, rel)
            count += 1
        key = ".".join(path.split(".")[:2])
        per_layer[key] = max(per_layer.get(key, 0.0), layer_worst)
        worst = max(worst, layer_worst)
    return GradCheckReport(model=name, tol=tol, max_rel_err=worst,
                           per_layer=per_layer, passed=worst < tol,
                           n_params=count)
