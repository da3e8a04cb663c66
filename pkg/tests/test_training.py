import numpy as np
import pytest

from riscade import channel as ch
from riscade import models, rngs, training
from riscade.errors import ConfigError, NumericError, ShapeError
from riscade.nn import tree

from helpers import max_rel_err, num_grad


def tiny_dataset(n_train=8, n_val=4, seed=0, snr=10.0):
    cfg = ch.DatasetConfig(n_train=n_train, n_val=n_val, n_test=2,
                           ris_n_h=3, ris_n_v=3, n_b=4, n_u=4, seed=seed,
                           snr_db_min=snr, snr_db_max=snr)
    return ch.gen_dataset(cfg)


def micro_model(kind, seed=0):
    if kind == "mrdn":
        spec = models.MRDNSpec(n_r=1, b_layers=1, features=4)
    elif kind == "cbdnet":
        spec = models.CBDNetSpec(b_c=2, k_s=1, b_blocks=2, features=4)
    else:
        spec = models.GANSpec(generator=models.CBDNetSpec(
            b_c=2, k_s=1, b_blocks=2, features=4),
            disc_layers=2, disc_features=4)
    return models.build_model(kind, spec=spec, seed=seed)


# ---------------------------------------------------------------- losses

def test_rec_loss_zero_at_truth():
    h = np.ones((3, 4))
    loss, d_h, d_s = training.rec_loss(h, h, 0.7, 0.7)
    assert loss == 0.0
    assert not d_h.any()
    assert np.allclose(d_s, 0.0)


def test_rec_loss_closed_form():
    h_true = np.zeros((2, 2))
    h_hat = np.ones((2, 2))
    loss, _, _ = training.rec_loss(h_hat, h_true, 2.0, alpha=0.0)
    assert loss == pytest.approx(2.0)


def test_rec_loss_asymmetry():
    h = np.zeros((2, 2))
    lo, _, _ = training.rec_loss(h, h, 0.5, 1.0, alpha=0.5, beta=3.0)
    hi, _, _ = training.rec_loss(h, h, 1.5, 1.0, alpha=0.5, beta=3.0)
    # same |sigma error| but underestimation costs beta times more
    assert lo == pytest.approx(3.0 * hi)


def test_rec_loss_rejects_bad_sigma_and_complex():
    h = np.ones((2, 2))
    with pytest.raises(NumericError):
        training.rec_loss(h, h, 0.0, 1.0)
    with pytest.raises(NumericError):
        training.rec_loss(h, h, -1.0, 1.0)
    with pytest.raises(ShapeError):
        training.rec_loss(h.astype(complex), h, 1.0, 1.0)


def test_rec_loss_gradients_match_fd():
    rng = np.random.default_rng(1)
    h_true = rng.normal(size=(2, 3, 4))
    h_hat = h_true + rng.normal(size=(2, 3, 4))
    sigma_hat = np.array([0.8, 1.4])
    sigma_true = np.array([0.5, 1.9])  # one over-, one under-estimate

    loss, d_h, d_s = training.rec_loss(h_hat, h_true, sigma_hat, sigma_true)
    n_h = num_grad(lambda v: training.rec_loss(v, h_true, sigma_hat,
                                               sigma_true)[0], h_hat)
    n_s = num_grad(lambda v: training.rec_loss(h_hat, h_true, v,
                                               sigma_true)[0], sigma_hat)
    assert max_rel_err(d_h, n_h) < 1e-8
    assert max_rel_err(d_s, n_s) < 1e-8


def test_rec_loss_nonnegative_property():
    rng = np.random.default_rng(2)
    for _ in range(50):
        h_true = rng.normal(size=(2, 2))
        h_hat = rng.normal(size=(2, 2))
        s_hat = rng.uniform(0.1, 2.0)
        s_true = rng.uniform(0.1, 2.0)
        loss, _, _ = training.rec_loss(h_hat, h_true, s_hat, s_true)
        assert loss >= 0.0


def test_gan_losses_closed_forms():
    d_loss, g_loss, _ = training.gan_losses(0.5, 0.5)
    assert d_loss == pytest.approx(2.0 * np.log(2.0))
    _, g1, _ = training.gan_losses(0.5, 1.0 - 1e-13)
    assert g1 == pytest.approx(0.0, abs=1e-9)


def test_gan_losses_clamp_counter():
    before = training.clamp_counter.count
    training.gan_losses(np.array([0.0, 0.5]), np.array([1.0]))
    assert training.clamp_counter.count == before + 2


def test_gan_loss_grad_vs_logits_fd():
    rng = np.random.default_rng(3)
    logits_r = rng.normal(size=3)
    logits_f = rng.normal(size=3)

    def sig(t):
        return 1.0 / (1.0 + np.exp(-t))

    def d_loss_of(lr_, lf_):
        d, _, _ = training.gan_losses(sig(lr_), sig(lf_))
        return d

    _, _, lg = training.gan_losses(sig(logits_r), sig(logits_f))
    pr, pf = sig(logits_r), sig(logits_f)
    d_lr = lg.d_real * pr * (1 - pr)          # chain rule through sigmoid
    d_lf = lg.d_fake_d * pf * (1 - pf)
    n_lr = num_grad(lambda v: d_loss_of(v, logits_f), logits_r)
    n_lf = num_grad(lambda v: d_loss_of(logits_r, v), logits_f)
    assert max_rel_err(d_lr, n_lr) < 1e-8
    assert max_rel_err(d_lf, n_lf) < 1e-8


# ------------------------------------------------------------- optimizer

def test_sgd_trivials_and_purity():
    p = models.init_mrdn(models.MRDNSpec(n_r=1, b_layers=1, features=2), 0)
    g0 = tree.zeros_like(p)
    p1, _ = training.sgd_step(p, g0, 0.3)
    for _, a, b in tree.zip_arrays(p, p1):
        assert np.array_equal(a, b)

    from riscade.nn import ConvParams
    w = ConvParams(weights=np.full((1, 1, 1, 1), 1.0), bias=np.zeros(1))
    g = ConvParams(weights=np.full((1, 1, 1, 1), 2.0), bias=np.zeros(1))
    out, _ = training.sgd_step(w, g, 0.1)
    assert out.weights[0, 0, 0, 0] == pytest.approx(0.8)
    assert w.weights[0, 0, 0, 0] == 1.0  # input untouched


def test_sgd_quadratic_closed_form_and_monotone():
    # J(W) = 0.5*||W||^2, grad = W: one step gives W*(1 - lr)
    from riscade.nn import ConvParams
    rng = np.random.default_rng(4)
    w0 = rng.normal(size=(2, 1, 1, 1))
    p = ConvParams(weights=w0.copy(), bias=np.zeros(2))
    lr = 0.2
    g = ConvParams(weights=p.weights.copy(), bias=p.bias.copy())
    p1, _ = training.sgd_step(p, g, lr)
    assert np.allclose(p1.weights, w0 * (1 - lr), atol=1e-15)

    vals = []
    for _ in range(20):
        vals.append(0.5 * float(np.sum(p.weights ** 2)))
        g = ConvParams(weights=p.weights.copy(), bias=p.bias.copy())
        p, _ = training.sgd_step(p, g, lr)
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_sgd_momentum_accumulates():
    from riscade.nn import ConvParams
    p = ConvParams(weights=np.zeros((1, 1, 1, 1)), bias=np.zeros(1))
    g = ConvParams(weights=np.ones((1, 1, 1, 1)), bias=np.zeros(1))
    p1, v1 = training.sgd_step(p, g, 1.0, momentum=0.9)
    p2, v2 = training.sgd_step(p1, g, 1.0, momentum=0.9, velocity=v1)
    assert p1.weights[0, 0, 0, 0] == pytest.approx(-1.0)
    assert p2.weights[0, 0, 0, 0] == pytest.approx(-1.0 - 1.9)


def test_clip_grads():
    from riscade.nn import ConvParams
    g = ConvParams(weights=np.full((1, 1, 1, 1), 30.0), bias=np.full(1, 40.0))
    clipped, norm = training.clip_grads(g, 10.0)
    assert norm == pytest.approx(50.0)
    assert tree.global_norm(clipped) == pytest.approx(10.0)
    g2 = ConvParams(weights=np.ones((1, 1, 1, 1)), bias=np.zeros(1))
    _, norm2 = training.clip_grads(g2, 10.0)
    assert norm2 == pytest.approx(1.0)


# ------------------------------------------------------------- train loop

def test_train_lr_zero_keeps_params():
    ds = tiny_dataset()
    model = micro_model("mrdn")
    cfg = training.TrainConfig(model_kind="mrdn", learning_rate=0.0,
                               batch_size=4, epochs=2, seed=5)
    trained, metrics = training.train(model, ds, cfg)
    for _, a, b in tree.zip_arrays(model.params, trained.params):
        assert np.array_equal(a, b)
    assert len(metrics) == 2 * 2  # 8 samples / batch 4, 2 epochs


def test_train_deterministic():
    ds = tiny_dataset()
    cfg = training.TrainConfig(model_kind="mrdn", learning_rate=1e-3,
                               batch_size=4, epochs=2, seed=6)
    t1, m1 = training.train(micro_model("mrdn", 1), ds, cfg)
    t2, m2 = training.train(micro_model("mrdn", 1), ds, cfg)
    assert m1 == m2
    for _, a, b in tree.zip_arrays(t1.params, t2.params):
        assert np.array_equal(a, b)


def test_train_metrics_schema():
    ds = tiny_dataset()
    cfg = training.TrainConfig(model_kind="cbdnet", learning_rate=1e-4,
                               batch_size=4, epochs=2, seed=7)
    _, metrics = training.train(micro_model("cbdnet"), ds, cfg)
    assert [m["iteration"] for m in metrics] == list(range(1, 5))
    assert all(np.isfinite(m["loss"]) for m in metrics)
    assert all(m["sigma_hat_mean"] > 0 for m in metrics)
    # val NMSE on the last iteration of each epoch only
    assert metrics[1]["val_nmse_db"] is not None
    assert metrics[0]["val_nmse_db"] is None
    assert metrics[3]["val_nmse_db"] is not None
    assert all(m["ms_per_step"] is None for m in metrics)


def test_train_gan_updates_both_subnets():
    ds = tiny_dataset()
    model = micro_model("gan")
    cfg = training.TrainConfig(model_kind="gan", learning_rate=1e-3,
                               batch_size=4, epochs=1, seed=8)
    trained, metrics = training.train(model, ds, cfg)
    gen_moved = any(not np.array_equal(a, b) for _, a, b in
                    tree.zip_arrays(model.params.gen, trained.params.gen))
    disc_moved = any(not np.array_equal(a, b) for _, a, b in
                     tree.zip_arrays(model.params.disc, trained.params.disc))
    assert gen_moved and disc_moved
    assert all(np.isfinite(m["loss"]) for m in metrics)


def test_train_abort_diagnostics():
    ds = tiny_dataset()
    cfg = training.TrainConfig(model_kind="mrdn", learning_rate=1e14,
                               batch_size=4, epochs=3, seed=9, clip_norm=0.0)
    with pytest.raises(NumericError) as exc_info:
        training.train(micro_model("mrdn"), ds, cfg)
    detail = exc_info.value.detail
    assert isinstance(detail, dict)
    assert {"reason", "iteration", "batch_indices", "loss_tail"} <= set(detail)


def test_train_single_sample_overfit_loss_drops_100x():
    cfg_ds = ch.DatasetConfig(n_train=1, n_val=1, n_test=1, ris_n_h=3,
                              ris_n_v=3, n_b=4, n_u=4, seed=10,
                              snr_db_min=10, snr_db_max=10)
    ds = ch.gen_dataset(cfg_ds)
    model = micro_model("mrdn", seed=3)
    cfg = training.TrainConfig(model_kind="mrdn", learning_rate=2e-3,
                               batch_size=1, epochs=500, seed=11)
    _, metrics = training.train(model, ds, cfg)
    assert len(metrics) == 500
    assert metrics[-1]["loss"] < metrics[0]["loss"] / 100.0


def test_train_config_validation():
    with pytest.raises(ConfigError):
        training.TrainConfig(model_kind="vae")
    with pytest.raises(ConfigError):
        training.TrainConfig(learning_rate=-1.0)
    with pytest.raises(ConfigError):
        training.TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        training.TrainConfig(beta=0.5)
    assert training.TrainConfig(model_kind="mrdn").lr == 1e-4
    assert training.TrainConfig(model_kind="cbdnet").lr == 1e-3
    assert training.TrainConfig(model_kind="gan").lr == 1e-3


# ------------------------------------------------------------ grad_check

def test_grad_check_linear_exact():
    rep = training.grad_check("linear", tol=1e-10)
    assert rep.passed and rep.max_rel_err < 1e-10


@pytest.mark.parametrize("kind", ["cbdnet", "mrdn", "gan"])
def test_grad_check_micro_models(kind):
    rep = training.grad_check(kind, tol=1e-5)
    assert rep.passed, f"{kind}: max rel err {rep.max_rel_err}"
    assert rep.per_layer  # layer-resolved reporting present
    assert rep.n_params > 0
