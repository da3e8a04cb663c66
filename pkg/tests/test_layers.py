import numpy as np
import pytest

from riscade import nn
from riscade.errors import NumericError
from riscade.nn import tree

from helpers import max_rel_err, num_grad


def test_relu_examples():
    assert np.array_equal(nn.relu_forward(np.array([-1.0, 0.0, 2.0])),
                          np.array([0.0, 0.0, 2.0]))
    got = nn.relu_backward(np.array([-1.0, 2.0]), np.array([5.0, 5.0]))
    assert np.array_equal(got, np.array([0.0, 5.0]))
    # subgradient at exactly 0 is 0
    assert nn.relu_backward(np.array([0.0]), np.array([7.0]))[0] == 0.0


def test_relu_finite_difference_away_from_kinks():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.2, 1.0, size=(2, 3, 4)) * rng.choice([-1.0, 1.0],
                                                           size=(2, 3, 4))
    r = rng.normal(size=x.shape)
    g = nn.relu_backward(x, r)
    n = num_grad(lambda v: np.sum(nn.relu_forward(v) * r), x)
    assert max_rel_err(g, n) < 1e-6


def test_softmax_uniform_and_closed_form():
    out = nn.softmax_forward(np.full((1, 8), 3.7), axis=1)
    assert np.allclose(out, 1.0 / 8)
    out = nn.softmax_forward(np.array([0.0, np.log(3.0)]), axis=0)
    assert np.allclose(out, [0.25, 0.75], atol=1e-12)


def test_softmax_stability_and_sum():
    x = np.array([1e4, 1e4 + 1.0])
    out = nn.softmax_forward(x, axis=0)
    assert np.all(np.isfinite(out))
    assert abs(out.sum() - 1.0) < 1e-12


def test_softmax_spatial_axes():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 1, 3, 4))
    out = nn.softmax_forward(x, axis=(2, 3))
    assert np.allclose(out.sum(axis=(2, 3)), 1.0)


def test_softmax_backward_finite_difference():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5))
    r = rng.normal(size=(2, 5))
    g = nn.softmax_backward(x, 1, r)
    n = num_grad(lambda v: np.sum(nn.softmax_forward(v, 1) * r), x)
    assert max_rel_err(g, n) < 1e-6
    # spatial variant
    x = rng.normal(size=(1, 1, 3, 3))
    r = rng.normal(size=x.shape)
    g = nn.softmax_backward(x, (2, 3), r)
    n = num_grad(lambda v: np.sum(nn.softmax_forward(v, (2, 3)) * r), x)
    assert max_rel_err(g, n) < 1e-6


def test_norm_zero_mean_unit_var():
    rng = np.random.default_rng(3)
    x = rng.normal(3.0, 2.0, size=(4, 2, 5, 5))
    p = nn.init_norm(2)
    out = nn.norm_forward(x, p)
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_norm_backward_finite_difference():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 2, 3, 3))
    p = nn.NormParams(gamma=rng.normal(size=2), beta=rng.normal(size=2))
    r = rng.normal(size=x.shape)

    dx, dp = nn.norm_backward(x, p, r)
    n_x = num_grad(lambda v: np.sum(nn.norm_forward(v, p) * r), x)
    n_g = num_grad(lambda v: np.sum(nn.norm_forward(
        x, nn.NormParams(v, p.beta, p.eps)) * r), p.gamma)
    n_b = num_grad(lambda v: np.sum(nn.norm_forward(
        x, nn.NormParams(p.gamma, v, p.eps)) * r), p.beta)
    assert max_rel_err(dx, n_x) < 1e-6
    assert max_rel_err(dp.gamma, n_g) < 1e-6
    assert max_rel_err(dp.beta, n_b) < 1e-6


def test_residual_block_identity_case():
    p = nn.ConvParams(weights=np.ones((1, 1, 1, 1)), bias=np.zeros(1), pad=0)
    x = np.abs(np.random.default_rng(5).normal(size=(1, 4, 4)))
    assert np.allclose(nn.residual_block_forward(x, p), x)


def _clear_relu(rng, shape, lo=0.3):
    """Random tensor whose entries stay away from 0 (fd kink safety)."""
    return rng.uniform(lo, 1.0, size=shape) * rng.choice([-1.0, 1.0],
                                                         size=shape)


def test_two_blocks_match_manual_nesting_and_gradcheck():
    rng = np.random.default_rng(6)
    p1 = nn.init_conv(rng, 3, 2)
    p2 = nn.init_conv(rng, 2, 3)
    # bias offsets push pre-activations away from the relu kink
    p1.bias += 0.5
    p2.bias += 0.5
    x = rng.normal(size=(1, 2, 4, 4))

    out = nn.residual_block_forward(nn.residual_block_forward(x, p1), p2)
    manual = nn.relu_forward(nn.conv2d_forward(
        nn.relu_forward(nn.conv2d_forward(x, p1)), p2))
    assert np.array_equal(out, manual)

    # verify clearance so central differences are trustworthy
    z1 = nn.conv2d_forward(x, p1)
    z2 = nn.conv2d_forward(nn.relu_forward(z1), p2)
    assert min(np.min(np.abs(z1)), np.min(np.abs(z2))) > 1e-3

    r = rng.normal(size=out.shape)

    def loss(xv):
        h = nn.residual_block_forward(xv, p1)
        return np.sum(nn.residual_block_forward(h, p2) * r)

    h1 = nn.residual_block_forward(x, p1)
    g2 = nn.residual_block_backward(h1, p2, r)
    g1 = nn.residual_block_backward(x, p1, g2.d_input)
    assert max_rel_err(g1.d_input, num_grad(loss, x)) < 1e-6

    def loss_w1(wv):
        h = nn.residual_block_forward(x, nn.ConvParams(wv, p1.bias))
        return np.sum(nn.residual_block_forward(h, p2) * r)

    assert max_rel_err(g1.d_weights, num_grad(loss_w1, p1.weights)) < 1e-6


def test_block_with_norm_matches_manual_and_gradcheck():
    rng = np.random.default_rng(7)
    bp = nn.BlockParams(conv=nn.init_conv(rng, 2, 2),
                        norm=nn.NormParams(gamma=rng.uniform(0.8, 1.2, 2),
                                           beta=rng.uniform(0.4, 0.6, 2)))
    x = rng.normal(size=(2, 2, 4, 4))
    out = nn.block_forward(x, bp)
    manual = nn.relu_forward(nn.norm_forward(
        nn.conv2d_forward(x, bp.conv), bp.norm))
    assert np.array_equal(out, manual)

    # kink clearance of the post-norm activations
    z2 = nn.norm_forward(nn.conv2d_forward(x, bp.conv), bp.norm)
    assert np.min(np.abs(z2)) > 1e-3

    r = rng.normal(size=out.shape)
    dx, g = nn.block_backward(x, bp, r)
    n_x = num_grad(lambda v: np.sum(nn.block_forward(v, bp) * r), x)
    assert max_rel_err(dx, n_x) < 1e-6

    def loss_gamma(v):
        bp2 = nn.BlockParams(conv=bp.conv,
                             norm=nn.NormParams(v, bp.norm.beta, bp.norm.eps))
        return np.sum(nn.block_forward(x, bp2) * r)

    assert max_rel_err(g.norm.gamma, num_grad(loss_gamma, bp.norm.gamma)) < 1e-6

    def loss_w(v):
        bp2 = nn.BlockParams(conv=nn.ConvParams(v, bp.conv.bias), norm=bp.norm)
        return np.sum(nn.block_forward(x, bp2) * r)

    assert max_rel_err(g.conv.weights, num_grad(loss_w, bp.conv.weights)) < 1e-6


def test_rdn_zero_weights_is_passthrough():
    rng = np.random.default_rng(8)
    p = nn.init_rdn(rng, channels=3, b_layers=2)
    for arr, _ in [(c.weights, 0) for c in p.layers] + [(p.fusion.weights, 0)]:
        arr[...] = 0.0
    p.fusion.bias[...] = 0.0
    for c in p.layers:
        c.bias[...] = 0.0
    x = rng.normal(size=(1, 3, 5, 5))
    assert np.array_equal(nn.rdn_forward(x, p), x)


def test_rdn_matches_manual_composition():
    rng = np.random.default_rng(9)
    p = nn.init_rdn(rng, channels=2, b_layers=2)
    x = rng.normal(size=(1, 2, 4, 4))
    got = nn.rdn_forward(x, p)

    f1 = nn.relu_forward(nn.conv2d_forward(x, p.layers[0]))
    cat1 = np.concatenate([x, f1], axis=1)
    f2 = nn.relu_forward(nn.conv2d_forward(cat1, p.layers[1]))
    cat2 = np.concatenate([x, f1, f2], axis=1)
    manual = nn.conv2d_forward(cat2, p.fusion) + x
    assert np.allclose(got, manual, atol=1e-12)


def test_rdn_gradcheck():
    rng = np.random.default_rng(10)
    p = nn.init_rdn(rng, channels=2, b_layers=2)
    for c in p.layers:
        c.bias += 0.5  # clear the relu kinks
    x = rng.normal(size=(1, 2, 3, 3))
    out, cache = nn.rdn_run(x, p)
    assert min(np.min(np.abs(z)) for z in cache[1]) > 1e-3
    r = rng.normal(size=out.shape)
    dx, g = nn.rdn_backward(x, p, r, cache=cache)

    n_x = num_grad(lambda v: np.sum(nn.rdn_forward(v, p) * r), x)
    assert max_rel_err(dx, n_x) < 1e-6

    def loss_w0(v):
        p2 = nn.RdnParams(layers=[nn.ConvParams(v, p.layers[0].bias)]
                          + p.layers[1:], fusion=p.fusion)
        return np.sum(nn.rdn_forward(x, p2) * r)

    assert max_rel_err(g.layers[0].weights,
                       num_grad(loss_w0, p.layers[0].weights)) < 1e-6

    def loss_fw(v):
        p2 = nn.RdnParams(layers=p.layers,
                          fusion=nn.ConvParams(v, p.fusion.bias, pad=0))
        return np.sum(nn.rdn_forward(x, p2) * r)

    assert max_rel_err(g.fusion.weights,
                       num_grad(loss_fw, p.fusion.weights)) < 1e-6


def test_cbam_identity_convs():
    eye = np.zeros((2, 2, 1, 1))
    eye[0, 0, 0, 0] = eye[1, 1, 0, 0] = 1.0
    p = nn.CbamParams(conv1=nn.ConvParams(eye, np.zeros(2), pad=0),
                      conv2=nn.ConvParams(eye.copy(), np.zeros(2), pad=0))
    x = np.abs(np.random.default_rng(11).normal(size=(1, 2, 4, 4)))
    assert np.allclose(nn.cbam_forward(x, p), x)


def test_cbam_matches_chain_and_gradcheck():
    rng = np.random.default_rng(12)
    p = nn.init_cbam(rng, channels=2)
    p.conv1.bias += 0.5
    x = rng.normal(size=(1, 2, 4, 4))
    got = nn.cbam_forward(x, p)
    manual = nn.conv2d_forward(
        nn.relu_forward(nn.conv2d_forward(x, p.conv1)), p.conv2)
    assert np.array_equal(got, manual)

    z1 = nn.conv2d_forward(x, p.conv1)
    assert np.min(np.abs(z1)) > 1e-3

    r = rng.normal(size=got.shape)
    dx, g = nn.cbam_backward(x, p, r)
    n_x = num_grad(lambda v: np.sum(nn.cbam_forward(v, p) * r), x)
    assert max_rel_err(dx, n_x) < 1e-6

    def loss_w1(v):
        p2 = nn.CbamParams(conv1=nn.ConvParams(v, p.conv1.bias), conv2=p.conv2)
        return np.sum(nn.cbam_forward(x, p2) * r)

    assert max_rel_err(g.conv1.weights, num_grad(loss_w1, p.conv1.weights)) < 1e-6


def test_nonfinite_input_raises():
    p = nn.ConvParams(weights=np.ones((1, 1, 3, 3)), bias=np.zeros(1))
    x = np.ones((1, 1, 4, 4))
    x[0, 0, 0, 0] = np.inf
    with pytest.raises(NumericError):
        nn.conv2d_forward(x, p)


def test_tree_walkers():
    rng = np.random.default_rng(13)
    p = nn.init_rdn(rng, channels=2, b_layers=2)
    paths = [path for path, _ in tree.iter_arrays(p)]
    assert paths[0] == "layers.0.weights"
    assert paths[-1] == "fusion.bias"
    assert tree.n_params(p) == sum(a.size for _, a in tree.iter_arrays(p))

    z = tree.zeros_like(p)
    assert all(not a.any() for _, a in tree.iter_arrays(z))
    c = tree.clone(p)
    tree.add_in_place(c, p)
    for _, a, b in tree.zip_arrays(c, p):
        assert np.allclose(a, 2 * b)
    tree.scale_in_place(c, 0.5)
    for _, a, b in tree.zip_arrays(c, p):
        assert np.allclose(a, b)
    assert tree.global_norm(z) == 0.0
