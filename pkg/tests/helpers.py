"""Shared numeric test utilities: finite differences and reference convs."""
import numpy as np


def num_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a, n):
    """max over entries of |a - n| / max(|a|, |n|, 1)."""
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom))


def fd_check_tree(loss, params, grads, h=1e-5, max_entries=None, rng=None):
    """Worst rel-err between analytic grads and central differences.

    Perturbs the parameter leaves of `params` in place; `loss` is a no-arg
    closure re-running the forward pass against those same leaves. When
    max_entries is set, that many coordinates per leaf are sampled.
    """
    from riscade.nn import tree

    worst = 0.0
    for _, p_arr, g_arr in tree.zip_arrays(params, grads):
        flat_p = p_arr.reshape(-1)
        flat_g = g_arr.reshape(-1)
        idxs = np.arange(flat_p.size)
        if max_entries is not None and flat_p.size > max_entries:
            idxs = rng.choice(flat_p.size, size=max_entries, replace=False)
        for i in idxs:
            orig = flat_p[i]
            flat_p[i] = orig + h
            fp = loss()
            flat_p[i] = orig - h
            fm = loss()
            flat_p[i] = orig
            num = (fp - fm) / (2.0 * h)
            rel = abs(num - flat_g[i]) / max(abs(num), abs(flat_g[i]), 1.0)
            worst = max(worst, rel)
    return worst


def conv_naive(x, w, b, stride, pad):
    """Six-nested-loop convolution reference (correlation, zero pad)."""
    nb, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((nb, o, ho, wo))
    for s in range(nb):
        for oc in range(o):
            for y in range(ho):
                for xo in range(wo):
                    acc = b[oc]
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (w[oc, ic, i, j]
                                        * xp[s, ic, y * stride + i,
                                             xo * stride + j])
                    out[s, oc, y, xo] = acc
    return out
