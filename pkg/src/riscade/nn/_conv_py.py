"""Pure-numpy convolution kernels (im2col over a sliding-window view).

Fallback backend used when the compiled extension is unavailable. Both
backends implement the same two entry points on contiguous float64 arrays:

    conv2d_forward_kernel(x, w, stride, pad) -> out
    conv2d_backward_kernel(x, w, d_out, stride, pad) -> (dx, dw)

with x: (B, C, H, W), w: (O, C, kh, kw), out/d_out: (B, O, Ho, Wo).
Bias handling and shape validation live in the caller.
"""
import numpy as np

NAME = "python"


def _windows(x, kh, kw, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward_kernel(x, w, stride, pad):
    b = x.shape[0]
    o, c, kh, kw = w.shape
    win = _windows(x, kh, kw, stride, pad)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    out = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(
        out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward_kernel(x, w, d_out, stride, pad):
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = d_out.shape[2], d_out.shape[3]
    win = _windows(x, kh, kw, stride, pad)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    dmat = d_out.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)

    dw = (dmat.T @ cols).reshape(o, c, kh, kw)

    # scatter the column gradients back onto the (padded) input
    dcols = (dmat @ w.reshape(o, -1)).reshape(b, ho, wo, c, kh, kw)
    dxp = np.zeros((b, c, h + 2 * pad, wd + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dxp = dxp[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(dxp), dw
