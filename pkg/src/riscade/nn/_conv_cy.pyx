# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels: direct correlation over a padded copy.

Same contract as _conv_py: conv2d_forward_kernel / conv2d_backward_kernel
on contiguous (B, C, H, W) inputs and (O, C, kh, kw) weights. The input is
padded once so inner loops run over full rows without bounds branches.
The 3x3 stride-1 case (every conv in the estimators except the strided
discriminator stages) fuses all nine taps into one pass per output row,
nine FMAs per store, which is what lets the C compiler vectorize this past
the im2col+GEMM fallback.
"""
import numpy as np

cimport numpy as cnp
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy, memset

NAME = "cython"


def _pad(x, Py_ssize_t pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    nb, c, h, w = x.shape
    xp = np.zeros((nb, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + w] = x
    return xp


def conv2d_forward_kernel(x_in, w_in, int stride, int pad):
    cdef Py_ssize_t nb = x_in.shape[0], c = x_in.shape[1]
    cdef Py_ssize_t h = x_in.shape[2], wd = x_in.shape[3]
    cdef Py_ssize_t o = w_in.shape[0], kh = w_in.shape[2]
    cdef Py_ssize_t kw = w_in.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    xp_arr = _pad(x_in, pad)
    out_arr = np.zeros((nb, o, ho, wo))
    cdef const double[:, :, :, ::1] xp = xp_arr
    cdef const double[:, :, :, ::1] w = np.ascontiguousarray(w_in)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t s, oc, ic, y, i, j, xo
    cdef double wv, w00, w01, w02, w10, w11, w12, w20, w21, w22
    cdef const double *r0
    cdef const double *r1
    cdef const double *r2
    cdef const double *ip
    cdef double *op

    if kh == 3 and kw == 3 and stride == 1:
        with nogil:
            for s in range(nb):
                for oc in range(o):
                    for ic in range(c):
                        w00 = w[oc, ic, 0, 0]; w01 = w[oc, ic, 0, 1]
                        w02 = w[oc, ic, 0, 2]; w10 = w[oc, ic, 1, 0]
                        w11 = w[oc, ic, 1, 1]; w12 = w[oc, ic, 1, 2]
                        w20 = w[oc, ic, 2, 0]; w21 = w[oc, ic, 2, 1]
                        w22 = w[oc, ic, 2, 2]
                        for y in range(ho):
                            op = &out[s, oc, y, 0]
                            r0 = &xp[s, ic, y, 0]
                            r1 = &xp[s, ic, y + 1, 0]
                            r2 = &xp[s, ic, y + 2, 0]
                            for xo in range(wo):
                                op[xo] += (
                                    w00 * r0[xo] + w01 * r0[xo + 1]
                                    + w02 * r0[xo + 2]
                                    + w10 * r1[xo] + w11 * r1[xo + 1]
                                    + w12 * r1[xo + 2]
                                    + w20 * r2[xo] + w21 * r2[xo + 1]
                                    + w22 * r2[xo + 2])
        return out_arr

    with nogil:
        for s in range(nb):
            for oc in range(o):
                for ic in range(c):
                    for y in range(ho):
                        op = &out[s, oc, y, 0]
                        for i in range(kh):
                            for j in range(kw):
                                wv = w[oc, ic, i, j]
                                ip = &xp[s, ic, y * stride + i, j]
                                if stride == 1:
                                    for xo in range(wo):
                                        op[xo] += wv * ip[xo]
                                else:
                                    for xo in range(wo):
                                        op[xo] += wv * ip[xo * stride]
    return out_arr


def conv2d_backward_kernel(x_in, w_in, d_out_in, int stride, int pad):
    cdef Py_ssize_t nb = x_in.shape[0], c = x_in.shape[1]
    cdef Py_ssize_t h = x_in.shape[2], wd = x_in.shape[3]
    cdef Py_ssize_t o = w_in.shape[0], kh = w_in.shape[2]
    cdef Py_ssize_t kw = w_in.shape[3]
    cdef Py_ssize_t ho = d_out_in.shape[2], wo = d_out_in.shape[3]
    xp_arr = _pad(x_in, pad)
    cdef Py_ssize_t hp = h + 2 * pad, wp = wd + 2 * pad
    dxp_arr = np.zeros((nb, c, hp, wp))
    dw_arr = np.zeros((o, c, kh, kw))
    cdef const double[:, :, :, ::1] xp = xp_arr
    cdef const double[:, :, :, ::1] w = np.ascontiguousarray(w_in)
    cdef const double[:, :, :, ::1] g = np.ascontiguousarray(d_out_in)
    cdef double[:, :, :, ::1] dxp = dxp_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t s, oc, ic, y, i, j, xo
    cdef double wv, acc, gv, gg0, gg1, gg2
    cdef double w00, w01, w02, w10, w11, w12, w20, w21, w22
    cdef double a00, a01, a02, a10, a11, a12, a20, a21, a22
    cdef const double *ip
    cdef const double *gp
    cdef const double *r0
    cdef const double *r1
    cdef const double *r2
    cdef double *d0
    cdef double *d1
    cdef double *d2
    cdef double *dp
    cdef double *gpad

    if kh == 3 and kw == 3 and stride == 1:
        # gpad holds one zero-extended gradient row: gpad[k + 2] = gp[k],
        # so dxp[row][t] += sum_j w[i, j] * gp[t - j] reads gpad[t + 2 - j]
        gpad = <double *> malloc((wo + 4) * sizeof(double))
        if gpad == NULL:
            raise MemoryError("conv backward scratch row")
        with nogil:
            memset(gpad, 0, (wo + 4) * sizeof(double))
            for s in range(nb):
                for oc in range(o):
                    for y in range(ho):
                        gp = &g[s, oc, y, 0]
                        memcpy(gpad + 2, gp, wo * sizeof(double))
                        for ic in range(c):
                            r0 = &xp[s, ic, y, 0]
                            r1 = &xp[s, ic, y + 1, 0]
                            r2 = &xp[s, ic, y + 2, 0]
                            a00 = 0.0; a01 = 0.0; a02 = 0.0
                            a10 = 0.0; a11 = 0.0; a12 = 0.0
                            a20 = 0.0; a21 = 0.0; a22 = 0.0
                            for xo in range(wo):
                                gv = gp[xo]
                                a00 += gv * r0[xo]
                                a01 += gv * r0[xo + 1]
                                a02 += gv * r0[xo + 2]
                                a10 += gv * r1[xo]
                                a11 += gv * r1[xo + 1]
                                a12 += gv * r1[xo + 2]
                                a20 += gv * r2[xo]
                                a21 += gv * r2[xo + 1]
                                a22 += gv * r2[xo + 2]
                            dw[oc, ic, 0, 0] += a00
                            dw[oc, ic, 0, 1] += a01
                            dw[oc, ic, 0, 2] += a02
                            dw[oc, ic, 1, 0] += a10
                            dw[oc, ic, 1, 1] += a11
                            dw[oc, ic, 1, 2] += a12
                            dw[oc, ic, 2, 0] += a20
                            dw[oc, ic, 2, 1] += a21
                            dw[oc, ic, 2, 2] += a22
                            w00 = w[oc, ic, 0, 0]; w01 = w[oc, ic, 0, 1]
                            w02 = w[oc, ic, 0, 2]; w10 = w[oc, ic, 1, 0]
                            w11 = w[oc, ic, 1, 1]; w12 = w[oc, ic, 1, 2]
                            w20 = w[oc, ic, 2, 0]; w21 = w[oc, ic, 2, 1]
                            w22 = w[oc, ic, 2, 2]
                            d0 = &dxp[s, ic, y, 0]
                            d1 = &dxp[s, ic, y + 1, 0]
                            d2 = &dxp[s, ic, y + 2, 0]
                            for xo in range(wp):
                                gg0 = gpad[xo + 2]
                                gg1 = gpad[xo + 1]
                                gg2 = gpad[xo]
                                d0[xo] += w00 * gg0 + w01 * gg1 + w02 * gg2
                                d1[xo] += w10 * gg0 + w11 * gg1 + w12 * gg2
                                d2[xo] += w20 * gg0 + w21 * gg1 + w22 * gg2
            free(gpad)
        if pad == 0:
            return (np.ascontiguousarray(dxp_arr), dw_arr)
        return (np.ascontiguousarray(
            dxp_arr[:, :, pad:pad + h, pad:pad + wd]), dw_arr)

    with nogil:
        for s in range(nb):
            for oc in range(o):
                for ic in range(c):
                    for y in range(ho):
                        gp = &g[s, oc, y, 0]
                        for i in range(kh):
                            for j in range(kw):
                                wv = w[oc, ic, i, j]
                                ip = &xp[s, ic, y * stride + i, j]
                                dp = &dxp[s, ic, y * stride + i, j]
                                acc = 0.0
                                if stride == 1:
                                    for xo in range(wo):
                                        gv = gp[xo]
                                        acc += gv * ip[xo]
                                        dp[xo] += gv * wv
                                else:
                                    for xo in range(wo):
                                        gv = gp[xo]
                                        acc += gv * ip[xo * stride]
                                        dp[xo * stride] += gv * wv
                                dw[oc, ic, i, j] += acc
    if pad == 0:
        return dxp_arr, dw_arr
    return np.ascontiguousarray(dxp_arr[:, :, pad:pad + h, pad:pad + wd]), \
        dw_arr
