# cython: language_level=3
"""Compiled pixel kernels.

Every routine here has a numpy twin in ``_fallback.py`` that evaluates the
same arithmetic in the same order; the two must agree bit for bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, fmod

cnp.import_array()


def linf_u8(const cnp.uint8_t[:, :, ::1] a, const cnp.uint8_t[:, :, ::1] b):
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1], c = a.shape[2]
    cdef Py_ssize_t y, x, k
    cdef int d, best = 0
    for y in range(h):
        for x in range(w):
            for k in range(c):
                d = <int>a[y, x, k] - <int>b[y, x, k]
                if d < 0:
                    d = -d
                if d > best:
                    best = d
                    if best == 255:
                        return best
    return best


def blur_separable(const double[:, :, ::1] img, const double[::1] kernel):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t taps = kernel.shape[0]
    cdef Py_ssize_t r = taps // 2
    cdef Py_ssize_t y, x, k, t, src
    cdef double acc
    tmp_arr = np.empty((h, w, c), dtype=np.float64)
    out_arr = np.empty((h, w, c), dtype=np.float64)
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] out = out_arr

    for y in range(h):
        for x in range(w):
            for k in range(c):
                acc = 0.0
                for t in range(taps):
                    src = x + t - r
                    if src < 0:
                        src = 0
                    elif src >= w:
                        src = w - 1
                    acc = acc + kernel[t] * img[y, src, k]
                tmp[y, x, k] = acc
    for y in range(h):
        for x in range(w):
            for k in range(c):
                acc = 0.0
                for t in range(taps):
                    src = y + t - r
                    if src < 0:
                        src = 0
                    elif src >= h:
                        src = h - 1
                    acc = acc + kernel[t] * tmp[src, x, k]
                out[y, x, k] = acc
    return out_arr


def resize_bilinear(const double[:, :, ::1] img,
                    const cnp.intp_t[::1] y0, const cnp.intp_t[::1] y1,
                    const double[::1] wy0, const double[::1] wy1,
                    const cnp.intp_t[::1] x0, const cnp.intp_t[::1] x1,
                    const double[::1] wx0, const double[::1] wx1):
    cdef Py_ssize_t oh = y0.shape[0], ow = x0.shape[0], c = img.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double top, bot
    out_arr = np.empty((oh, ow, c), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for i in range(oh):
        for j in range(ow):
            for k in range(c):
                top = wx0[j] * img[y0[i], x0[j], k] + wx1[j] * img[y0[i], x1[j], k]
                bot = wx0[j] * img[y1[i], x0[j], k] + wx1[j] * img[y1[i], x1[j], k]
                out[i, j, k] = wy0[i] * top + wy1[i] * bot
    return out_arr


def resize_box(const double[:, :, ::1] img,
               const cnp.intp_t[:, ::1] yidx, const double[:, ::1] yw,
               const cnp.intp_t[:, ::1] xidx, const double[:, ::1] xw):
    cdef Py_ssize_t h = img.shape[0], c = img.shape[2]
    cdef Py_ssize_t oh = yidx.shape[0], ow = xidx.shape[0]
    cdef Py_ssize_t ny = yidx.shape[1], nx = xidx.shape[1]
    cdef Py_ssize_t y, i, j, k, t
    cdef double acc
    tmp_arr = np.empty((h, ow, c), dtype=np.float64)
    out_arr = np.empty((oh, ow, c), dtype=np.float64)
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] out = out_arr
    for y in range(h):
        for j in range(ow):
            for k in range(c):
                acc = 0.0
                for t in range(nx):
                    acc = acc + xw[j, t] * img[y, xidx[j, t], k]
                tmp[y, j, k] = acc
    for i in range(oh):
        for j in range(ow):
            for k in range(c):
                acc = 0.0
                for t in range(ny):
                    acc = acc + yw[i, t] * tmp[yidx[i, t], j, k]
                out[i, j, k] = acc
    return out_arr


def rgb_to_hsv(const double[:, ::1] rgb):
    cdef Py_ssize_t n = rgb.shape[0], i
    cdef double r, g, b, mx, mn, c, h, s
    out_arr = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        r = rgb[i, 0]
        g = rgb[i, 1]
        b = rgb[i, 2]
        mx = r
        if g > mx:
            mx = g
        if b > mx:
            mx = b
        mn = r
        if g < mn:
            mn = g
        if b < mn:
            mn = b
        c = mx - mn
        if mx > 0.0:
            s = c / mx
        else:
            s = 0.0
        if c == 0.0:
            h = 0.0
        elif mx == r:
            h = (g - b) / c
            if h < 0.0:
                h = h + 6.0
            h = 60.0 * h
        elif mx == g:
            h = 60.0 * ((b - r) / c + 2.0)
        else:
            h = 60.0 * ((r - g) / c + 4.0)
        if h >= 360.0:
            h = h - 360.0
        out[i, 0] = h
        out[i, 1] = s
        out[i, 2] = mx
    return out_arr


def hsv_to_rgb(const double[:, ::1] hsv):
    cdef Py_ssize_t n = hsv.shape[0], i
    cdef int sector
    cdef double h, s, v, c, hp, x, m, r, g, b
    out_arr = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        h = fmod(hsv[i, 0], 360.0)
        if h < 0.0:
            h = h + 360.0
        if h >= 360.0:
            h = h - 360.0
        s = hsv[i, 1]
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
        v = hsv[i, 2]
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        c = v * s
        hp = h / 60.0
        x = c * (1.0 - fabs(fmod(hp, 2.0) - 1.0))
        m = v - c
        sector = <int>floor(hp)
        if sector > 5:
            sector = 5
        if sector == 0:
            r = c; g = x; b = 0.0
        elif sector == 1:
            r = x; g = c; b = 0.0
        elif sector == 2:
            r = 0.0; g = c; b = x
        elif sector == 3:
            r = 0.0; g = x; b = c
        elif sector == 4:
            r = x; g = 0.0; b = c
        else:
            r = c; g = 0.0; b = x
        out[i, 0] = r + m
        out[i, 1] = g + m
        out[i, 2] = b + m
    return out_arr
