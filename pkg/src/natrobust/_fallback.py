"""Numpy implementations of the pixel kernels.

Used when the compiled ``_kernels`` extension is unavailable. Each function
mirrors the arithmetic order of its compiled counterpart so both backends
produce identical floats.
"""

import numpy as np


def linf_u8(a, b):
    if a.size == 0:
        return 0
    return int(np.max(np.abs(a.astype(np.int16) - b.astype(np.int16))))


def blur_separable(img, kernel):
    taps = kernel.shape[0]
    r = taps // 2
    h, w, _ = img.shape
    padded = np.pad(img, ((0, 0), (r, r), (0, 0)), mode="edge")
    tmp = np.zeros_like(img)
    for t in range(taps):
        tmp = tmp + kernel[t] * padded[:, t:t + w, :]
    padded = np.pad(tmp, ((r, r), (0, 0), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for t in range(taps):
        out = out + kernel[t] * padded[t:t + h, :, :]
    return out


def resize_bilinear(img, y0, y1, wy0, wy1, x0, x1, wx0, wx1):
    top_rows = img[y0]
    bot_rows = img[y1]
    wx0 = wx0[None, :, None]
    wx1 = wx1[None, :, None]
    top = wx0 * top_rows[:, x0] + wx1 * top_rows[:, x1]
    bot = wx0 * bot_rows[:, x0] + wx1 * bot_rows[:, x1]
    return wy0[:, None, None] * top + wy1[:, None, None] * bot


def resize_box(img, yidx, yw, xidx, xw):
    h, _, c = img.shape
    tmp = np.zeros((h, xidx.shape[0], c))
    for t in range(xidx.shape[1]):
        tmp = tmp + xw[:, t][None, :, None] * img[:, xidx[:, t], :]
    out = np.zeros((yidx.shape[0], xidx.shape[0], c))
    for t in range(yidx.shape[1]):
        out = out + yw[:, t][:, None, None] * tmp[yidx[:, t], :, :]
    return out


def rgb_to_hsv(rgb):
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    c = mx - mn
    s = np.where(mx > 0.0, c / np.where(mx > 0.0, mx, 1.0), 0.0)
    cs = np.where(c == 0.0, 1.0, c)
    hr = (g - b) / cs
    hr = 60.0 * np.where(hr < 0.0, hr + 6.0, hr)
    hg = 60.0 * ((b - r) / cs + 2.0)
    hb = 60.0 * ((r - g) / cs + 4.0)
    h = np.where(c == 0.0, 0.0, np.where(mx == r, hr, np.where(mx == g, hg, hb)))
    h = np.where(h >= 360.0, h - 360.0, h)
    return np.stack([h, s, mx], axis=1)


def hsv_to_rgb(hsv):
    h = np.fmod(hsv[:, 0], 360.0)
    h = np.where(h < 0.0, h + 360.0, h)
    h = np.where(h >= 360.0, h - 360.0, h)
    s = np.clip(hsv[:, 1], 0.0, 1.0)
    v = np.clip(hsv[:, 2], 0.0, 1.0)
    c = v * s
    hp = h / 60.0
    x = c * (1.0 - np.abs(np.fmod(hp, 2.0) - 1.0))
    m = v - c
    sector = np.minimum(np.floor(hp).astype(np.int64), 5)
    zero = np.zeros_like(c)
    r = np.choose(sector, [c, x, zero, zero, x, c])
    g = np.choose(sector, [x, c, c, x, zero, zero])
    b = np.choose(sector, [zero, zero, x, c, c, x])
    return np.stack([r + m, g + m, b + m], axis=1)
