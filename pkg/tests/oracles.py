"""Independent brute-force oracles the test suite checks the package against.

Everything here is written for clarity, not speed: quadruple loops, per-window
scans, scalar math. None of it shares code with the package.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_oracle(x, kernels, bias, stride=1, padding=0):
    """Naive quadruple-loop cross-correlation over [C,H,W] input."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    c_in, h, w = x.shape
    c_out, _, k, _ = kernels.shape
    padded = np.zeros((c_in, h + 2 * padding, w + 2 * padding))
    padded[:, padding:padding + h, padding:padding + w] = x
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, out_h, out_w))
    for o in range(c_out):
        for i in range(out_h):
            for j in range(out_w):
                acc = 0.0
                for c in range(c_in):
                    for u in range(k):
                        for v in range(k):
                            acc += kernels[o, c, u, v] * padded[c, i * stride + u, j * stride + v]
                out[o, i, j] = acc + bias[o]
    return out


def spatial_sum_oracle(x):
    x = np.asarray(x, dtype=np.float64)
    n, h, w = x.shape
    out = np.zeros(n)
    for c in range(n):
        for i in range(h):
            for j in range(w):
                out[c] += x[c, i, j]
    return out


def softmax_oracle(z):
    z = [float(v) for v in z]
    m = max(z)
    exps = [math.exp(v - m) for v in z]
    total = sum(exps)
    return np.array([e / total for e in exps])


def window_max_oracle(channel, w):
    """Per-position max over a w x w window clipped at the borders."""
    channel = np.asarray(channel, dtype=np.float64)
    h, ww = channel.shape
    r = w // 2
    out = np.empty_like(channel)
    for i in range(h):
        for j in range(ww):
            lo_i, hi_i = max(0, i - r), min(h, i + r + 1)
            lo_j, hi_j = max(0, j - r), min(ww, j + r + 1)
            out[i, j] = channel[lo_i:hi_i, lo_j:hi_j].max()
    return out


def local_max_select_oracle(x, w):
    """Retain values equal to their clipped-window max, per channel."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for c in range(x.shape[0]):
        wmax = window_max_oracle(x[c], w)
        out[c] = np.where(x[c] == wmax, x[c], 0.0)
    return out


def strict_peak_mask_oracle(channel, w):
    """1 where the value strictly exceeds every other value in its clipped window."""
    channel = np.asarray(channel, dtype=np.float64)
    h, ww = channel.shape
    r = w // 2
    mask = np.zeros((h, ww), dtype=bool)
    for i in range(h):
        for j in range(ww):
            is_peak = True
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    if di == 0 and dj == 0:
                        continue
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < ww and channel[ni, nj] >= channel[i, j]:
                        is_peak = False
            mask[i, j] = is_peak
    return mask


def window_mean_oracle(channel, w):
    """Mean over the clipped w x w window at every position."""
    channel = np.asarray(channel, dtype=np.float64)
    h, ww = channel.shape
    r = w // 2
    out = np.empty_like(channel)
    for i in range(h):
        for j in range(ww):
            lo_i, hi_i = max(0, i - r), min(h, i + r + 1)
            lo_j, hi_j = max(0, j - r), min(ww, j + r + 1)
            patch = channel[lo_i:hi_i, lo_j:hi_j]
            out[i, j] = patch.sum() / patch.size
    return out


def cacpr_oracle(x, peak_w, context_w):
    """Strict-peak stimulation modulated by sigmoid of the clipped context mean."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for c in range(x.shape[0]):
        peaks = strict_peak_mask_oracle(x[c], peak_w)
        ctx = window_mean_oracle(x[c], context_w)
        kappa = 1.0 / (1.0 + np.exp(-ctx))
        out[c] = x[c] * peaks * kappa
    return out


def adam_scalar_oracle(x0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook scalar Adam, used to pin down the package optimizer."""
    x = float(x0)
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x -= lr * m_hat / (math.sqrt(v_hat) + eps)
    return x


def bilinear_resize_oracle(channel, out_h, out_w):
    """Scalar bilinear resampling with half-pixel centers."""
    channel = np.asarray(channel, dtype=np.float64)
    h, w = channel.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sy = (i + 0.5) * h / out_h - 0.5
            sx = (j + 0.5) * w / out_w - 0.5
            y0 = int(math.floor(sy))
            x0 = int(math.floor(sx))
            dy, dx = sy - y0, sx - x0
            y0c, y1c = min(max(y0, 0), h - 1), min(max(y0 + 1, 0), h - 1)
            x0c, x1c = min(max(x0, 0), w - 1), min(max(x0 + 1, 0), w - 1)
            out[i, j] = (
                channel[y0c, x0c] * (1 - dy) * (1 - dx)
                + channel[y0c, x1c] * (1 - dy) * dx
                + channel[y1c, x0c] * dy * (1 - dx)
                + channel[y1c, x1c] * dy * dx
            )
    return out
