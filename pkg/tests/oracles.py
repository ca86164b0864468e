"""Slow, loop-based reference computations used as independent test oracles."""
import math

import numpy as np

GRID = -1.0 + 2.0 * np.arange(256) / 255.0


def gradient_oracle(img):
    """img: (C, H, W) float64 -> (1, H, W) by explicit loops with clamped indices."""
    c, h, w = img.shape
    out = np.zeros((1, h, w))
    for y in range(h):
        for x in range(w):
            gx = gy = 0.0
            for ch in range(c):
                gx += img[ch, y, min(x + 1, w - 1)] - img[ch, y, max(x - 1, 0)]
                gy += img[ch, min(y + 1, h - 1), x] - img[ch, max(y - 1, 0), x]
            gx /= c
            gy /= c
            out[0, y, x] = math.sqrt(gx * gx + gy * gy)
    return out


def downscale_oracle(img, f):
    c, h, w = img.shape
    out = np.zeros((c, h // f, w // f))
    for ch in range(c):
        for i in range(h // f):
            for j in range(w // f):
                total = 0.0
                for di in range(f):
                    for dj in range(f):
                        total += img[ch, i * f + di, j * f + dj]
                out[ch, i, j] = total / (f * f)
    return out


def nearest_level(v):
    return GRID[np.argmin(np.abs(GRID - v))]


def constraint_oracle(fake, lr, f, eps):
    small = downscale_oracle(fake, f)
    c, h, w = lr.shape
    r = 2.0 / 255.0
    out = np.zeros((1, h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for ch in range(c):
                d = abs(nearest_level(small[ch, i, j]) - nearest_level(lr[ch, i, j])) / r
                acc += max(d - eps, 0.0)
            out[0, i, j] = acc / c
    return out


def gaussian_window_oracle(size=11, sigma=1.5):
    w = np.zeros((size, size))
    half = (size - 1) / 2
    for i in range(size):
        for j in range(size):
            w[i, j] = math.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def ssim_oracle(a, b, size=11, sigma=1.5, data_range=2.0):
    """a, b: (C, H, W). Naive sliding window over valid positions."""
    w = gaussian_window_oracle(size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for ch in range(a.shape[0]):
        for y in range(a.shape[1] - size + 1):
            for x in range(a.shape[2] - size + 1):
                pa = a[ch, y:y + size, x:x + size]
                pb = b[ch, y:y + size, x:x + size]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - ma) ** 2).sum()
                vb = (w * (pb - mb) ** 2).sum()
                cov = (w * (pa - ma) * (pb - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                            / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def softplus(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def finite_difference_r1(logit_fn, inputs, h=1e-6):
    """0.5 * batch-mean squared norm of d(sum logits)/d(inputs), by central differences.

    ``inputs`` is a list of float64 numpy arrays with a shared leading batch axis.
    """
    batch = inputs[0].shape[0]
    sq = np.zeros(batch)
    for k, x in enumerate(inputs):
        grad = np.zeros_like(x)
        it = np.nditer(x, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = x[idx]
            x[idx] = orig + h
            up = logit_fn(inputs)
            x[idx] = orig - h
            down = logit_fn(inputs)
            x[idx] = orig
            grad[idx] = (up - down) / (2 * h)
        sq += (grad.reshape(batch, -1) ** 2).sum(axis=1)
    return 0.5 * sq.mean()
