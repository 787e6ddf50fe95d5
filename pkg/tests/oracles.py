"""Independent reference implementations used as test oracles.

Written without sharing code with the package so that agreement means
something: a 2D (non-separable) windowed SSIM built from explicit shifts,
and PSNR from a plain Python sum.
"""

import math

import numpy as np


def brute_ssim(a, b, size=11, sigma=1.5, c1=1e-4, c2=9e-4):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    half = size // 2
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2 * sigma**2))
    w2 = np.outer(g, g) / np.outer(g, g).sum()
    h, w = a.shape[:2]

    def windowed(img):
        pad = np.zeros((h + 2 * half, w + 2 * half) + img.shape[2:])
        pad[half:half + h, half:half + w] = img
        out = np.zeros_like(img)
        for u in range(size):
            for v in range(size):
                out += w2[u, v] * pad[u:u + h, v:v + w]
        return out

    mu_a, mu_b = windowed(a), windowed(b)
    s_aa = windowed(a * a) - mu_a**2
    s_bb = windowed(b * b) - mu_b**2
    s_ab = windowed(a * b) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * s_ab + c2)) / ((mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2))
    return float(smap.mean())


def direct_psnr(a, b):
    flat_a = np.asarray(a, dtype=np.float64).ravel().tolist()
    flat_b = np.asarray(b, dtype=np.float64).ravel().tolist()
    mse = math.fsum((p - q) ** 2 for p, q in zip(flat_a, flat_b)) / len(flat_a)
    return math.inf if mse == 0 else -10.0 * math.log10(mse)


def image_pairs(count=50, seed=0):
    """Seeded pairs of varied size and similarity, all in [0, 1]."""
    rng = np.random.default_rng([seed, 4242])
    pairs = []
    for i in range(count):
        h, w = int(rng.integers(11, 33)), int(rng.integers(11, 33))
        a = rng.uniform(0, 1, (h, w, 3))
        noise = rng.uniform(0.01, 0.5)
        b = np.clip(a + rng.normal(0, noise, a.shape), 0, 1) if i % 2 == 0 else rng.uniform(0, 1, a.shape)
        pairs.append((a, b))
    return pairs
