"""Per-pixel compositing loops. Rows run in parallel; every output slot is
owned by exactly one row so results do not depend on the thread count."""

import os

import numba
import numpy as np
from numba import njit, prange

# the installed TBB is too old for numba; pick OpenMP up front instead of
# letting numba probe TBB and warn on every process start
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

SKIP_SIGMA = 1.0 / 255.0
MIN_TRANSMITTANCE = 1e-4
DEPTH_EPS = 1e-6


@njit(cache=True, inline="always")
def _in_box(px, py, box):
    return box[0] <= px <= box[1] and box[2] <= py <= box[3]


@njit(parallel=True, cache=True)
def composite_forward(height, width, means, conics, opac, colors, depths, boxes, bg, far):
    color = np.empty((height, width, 3))
    depth = np.empty((height, width))
    alpha = np.empty((height, width))
    m = means.shape[0]
    for row in prange(height):
        py = row + 0.5
        for col in range(width):
            px = col + 0.5
            T = 1.0
            acc = 0.0
            dsum = 0.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            for j in range(m):
                if not _in_box(px, py, boxes[j]):
                    continue
                dx = px - means[j, 0]
                dy = py - means[j, 1]
                power = -0.5 * (conics[j, 0] * dx * dx + conics[j, 2] * dy * dy) - conics[j, 1] * dx * dy
                s = opac[j] * np.exp(power)
                if s < SKIP_SIGMA:
                    continue
                test_t = T * (1.0 - s)
                if test_t < MIN_TRANSMITTANCE:
                    break
                w = s * T
                c0 += w * colors[j, 0]
                c1 += w * colors[j, 1]
                c2 += w * colors[j, 2]
                acc += w
                dsum += w * depths[j]
                T = test_t
            color[row, col, 0] = c0 + (1.0 - acc) * bg[0]
            color[row, col, 1] = c1 + (1.0 - acc) * bg[1]
            color[row, col, 2] = c2 + (1.0 - acc) * bg[2]
            alpha[row, col] = acc
            depth[row, col] = dsum / acc if acc >= DEPTH_EPS else far
    return color, depth, alpha


@njit(parallel=True, cache=True)
def composite_backward(height, width, means, conics, opac, colors, depths, boxes, bg, d_color, d_depth):
    """Gradients w.r.t. per-splat 2D quantities, one buffer row per image row.

    Returned buffers have a leading image-row axis; the caller sums it.
    Layout of the last axis: mean x, mean y, conic a, b, c, opacity,
    color r, g, b, depth.
    """
    m = means.shape[0]
    grads = np.zeros((height, m, 10))
    for row in prange(height):
        py = row + 0.5
        idx = np.empty(m, dtype=np.int64)
        sig = np.empty(m)
        trans = np.empty(m)
        kern = np.empty(m)
        for col in range(width):
            px = col + 0.5
            T = 1.0
            acc = 0.0
            dsum = 0.0
            n = 0
            for j in range(m):
                if not _in_box(px, py, boxes[j]):
                    continue
                dx = px - means[j, 0]
                dy = py - means[j, 1]
                power = -0.5 * (conics[j, 0] * dx * dx + conics[j, 2] * dy * dy) - conics[j, 1] * dx * dy
                g = np.exp(power)
                s = opac[j] * g
                if s < SKIP_SIGMA:
                    continue
                test_t = T * (1.0 - s)
                if test_t < MIN_TRANSMITTANCE:
                    break
                idx[n] = j
                sig[n] = s
                trans[n] = T
                kern[n] = g
                n += 1
                acc += s * T
                dsum += s * T * depths[j]
                T = test_t
            if n == 0:
                continue
            gr = d_color[row, col, 0]
            gg = d_color[row, col, 1]
            gb = d_color[row, col, 2]
            gd = d_depth[row, col]
            has_depth = acc >= DEPTH_EPS
            dmean = dsum / acc if has_depth else 0.0
            bgdot = gr * bg[0] + gg * bg[1] + gb * bg[2]
            suffix = 0.0
            for t in range(n - 1, -1, -1):
                j = idx[t]
                s = sig[t]
                w = s * trans[t]
                q = gr * colors[j, 0] + gg * colors[j, 1] + gb * colors[j, 2] - bgdot
                if has_depth:
                    q += gd * (depths[j] - dmean) / acc
                    grads[row, j, 9] += gd * w / acc
                d_sigma = trans[t] * (q - suffix)
                suffix = q * s + (1.0 - s) * suffix
                grads[row, j, 6] += gr * w
                grads[row, j, 7] += gg * w
                grads[row, j, 8] += gb * w
                g = kern[t]
                grads[row, j, 5] += d_sigma * g
                d_power = d_sigma * opac[j] * g
                dx = px - means[j, 0]
                dy = py - means[j, 1]
                grads[row, j, 0] += d_power * (conics[j, 0] * dx + conics[j, 1] * dy)
                grads[row, j, 1] += d_power * (conics[j, 1] * dx + conics[j, 2] * dy)
                grads[row, j, 2] += -0.5 * d_power * dx * dx
                grads[row, j, 3] += -d_power * dx * dy
                grads[row, j, 4] += -0.5 * d_power * dy * dy
    return grads
