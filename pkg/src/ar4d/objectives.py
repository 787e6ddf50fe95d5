"""Image losses with gradients w.r.t. the rendered image, plus PSNR/SSIM."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .rasterizer import RenderedFrame, render, render_backward

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
DEPTH_MASK_ALPHA = 0.5
PSNR_CAP_DB = 99.0
DEFAULT_LAMBDA = 0.8


def _check_same(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1_loss(a, b):
    a, b = _check_same(a, b)
    return float(np.mean(np.abs(a - b))), np.sign(a - b) / a.size


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _blur(img: np.ndarray) -> np.ndarray:
    # zero-padded 'same' filtering; with a symmetric window this operator is self-adjoint
    g = gaussian_window()
    out = correlate1d(img, g, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, g, axis=1, mode="constant", cval=0.0)


def ssim(a, b, with_grad: bool = False):
    """Mean SSIM over pixels and channels for images in [0, 1].

    With ``with_grad`` returns (ssim, d ssim / d a).
    """
    a, b = _check_same(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    mu_a, mu_b = _blur(a), _blur(b)
    e_aa, e_bb, e_ab = _blur(a * a), _blur(b * b), _blur(a * b)
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    num1 = 2 * mu_a * mu_b + SSIM_C1
    num2 = 2 * cov + SSIM_C2
    den1 = mu_a**2 + mu_b**2 + SSIM_C1
    den2 = var_a + var_b + SSIM_C2
    smap = num1 * num2 / (den1 * den2)
    value = float(smap.mean())
    if not with_grad:
        return value
    scale = 1.0 / smap.size
    d_num1 = scale * num2 / (den1 * den2)
    d_num2 = scale * num1 / (den1 * den2)
    d_den1 = -scale * smap / den1
    d_den2 = -scale * smap / den2
    # partials w.r.t. the filtered moments mu_a, E[a^2], E[ab]
    g_mu = 2 * mu_b * d_num1 - 2 * mu_b * d_num2 + 2 * mu_a * d_den1 - 2 * mu_a * d_den2
    g_aa = d_den2
    g_ab = 2 * d_num2
    grad = _blur(g_mu) + 2 * a * _blur(g_aa) + b * _blur(g_ab)
    return value, grad


def dssim_loss(a, b):
    value, grad = ssim(a, b, with_grad=True)
    return 1.0 - value, -grad


def reference_loss(rendered, target, lam: float = DEFAULT_LAMBDA):
    """lam * L1 + (1 - lam) * (1 - SSIM)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    l1, d_l1 = l1_loss(rendered, target)
    if lam == 1.0:
        return l1, d_l1
    ds, d_ds = dssim_loss(rendered, target)
    return lam * l1 + (1.0 - lam) * ds, lam * d_l1 + (1.0 - lam) * d_ds


def masked_depth_l1(depth, target_depth, mask):
    depth, target_depth = _check_same(depth, target_depth)
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(depth)
    diff = depth - target_depth
    return float(np.abs(diff[mask]).sum() / count), np.sign(diff) * mask / count


def pseudo_losses(rendered: RenderedFrame, pseudo: RenderedFrame):
    """(l_rgb, l_depth, d_color, d_depth); the pseudo render is a constant target."""
    l_rgb, d_color = l1_loss(rendered.color, pseudo.color)
    mask = (rendered.accum_alpha > DEPTH_MASK_ALPHA) | (pseudo.accum_alpha > DEPTH_MASK_ALPHA)
    l_depth, d_depth = masked_depth_l1(rendered.depth, pseudo.depth, mask)
    return l_rgb, l_depth, d_color, d_depth


def refinement_losses(refined, stage2, ref_camera, sampled_camera, background=(0.0, 0.0, 0.0)):
    """Reference-view color L1 and sampled-view masked depth L1 between a
    refined cloud and its frozen stage-2 target.

    Returns (l_ref_re, l_depth_re, RenderGradients for ``refined``).
    """
    ref_pred = render(refined, ref_camera, background)
    ref_tgt = render(stage2, ref_camera, background)
    l_ref, d_color = l1_loss(ref_pred.color, ref_tgt.color)
    grads = render_backward(refined, ref_camera, background, d_color)

    samp_pred = render(refined, sampled_camera, background)
    samp_tgt = render(stage2, sampled_camera, background)
    mask = (samp_pred.accum_alpha > DEPTH_MASK_ALPHA) | (samp_tgt.accum_alpha > DEPTH_MASK_ALPHA)
    l_depth, d_depth = masked_depth_l1(samp_pred.depth, samp_tgt.depth, mask)
    if l_depth > 0.0:
        grads = grads + render_backward(refined, sampled_camera, background, np.zeros_like(samp_pred.color), d_depth)
    return l_ref, l_depth, grads


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images give inf."""
    a, b = _check_same(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def capped_psnr(a, b) -> float:
    return min(psnr(a, b), PSNR_CAP_DB)


LOSS_TERMS = ("l_ref", "l_rgb", "l_depth", "l_ref_re", "l_depth_re")


@dataclass
class LossReport:
    step: int
    total: float = 0.0
    l_ref: float = 0.0
    l_rgb: float = 0.0
    l_depth: float = 0.0
    l_ref_re: float = 0.0
    l_depth_re: float = 0.0

    @staticmethod
    def csv_header() -> str:
        return ",".join(("step",) + LOSS_TERMS + ("total",))

    def csv_line(self) -> str:
        values = asdict(self)
        return ",".join([str(self.step)] + [repr(float(values[k])) for k in LOSS_TERMS + ("total",)])

    def is_finite(self) -> bool:
        return all(np.isfinite(getattr(self, k)) for k in LOSS_TERMS + ("total",))
