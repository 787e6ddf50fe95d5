"""Differentiable Gaussian splat renderer: projection, compositing, and the
analytic backward pass back to cloud parameters."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .scene import GaussianCloud, OrbitCamera, RenderedFrame, quat_to_rotmat, sigmoid

COV2D_REG = 0.3
SKIP_SIGMA = _kernels.SKIP_SIGMA
MIN_TRANSMITTANCE = _kernels.MIN_TRANSMITTANCE
DEPTH_EPS = _kernels.DEPTH_EPS


class RenderDegeneracyError(RuntimeError):
    pass


def _apply_thread_cap():
    cap = os.environ.get("AR4D_THREADS")
    if cap:
        import numba

        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))


_apply_thread_cap()


@dataclass
class Splat2D:
    center_px: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    color: np.ndarray
    source_index: int


@dataclass
class RenderGradients:
    d_positions: np.ndarray
    d_opacity_logits: np.ndarray
    d_log_scales: np.ndarray
    d_rotations: np.ndarray
    d_colors: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "RenderGradients":
        return cls(np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)))

    def __add__(self, other: "RenderGradients") -> "RenderGradients":
        return RenderGradients(
            self.d_positions + other.d_positions,
            self.d_opacity_logits + other.d_opacity_logits,
            self.d_log_scales + other.d_log_scales,
            self.d_rotations + other.d_rotations,
            self.d_colors + other.d_colors,
        )

    def scaled(self, factor: float) -> "RenderGradients":
        return RenderGradients(*(factor * g for g in self.as_tuple()))

    def as_tuple(self):
        return (self.d_positions, self.d_opacity_logits, self.d_log_scales, self.d_rotations, self.d_colors)

    def as_dict(self) -> dict[str, np.ndarray]:
        names = ("positions", "opacity_logits", "log_scales", "rotations", "colors")
        return dict(zip(names, self.as_tuple()))


@dataclass
class _Projection:
    """Sorted, culled splats plus the intermediates the backward pass reuses."""

    order: np.ndarray  # source indices, depth-sorted
    means2d: np.ndarray
    cov2d: np.ndarray  # regularized
    conics: np.ndarray  # (a, b, c) of the inverse 2D covariance
    depths: np.ndarray
    opacity: np.ndarray
    colors: np.ndarray
    boxes: np.ndarray
    cam_points: np.ndarray
    jac: np.ndarray
    cov_cam: np.ndarray
    rot: np.ndarray
    scales: np.ndarray


def _project(cloud: GaussianCloud, camera: OrbitCamera) -> _Projection:
    W = camera.world_to_camera
    t = (cloud.positions - camera.position) @ W.T
    z = t[:, 2]
    opacity = sigmoid(cloud.opacity_logits)
    visible = (z > camera.near) & (z < camera.far) & (opacity >= SKIP_SIGMA)
    f = camera.focal
    cx, cy = camera.principal_point

    zs = np.where(visible, z, 1.0)
    means2d = np.stack([f * t[:, 0] / zs + cx, f * t[:, 1] / zs + cy], axis=1)
    jac = np.zeros((cloud.count, 2, 3))
    jac[:, 0, 0] = f / zs
    jac[:, 0, 2] = -f * t[:, 0] / zs**2
    jac[:, 1, 1] = f / zs
    jac[:, 1, 2] = -f * t[:, 1] / zs**2

    rot = quat_to_rotmat(cloud.rotations)
    scales = np.exp(cloud.log_scales)
    M = rot * scales[:, None, :]
    cov3d = M @ M.transpose(0, 2, 1)
    cov_cam = W @ cov3d @ W.T
    cov2d = jac @ cov_cam @ jac.transpose(0, 2, 1) + COV2D_REG * np.eye(2)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    if np.any(visible & ~(det > 0)):
        raise RenderDegeneracyError("projected covariance is singular after regularization")
    det = np.where(visible, det, 1.0)
    conics = np.stack([cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det], axis=1)

    # Axis-aligned box of the ellipse where opacity * kernel >= 1/255. Outside it
    # the splat is skipped anyway, so culling on it is lossless.
    with np.errstate(divide="ignore"):
        reach = 2.0 * np.log(np.maximum(opacity, SKIP_SIGMA) / SKIP_SIGMA)
    half_x = np.sqrt(reach * cov2d[:, 0, 0]) + 1e-6
    half_y = np.sqrt(reach * cov2d[:, 1, 1]) + 1e-6
    boxes = np.stack(
        [means2d[:, 0] - half_x, means2d[:, 0] + half_x, means2d[:, 1] - half_y, means2d[:, 1] + half_y], axis=1
    )
    on_screen = (
        (boxes[:, 1] >= 0.5)
        & (boxes[:, 0] <= camera.image_width - 0.5)
        & (boxes[:, 3] >= 0.5)
        & (boxes[:, 2] <= camera.image_height - 0.5)
    )
    keep = np.flatnonzero(visible & on_screen)
    order = keep[np.lexsort((keep, z[keep]))]

    return _Projection(
        order=order,
        means2d=np.ascontiguousarray(means2d[order]),
        cov2d=cov2d[order],
        conics=np.ascontiguousarray(conics[order]),
        depths=np.ascontiguousarray(z[order]),
        opacity=np.ascontiguousarray(opacity[order]),
        colors=np.ascontiguousarray(np.clip(cloud.colors[order], 0.0, 1.0)),
        boxes=np.ascontiguousarray(boxes[order]),
        cam_points=t[order],
        jac=jac[order],
        cov_cam=cov_cam[order],
        rot=rot[order],
        scales=scales[order],
    )


def project(cloud: GaussianCloud, camera: OrbitCamera) -> list[Splat2D]:
    """Culled 2D splats sorted front to back (ties by source index)."""
    p = _project(cloud, camera)
    return [
        Splat2D(p.means2d[i].copy(), p.cov2d[i].copy(), float(p.depths[i]), float(p.opacity[i]),
                p.colors[i].copy(), int(p.order[i]))
        for i in range(len(p.order))
    ]


def kernel_2d(p, splat: Splat2D) -> float:
    cov = np.asarray(splat.cov2d, dtype=np.float64)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if not det > 0:
        raise RenderDegeneracyError("singular 2D covariance")
    d = np.asarray(p, dtype=np.float64) - splat.center_px
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
    return float(np.exp(-0.5 * d @ inv @ d))


def _background(background) -> np.ndarray:
    return np.broadcast_to(np.asarray(background, dtype=np.float64), (3,)).copy()


def render(cloud: GaussianCloud, camera: OrbitCamera, background=(0.0, 0.0, 0.0)) -> RenderedFrame:
    p = _project(cloud, camera)
    color, depth, alpha = _kernels.composite_forward(
        camera.image_height, camera.image_width, p.means2d, p.conics, p.opacity, p.colors,
        p.depths, p.boxes, _background(background), float(camera.far),
    )
    return RenderedFrame(color, depth, alpha)


def _quat_backward(q: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Chain d/dR back to the raw (unnormalized) quaternion."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = (q / norm).T
    g = d_rot
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    dy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    dz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    d_unit = np.stack([dw, dx, dy, dz], axis=1)
    unit = q / norm
    return (d_unit - unit * np.sum(unit * d_unit, axis=1, keepdims=True)) / norm


def render_backward(cloud: GaussianCloud, camera: OrbitCamera, background, d_color, d_depth=None) -> RenderGradients:
    """Gradients of <d_color, color> + <d_depth, depth> w.r.t. every cloud parameter."""
    h, w = camera.image_height, camera.image_width
    d_color = np.asarray(d_color, dtype=np.float64)
    if d_color.shape != (h, w, 3):
        raise ValueError(f"d_color has shape {d_color.shape}, expected {(h, w, 3)}")
    d_depth = np.zeros((h, w)) if d_depth is None else np.asarray(d_depth, dtype=np.float64)
    if d_depth.shape != (h, w):
        raise ValueError(f"d_depth has shape {d_depth.shape}, expected {(h, w)}")

    out = RenderGradients.zeros(cloud.count)
    p = _project(cloud, camera)
    if len(p.order) == 0:
        return out
    rows = _kernels.composite_backward(
        h, w, p.means2d, p.conics, p.opacity, p.colors, p.depths, p.boxes,
        _background(background), np.ascontiguousarray(d_color), np.ascontiguousarray(d_depth),
    )
    g = rows.sum(axis=0)
    d_mean2d = g[:, 0:2]
    da, db, dc = g[:, 2], g[:, 3], g[:, 4]
    d_opac = g[:, 5]
    d_col = g[:, 6:9]
    d_z = g[:, 9].copy()

    # conic = inverse(cov2d); treat both as full symmetric matrices
    K = np.empty((len(p.order), 2, 2))
    K[:, 0, 0], K[:, 0, 1], K[:, 1, 0], K[:, 1, 1] = p.conics[:, 0], p.conics[:, 1], p.conics[:, 1], p.conics[:, 2]
    dK = np.empty_like(K)
    dK[:, 0, 0], dK[:, 0, 1], dK[:, 1, 0], dK[:, 1, 1] = da, 0.5 * db, 0.5 * db, dc
    d_cov2d = -K @ dK @ K

    J, S = p.jac, p.cov_cam
    d_jac = 2.0 * d_cov2d @ J @ S
    d_cov_cam = J.transpose(0, 2, 1) @ d_cov2d @ J
    Wc = camera.world_to_camera
    d_cov3d = Wc.T @ d_cov_cam @ Wc

    f = camera.focal
    tx, ty, tz = p.cam_points.T
    d_t = np.zeros((len(p.order), 3))
    d_t[:, 0] = d_mean2d[:, 0] * f / tz - d_jac[:, 0, 2] * f / tz**2
    d_t[:, 1] = d_mean2d[:, 1] * f / tz - d_jac[:, 1, 2] * f / tz**2
    d_t[:, 2] = (
        -d_mean2d[:, 0] * f * tx / tz**2
        - d_mean2d[:, 1] * f * ty / tz**2
        - (d_jac[:, 0, 0] + d_jac[:, 1, 1]) * f / tz**2
        + d_jac[:, 0, 2] * 2 * f * tx / tz**3
        + d_jac[:, 1, 2] * 2 * f * ty / tz**3
        + d_z
    )

    M = p.rot * p.scales[:, None, :]
    d_M = 2.0 * d_cov3d @ M
    d_scales = np.sum(d_M * p.rot, axis=1)
    d_rot = d_M * p.scales[:, None, :]

    idx = p.order
    out.d_positions[idx] = d_t @ Wc
    opac = p.opacity
    out.d_opacity_logits[idx] = d_opac * opac * (1.0 - opac)
    out.d_log_scales[idx] = d_scales * p.scales
    out.d_rotations[idx] = _quat_backward(cloud.rotations[idx], d_rot)
    raw = cloud.colors[idx]
    out.d_colors[idx] = d_col * ((raw >= 0.0) & (raw <= 1.0))
    return out
