"""Central-difference audits of every analytic gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .deformation import GlobalField, LocalField, apply_global, apply_local, deform_backward
from .field import MlpParams, init_mlp, mlp_backward, mlp_forward
from .objectives import dssim_loss, l1_loss, reference_loss, refinement_losses
from ._kernels import MIN_TRANSMITTANCE, SKIP_SIGMA
from .rasterizer import RenderGradients, _project, render, render_backward
from .scene import CLOUD_FIELDS, GaussianCloud, OrbitCamera

RTOL = 1e-3
ATOL = 1e-5
REQUIRED_FRACTION = 0.99


@dataclass
class AuditResult:
    name: str
    n_coords: int = 0
    n_ok: int = 0
    max_rel_error: float = 0.0

    @property
    def fraction_ok(self) -> float:
        return self.n_ok / self.n_coords if self.n_coords else 1.0

    @property
    def passed(self) -> bool:
        return self.fraction_ok >= REQUIRED_FRACTION

    def add(self, analytic, numeric):
        analytic = np.ravel(analytic)
        numeric = np.ravel(numeric)
        ok = np.abs(analytic - numeric) <= ATOL + RTOL * np.abs(numeric)
        self.n_coords += analytic.size
        self.n_ok += int(ok.sum())
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), ATOL / RTOL)
        if rel.size:
            self.max_rel_error = max(self.max_rel_error, float(rel.max()))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<12} coords={self.n_coords:<6} agree={100 * self.fraction_ok:6.2f}% "
                f"max_rel_err={self.max_rel_error:.3e}")


def random_micro_scene(rng, n_max: int = 8, size: int = 16):
    """Small random cloud seen by a random orbit camera."""
    n = int(rng.integers(1, n_max + 1))
    quats = rng.normal(size=(n, 4))
    cloud = GaussianCloud(
        positions=rng.uniform(-0.25, 0.25, (n, 3)),
        opacity_logits=rng.normal(0.5, 1.0, n),
        log_scales=np.log(rng.uniform(0.05, 0.15, (n, 3))),
        rotations=quats,
        colors=rng.uniform(0.05, 0.95, (n, 3)),
    )
    cam = OrbitCamera(azimuth_deg=float(rng.uniform(-180, 180)), elevation_deg=float(rng.uniform(-30, 30)),
                      radius=1.5, image_width=size, image_height=size)
    bg = rng.uniform(0, 1, 3)
    return cloud, cam, bg


def _perturbed(cloud: GaussianCloud, name: str, index, delta: float) -> GaussianCloud:
    arr = getattr(cloud, name).copy()
    arr[index] += delta
    return cloud.replace(**{name: arr})


def contribution_pattern(cloud: GaussianCloud, camera: OrbitCamera) -> bytes:
    """Which splats each pixel composites, in which order, up to early
    termination. The render is smooth in the parameters while this stays fixed;
    it jumps where a splat crosses the skip threshold, the depth order flips or
    a pixel switches between covered and far-filled depth."""
    p = _project(cloud, camera)
    ys, xs = np.mgrid[0:camera.image_height, 0:camera.image_width] + 0.5
    px, py = xs.reshape(-1, 1), ys.reshape(-1, 1)
    dx, dy = px - p.means2d[:, 0], py - p.means2d[:, 1]
    a, b, c = p.conics.T
    sigma = p.opacity * np.exp(-0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy)
    in_box = (p.boxes[:, 0] <= px) & (px <= p.boxes[:, 1]) & (p.boxes[:, 2] <= py) & (py <= p.boxes[:, 3])
    active = in_box & (sigma >= SKIP_SIGMA)
    trans = np.cumprod(np.where(active, 1.0 - sigma, 1.0), axis=1)
    stopped = np.cumsum(active & (trans < MIN_TRANSMITTANCE), axis=1) > 0
    active &= ~stopped
    return p.order.astype(np.int64).tobytes() + np.packbits(active).tobytes()


def cloud_fd(loss_fn, cloud: GaussianCloud, step: float, pattern_fn=None, min_step: float = 1e-8,
             richardson: bool = False) -> RenderGradients:
    """Central differences over every cloud coordinate. With ``pattern_fn``,
    a coordinate whose two probes land on different sides of a discontinuity
    (different pattern) is retried with a tenfold smaller step. ``richardson``
    combines steps h and h/2 to cancel the O(h^2) truncation term."""
    base = pattern_fn(cloud) if pattern_fn else None
    out = {}
    for name in CLOUD_FIELDS:
        arr = getattr(cloud, name)
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            h = step
            while True:
                plus, minus = _perturbed(cloud, name, idx, h), _perturbed(cloud, name, idx, -h)
                if base is None or h <= min_step or pattern_fn(plus) == base == pattern_fn(minus):
                    break
                h /= 10.0
            num[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * h)
            if richardson:
                half = (loss_fn(_perturbed(cloud, name, idx, h / 2)) - loss_fn(_perturbed(cloud, name, idx, -h / 2))) / h
                num[idx] = (4.0 * half - num[idx]) / 3.0
        out[name] = num
    return RenderGradients(out["positions"], out["opacity_logits"], out["log_scales"], out["rotations"], out["colors"])


def audit_render(seed: int, size: int = 16, step: float = 1e-3, corrupt: bool = False) -> AuditResult:
    rng = np.random.default_rng([seed, 7001])
    cloud, cam, bg = random_micro_scene(rng, size=size)
    d_color = rng.normal(size=(size, size, 3))
    d_depth = rng.normal(size=(size, size))

    def loss(c):
        f = render(c, cam, bg)
        return float(np.sum(f.color * d_color) + np.sum(f.depth * d_depth))

    analytic = render_backward(cloud, cam, bg, d_color, d_depth)
    if corrupt:
        analytic.d_positions *= 1.5
    numeric = cloud_fd(loss, cloud, step, pattern_fn=lambda c: contribution_pattern(c, cam), richardson=True)
    res = AuditResult("render")
    for a, n in zip(analytic.as_tuple(), numeric.as_tuple()):
        res.add(a, n)
    return res


def _mlp_fd(loss_fn, params: MlpParams, step: float) -> list:
    arrays = params.arrays()
    grads = []
    for i, arr in enumerate(arrays):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i][idx] += step
            minus[i][idx] -= step
            num[idx] = (loss_fn(MlpParams.from_arrays(plus)) - loss_fn(MlpParams.from_arrays(minus))) / (2 * step)
        grads.append(num)
    return grads


def audit_mlp(seed: int, step: float = 1e-6) -> AuditResult:
    rng = np.random.default_rng([seed, 7002])
    params = init_mlp(5, 3, depth=2, width=8, rng=rng, zero_output=False)
    params.biases = [rng.normal(0, 0.1, b.shape) for b in params.biases]
    x = rng.normal(size=(4, 5))
    upstream = rng.normal(size=(4, 3))
    out, cache = mlp_forward(params, x)
    d_params, d_x = mlp_backward(params, cache, upstream)

    def loss_p(p):
        return float(np.sum(mlp_forward(p, x)[0] * upstream))

    res = AuditResult("mlp")
    for a, n in zip(d_params.arrays(), _mlp_fd(loss_p, params, step)):
        res.add(a, n)
    num_x = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        num_x[idx] = (np.sum(mlp_forward(params, xp)[0] * upstream) - np.sum(mlp_forward(params, xm)[0] * upstream)) / (2 * step)
    res.add(d_x, num_x)
    return res


def _random_field(rng, kind: str):
    if kind == "local":
        fld = LocalField.create(depth=2, width=8, rng=rng)
    else:
        fld = GlobalField.create(depth=2, width=8, rng=rng)
    fld.mlp.weights[-1] = rng.normal(0, 0.05, fld.mlp.weights[-1].shape)
    fld.mlp.biases = [rng.normal(0, 0.05, b.shape) for b in fld.mlp.biases]
    return fld


def audit_deformation(seed: int, step: float = 1e-6) -> AuditResult:
    """Field parameter and base-cloud gradients for both field kinds."""
    rng = np.random.default_rng([seed, 7003])
    n = 4
    cloud = GaussianCloud(rng.uniform(-0.3, 0.3, (n, 3)), rng.normal(size=n), rng.normal(-2.5, 0.3, (n, 3)),
                          rng.normal(size=(n, 4)), rng.uniform(0, 1, (n, 3)))
    res = AuditResult("deformation")
    for kind in ("local", "global"):
        fld = _random_field(rng, kind)
        k, frames = 3, 5
        weights = {name: rng.normal(size=getattr(cloud, name).shape) for name in CLOUD_FIELDS}

        def deform(f, c):
            return apply_local(f, c) if kind == "local" else apply_global(f, c, k, frames)

        def loss(c, f=fld):
            d = deform(f, c)
            return float(sum(np.sum(getattr(d, name) * weights[name]) for name in CLOUD_FIELDS))

        upstream = RenderGradients(*(weights[name] for name in CLOUD_FIELDS))
        d_field, d_base = deform_backward(fld, cloud, upstream, *((k, frames) if kind == "global" else ()))
        res.add(d_base.as_tuple()[0], cloud_fd(loss, cloud, step).d_positions)
        for a, nmr in zip(d_base.as_tuple()[1:], cloud_fd(loss, cloud, step).as_tuple()[1:]):
            res.add(a, nmr)

        def loss_p(p):
            f = fld.copy()
            f.mlp = p
            return loss(cloud, f)

        for a, nmr in zip(d_field.arrays(), _mlp_fd(loss_p, fld.mlp, step)):
            res.add(a, nmr)
    return res


def audit_losses(seed: int, size: int = 16, step: float = 1e-6) -> AuditResult:
    """Image-space gradients of L1, D-SSIM and the reference loss, plus the
    refinement losses pulled back to cloud parameters."""
    rng = np.random.default_rng([seed, 7004])
    a = rng.uniform(0, 1, (size, size, 3))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    res = AuditResult("losses")
    for fn in (l1_loss, dssim_loss, lambda x, y: reference_loss(x, y, 0.8)):
        _, grad = fn(a, b)
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            ap, am = a.copy(), a.copy()
            ap[idx] += step
            am[idx] -= step
            num[idx] = (fn(ap, b)[0] - fn(am, b)[0]) / (2 * step)
        res.add(grad, num)

    cloud, cam, bg = random_micro_scene(rng, n_max=4, size=size)
    target = cloud.replace(colors=np.clip(cloud.colors + 0.2, 0, 1), positions=cloud.positions + 0.02)
    sampled = cam.with_azimuth(cam.azimuth_deg + 40.0)
    _, _, grads = refinement_losses(cloud, target, cam, sampled, bg)

    def loss(c):
        lr, ld, _ = refinement_losses(c, target, cam, sampled, bg)
        return lr + ld

    # L1 is piecewise linear so a smaller step keeps FD away from kinks
    numeric = cloud_fd(loss, cloud, 1e-7)
    for g, n in zip(grads.as_tuple(), numeric.as_tuple()):
        res.add(g, n)
    return res


@dataclass
class AuditReport:
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]


def run_audit(seed: int = 0, scenes: int = 100, fields: int = 20, size: int = 16, corrupt: bool = False) -> AuditReport:
    render_res = AuditResult("render")
    for s in range(scenes):
        r = audit_render(seed * 100_003 + s, size=size, corrupt=corrupt)
        render_res.n_coords += r.n_coords
        render_res.n_ok += r.n_ok
        render_res.max_rel_error = max(render_res.max_rel_error, r.max_rel_error)
    merged = [render_res]
    for name, fn in (("mlp", audit_mlp), ("deformation", audit_deformation), ("losses", audit_losses)):
        acc = AuditResult(name)
        for s in range(fields):
            r = fn(seed * 100_003 + s)
            acc.n_coords += r.n_coords
            acc.n_ok += r.n_ok
            acc.max_rel_error = max(acc.max_rel_error, r.max_rel_error)
        merged.append(acc)
    return AuditReport(merged)
