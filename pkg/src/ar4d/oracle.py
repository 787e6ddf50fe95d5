"""Stand-ins for the pretrained generators.

A ``ReconstructionOracle`` turns posed views into a Gaussian cloud. The
synthetic oracle answers from a closed-form animated scene (optionally with
seeded corruption); the file-exchange oracle hands views to an external
process through a directory and reads back a cloud checkpoint.
"""

from __future__ import annotations

import abc
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import CheckpointError, load_cloud, write_png
from .rasterizer import render
from .scene import GaussianCloud, OrbitCamera, VideoSequence, clone_cloud, logit

PRESETS = ("orbiter", "pulser", "walker")


class OracleTimeoutError(TimeoutError):
    pass


class ReconstructionOracle(abc.ABC):
    @abc.abstractmethod
    def init_cloud(self, first_frame_views) -> GaussianCloud:
        """First-frame cloud from (image, camera) views of frame 1."""

    @abc.abstractmethod
    def pseudo_reconstruct(self, posed_views, frame_index: int, refresh: int = 0) -> GaussianCloud:
        """Pseudo cloud for frame ``frame_index`` from (image, camera) pairs."""


@dataclass(frozen=True)
class NoiseSpec:
    sigma_pos: float = 0.0
    sigma_col: float = 0.0
    sigma_op: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.sigma_pos == 0.0 and self.sigma_col == 0.0 and self.sigma_op == 0.0


def rotation_y(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class SyntheticScene:
    """Closed-form animated cloud.

    orbiter: every splat center revolves about the +Y axis through the
        origin at ``angular_velocity_deg`` per frame.
    pulser: log scales oscillate, amplitude * (sin(w(k-1) + phase) - sin(phase)).
    walker: the cloud translates by ``amplitude`` per frame along +X and the
        ``articulated`` sub-cluster swings about Z around ``pivot``.

    Only positions, opacities and scales move; rotations and colors stay
    fixed, matching what the deformation fields can express.
    """

    base: GaussianCloud
    preset: str = "orbiter"
    frame_count: int = 8
    angular_velocity_deg: float = 10.0
    amplitude: float = 0.0
    phase: float = 0.0
    articulated: np.ndarray = field(default=None)
    pivot: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown scene preset {self.preset!r}; choose from {PRESETS}")
        if self.frame_count < 2:
            raise ValueError("frame_count must be >= 2")
        if self.articulated is None:
            self.articulated = np.zeros(self.base.count, dtype=bool)
        if self.pivot is None:
            self.pivot = np.zeros(3)


def _random_splats(rng, n, center, radius, scale_range=(0.03, 0.06), opacity_range=(0.6, 0.95)):
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(0, 1, n) ** (1 / 3)
    positions = np.asarray(center) + direction * r[:, None]
    lo, hi = np.log(scale_range[0]), np.log(scale_range[1])
    quats = rng.normal(size=(n, 4))
    return GaussianCloud(
        positions=positions,
        opacity_logits=logit(rng.uniform(*opacity_range, n)),
        log_scales=rng.uniform(lo, hi, (n, 3)),
        rotations=quats / np.linalg.norm(quats, axis=1, keepdims=True),
        colors=rng.uniform(0.1, 0.9, (n, 3)),
    )


def make_scene(preset: str = "orbiter", n_splats: int = 96, frame_count: int = 8, seed: int = 0,
               angular_velocity_deg: float = 10.0, amplitude: float | None = None, phase: float = 0.0) -> SyntheticScene:
    """Seeded preset layouts sized to sit inside the reference camera's view."""
    rng = np.random.default_rng([seed, 101])
    if preset == "orbiter":
        base = _random_splats(rng, n_splats, (0.22, 0.0, 0.0), 0.16)
        return SyntheticScene(base, "orbiter", frame_count, angular_velocity_deg,
                              0.0 if amplitude is None else amplitude, phase)
    if preset == "pulser":
        base = _random_splats(rng, n_splats, (0.0, 0.0, 0.0), 0.22)
        return SyntheticScene(base, "pulser", frame_count, angular_velocity_deg,
                              0.3 if amplitude is None else amplitude, phase)
    if preset == "walker":
        n_limb = max(1, n_splats // 4)
        body = _random_splats(rng, n_splats - n_limb, (-0.15, 0.05, 0.0), 0.14)
        limb = _random_splats(rng, n_limb, (-0.15, -0.18, 0.0), 0.06)
        base = GaussianCloud(**{k: np.concatenate([getattr(body, k), getattr(limb, k)]) for k in body.as_dict()})
        articulated = np.r_[np.zeros(n_splats - n_limb, bool), np.ones(n_limb, bool)]
        return SyntheticScene(base, "walker", frame_count, angular_velocity_deg,
                              0.02 if amplitude is None else amplitude, phase, articulated,
                              np.array([-0.15, -0.08, 0.0]))
    raise ValueError(f"unknown scene preset {preset!r}; choose from {PRESETS}")


def ground_truth_cloud(scene: SyntheticScene, k: int) -> GaussianCloud:
    if not 1 <= k <= scene.frame_count:
        raise ValueError(f"frame {k} outside 1..{scene.frame_count}")
    out = clone_cloud(scene.base)
    steps = k - 1
    if scene.preset == "orbiter":
        out.positions = out.positions @ rotation_y(scene.angular_velocity_deg * steps).T
    elif scene.preset == "pulser":
        w = math.radians(scene.angular_velocity_deg)
        out.log_scales = out.log_scales + scene.amplitude * (math.sin(w * steps + scene.phase) - math.sin(scene.phase))
    elif scene.preset == "walker":
        w = math.radians(scene.angular_velocity_deg)
        swing = 30.0 * (math.sin(w * steps + scene.phase) - math.sin(scene.phase))
        limb = scene.articulated
        rel = out.positions[limb] - scene.pivot
        out.positions[limb] = rel @ rotation_z(swing).T + scene.pivot
        out.positions[:, 0] += scene.amplitude * steps
    return out


def make_monocular_video(scene: SyntheticScene, reference: OrbitCamera, background=(0.0, 0.0, 0.0)) -> VideoSequence:
    frames = [render(ground_truth_cloud(scene, k), reference, background).color
              for k in range(1, scene.frame_count + 1)]
    return VideoSequence(frames, reference)


def corrupt_cloud(cloud: GaussianCloud, noise: NoiseSpec, rng) -> GaussianCloud:
    out = clone_cloud(cloud)
    if noise.is_zero:
        return out
    n = out.count
    # draw every stream unconditionally so each sigma is independent of the others
    d_pos = rng.normal(0.0, 1.0, (n, 3))
    d_col = rng.normal(0.0, 1.0, (n, 3))
    d_op = rng.normal(0.0, 1.0, n)
    out.positions = out.positions + noise.sigma_pos * d_pos
    out.colors = np.clip(out.colors + noise.sigma_col * d_col, 0.0, 1.0)
    out.opacity_logits = out.opacity_logits + noise.sigma_op * d_op
    return out


def synthetic_pseudo_reconstruct(scene: SyntheticScene, k: int, posed_views, noise: NoiseSpec, rng) -> GaussianCloud:
    """Ground truth for frame k plus seeded corruption. The views are ignored:
    this oracle already knows the answer."""
    return corrupt_cloud(ground_truth_cloud(scene, k), noise, rng)


def init_cloud_synthetic(scene: SyntheticScene, noise: NoiseSpec = NoiseSpec(), rng=None) -> GaussianCloud:
    return corrupt_cloud(scene.base, noise, np.random.default_rng(rng))


class SyntheticOracle(ReconstructionOracle):
    def __init__(self, scene: SyntheticScene, noise: NoiseSpec = NoiseSpec(), seed: int = 0):
        self.scene = scene
        self.noise = noise
        self.seed = seed

    def init_cloud(self, first_frame_views=()) -> GaussianCloud:
        return init_cloud_synthetic(self.scene, self.noise, np.random.default_rng([self.seed, 1]))

    def pseudo_reconstruct(self, posed_views, frame_index: int, refresh: int = 0) -> GaussianCloud:
        rng = np.random.default_rng([self.seed, 2, frame_index, refresh])
        return synthetic_pseudo_reconstruct(self.scene, frame_index, posed_views, self.noise, rng)


class FileExchangeOracle(ReconstructionOracle):
    """Delegates to an external process through a shared directory.

    For each request a fresh subdirectory receives ``view_0000.png`` ...,
    ``cameras.json`` and ``request.json``; the external side must write
    ``result.cloud`` (cloud checkpoint format) into the same directory.
    """

    def __init__(self, exchange_dir, timeout_s: float = 600.0, poll_s: float = 0.5):
        self.root = Path(exchange_dir)
        self.timeout_s = timeout_s
        self.poll_s = poll_s
        self._requests = 0

    def _request(self, kind: str, posed_views, frame_index: int) -> GaussianCloud:
        req = self.root / f"{self._requests:04d}_{kind}_frame{frame_index:04d}"
        self._requests += 1
        req.mkdir(parents=True, exist_ok=False)
        cameras = []
        for i, (image, cam) in enumerate(posed_views):
            write_png(req / f"view_{i:04d}.png", image)
            cameras.append({
                "file": f"view_{i:04d}.png",
                "azimuth_deg": cam.azimuth_deg,
                "elevation_deg": cam.elevation_deg,
                "radius": cam.radius,
                "fov_y_deg": cam.fov_y_deg,
                "width": cam.image_width,
                "height": cam.image_height,
            })
        (req / "cameras.json").write_text(json.dumps({"views": cameras}, indent=2))
        (req / "request.json").write_text(json.dumps({"kind": kind, "frame": frame_index}))
        result = req / "result.cloud"
        deadline = time.monotonic() + self.timeout_s
        while not result.exists():
            if time.monotonic() > deadline:
                raise OracleTimeoutError(f"no result.cloud in {req} after {self.timeout_s}s")
            time.sleep(self.poll_s)
        try:
            return load_cloud(result)
        except CheckpointError as exc:
            raise CheckpointError(f"malformed checkpoint from external oracle ({result}): {exc}") from exc

    def init_cloud(self, first_frame_views) -> GaussianCloud:
        return self._request("init", first_frame_views, 1)

    def pseudo_reconstruct(self, posed_views, frame_index: int, refresh: int = 0) -> GaussianCloud:
        return self._request("pseudo", posed_views, frame_index)
