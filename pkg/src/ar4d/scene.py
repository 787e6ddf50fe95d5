"""Value types for Gaussian clouds, orbit cameras and rendered images."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

CLOUD_FIELDS = ("positions", "opacity_logits", "log_scales", "rotations", "colors")
FIELD_WIDTHS = {"positions": 3, "opacity_logits": 1, "log_scales": 3, "rotations": 4, "colors": 3}


class InvalidRotationError(ValueError):
    pass


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianCloud:
    """N anisotropic Gaussians with unconstrained storage.

    Opacity is kept as a logit and scale as a log so that any gradient step
    stays inside the valid domain. Rotations are (w, x, y, z) quaternions and
    are normalized wherever they are used.
    """

    positions: np.ndarray
    opacity_logits: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        for name in CLOUD_FIELDS:
            arr = np.array(getattr(self, name), dtype=np.float64)
            if name == "opacity_logits":
                arr = arr.reshape(-1)
            elif arr.ndim == 1:
                arr = arr.reshape(1, -1)
            setattr(self, name, arr)

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @classmethod
    def create(cls, positions, opacities, scales, rotations=None, colors=None) -> "GaussianCloud":
        """Build a cloud from constrained values (alpha in (0,1), s > 0)."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = positions.shape[0]
        if rotations is None:
            rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        if colors is None:
            colors = np.full((n, 3), 0.5)
        opacities = np.broadcast_to(np.asarray(opacities, dtype=np.float64), (n,))
        scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (n, 3))
        return cls(positions, logit(opacities), np.log(scales), rotations, colors)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in CLOUD_FIELDS}

    def replace(self, **changes) -> "GaussianCloud":
        return replace(self, **changes)


def clone_cloud(cloud: GaussianCloud) -> GaussianCloud:
    if cloud.count < 1:
        raise ValueError("cannot clone an empty cloud")
    return GaussianCloud(**{k: v.copy() for k, v in cloud.as_dict().items()})


def validate_cloud(cloud: GaussianCloud) -> list[str]:
    """Return a list of human-readable violations; empty means the cloud is ok."""
    problems = []
    lengths = {name: len(getattr(cloud, name)) for name in CLOUD_FIELDS}
    if len(set(lengths.values())) > 1:
        problems.append("length mismatch: " + ", ".join(f"{k}={v}" for k, v in lengths.items()))
    if lengths["positions"] < 1:
        problems.append("empty cloud (N must be >= 1)")
    for name in CLOUD_FIELDS:
        arr = getattr(cloud, name)
        width = FIELD_WIDTHS[name]
        if width > 1 and (arr.ndim != 2 or arr.shape[1] != width):
            problems.append(f"{name}: expected width {width}, got shape {arr.shape}")
            continue
        bad = ~np.isfinite(arr)
        if bad.ndim > 1:
            bad = bad.any(axis=1)
        for idx in np.flatnonzero(bad):
            problems.append(f"splat {idx}: non-finite {name}")
    rot = cloud.rotations
    if rot.ndim == 2 and rot.shape[1] == 4:
        norms = np.linalg.norm(np.nan_to_num(rot), axis=1)
        for idx in np.flatnonzero(norms == 0.0):
            problems.append(f"splat {idx}: zero quaternion in rotations")
    return problems


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions (normalized here)."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise InvalidRotationError("zero quaternion")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def build_covariance(log_scale, rotation) -> np.ndarray:
    """Sigma = R diag(s^2) R^T. Works on single splats or (N, ...) batches."""
    R = quat_to_rotmat(rotation)
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    M = R * s[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


@dataclass(frozen=True)
class OrbitCamera:
    """Pinhole camera on a sphere around the origin, up = +Y.

    Azimuth 0 puts the camera on +Z; positive azimuth swings it toward +X.
    Positive elevation lifts it above the XZ plane.
    """

    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    radius: float = 1.5
    image_width: int = 64
    image_height: int = 64
    fov_y_deg: float = 49.1
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.near < self.far:
            raise ValueError("near must be smaller than far")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dimensions must be >= 1")
        if abs(self.elevation_deg) >= 90:
            raise ValueError("elevation must lie strictly inside (-90, 90)")

    @property
    def position(self) -> np.ndarray:
        az, el = math.radians(self.azimuth_deg), math.radians(self.elevation_deg)
        return self.radius * np.array(
            [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)]
        )

    @property
    def world_to_camera(self) -> np.ndarray:
        """Rows are camera right, down and forward axes in world coordinates."""
        eye = self.position
        fwd = -eye / np.linalg.norm(eye)
        right = np.cross(fwd, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd])

    @property
    def focal(self) -> float:
        return 0.5 * self.image_height / math.tan(math.radians(self.fov_y_deg) / 2)

    @property
    def principal_point(self) -> tuple[float, float]:
        return 0.5 * self.image_width, 0.5 * self.image_height

    def with_azimuth(self, azimuth_deg: float) -> "OrbitCamera":
        return replace(self, azimuth_deg=float(azimuth_deg))

    def with_size(self, width: int, height: int) -> "OrbitCamera":
        return replace(self, image_width=int(width), image_height=int(height))


@dataclass
class RenderedFrame:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    accum_alpha: np.ndarray  # (H, W)


@dataclass
class VideoSequence:
    frames: list
    reference_camera: OrbitCamera = field(default_factory=OrbitCamera)

    def __post_init__(self):
        self.frames = [np.asarray(f, dtype=np.float64) for f in self.frames]
        if len(self.frames) < 2:
            raise ValueError("a video needs at least two frames")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise ValueError(f"frames have differing shapes: {sorted(shapes)}")

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def __getitem__(self, k: int) -> np.ndarray:
        """1-based frame access, v_1 .. v_F."""
        if not 1 <= k <= len(self.frames):
            raise IndexError(f"frame {k} outside 1..{len(self.frames)}")
        return self.frames[k - 1]
