"""Orbit-camera helpers and the progressive azimuth curriculum."""

from __future__ import annotations

from dataclasses import dataclass

from .scene import OrbitCamera

ORTHOGONAL_OFFSETS = (0.0, 90.0, 180.0, 270.0)
EVAL_AZIMUTHS = (0.0, -45.0, 45.0, 180.0)


def reference_camera(width: int = 64, height: int = 64) -> OrbitCamera:
    return OrbitCamera(azimuth_deg=0.0, elevation_deg=0.0, radius=1.5, image_width=width, image_height=height)


@dataclass(frozen=True)
class SamplingSchedule:
    n_max: int = 180
    n_start: int = 1
    eta: int = 10

    def __post_init__(self):
        if self.n_start > self.n_max:
            raise ValueError("n_start must not exceed n_max")
        if self.eta < 1:
            raise ValueError("eta must be >= 1")


def progressive_limit(schedule: SamplingSchedule, u: int) -> int:
    """Largest azimuth offset (degrees) allowed at iteration u."""
    if u < 0:
        raise ValueError("iteration must be non-negative")
    return min(schedule.n_max, u // schedule.eta + schedule.n_start)


def sample_novel_view(schedule: SamplingSchedule, u: int, reference: OrbitCamera, rng) -> OrbitCamera:
    limit = progressive_limit(schedule, u)
    if limit == 0:
        return reference
    offset = rng.uniform(-limit, limit)
    return reference.with_azimuth(reference.azimuth_deg + offset)


def orthogonal_views(reference: OrbitCamera) -> list[OrbitCamera]:
    return [reference.with_azimuth(reference.azimuth_deg + d) for d in ORTHOGONAL_OFFSETS]


def sample_refinement_view(reference: OrbitCamera, rng) -> OrbitCamera:
    # uniform on (-180, 180]: negate a draw from [-180, 180)
    offset = -rng.uniform(-180.0, 180.0)
    return reference.with_azimuth(reference.azimuth_deg + offset)
