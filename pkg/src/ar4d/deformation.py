"""Local (frame i -> i+1) and global (canonical -> frame k) deformation fields.

Both emit per-splat deltas for position, opacity logit and log scale.
Rotations and colors are carried over untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import (
    MlpParams,
    PositionalEncodingConfig,
    init_mlp,
    mlp_backward,
    mlp_forward,
    positional_encode,
    positional_encode_backward,
)
from .rasterizer import RenderGradients
from .scene import GaussianCloud

OUTPUT_DIM = 9  # dmu(3), dalpha(1), ds(3), two reserved slots
TIME_ENCODING = PositionalEncodingConfig(num_frequencies=6)


@dataclass
class LocalField:
    mlp: MlpParams
    encoding: PositionalEncodingConfig = PositionalEncodingConfig()

    @classmethod
    def create(cls, depth=4, width=64, rng=None, encoding=PositionalEncodingConfig()) -> "LocalField":
        return cls(init_mlp(encoding.output_dim(3), OUTPUT_DIM, depth, width, rng), encoding)

    def copy(self) -> "LocalField":
        return LocalField(self.mlp.copy(), self.encoding)

    def inputs(self, positions: np.ndarray) -> np.ndarray:
        return positional_encode(positions, self.encoding)


@dataclass
class GlobalField:
    mlp: MlpParams
    encoding: PositionalEncodingConfig = PositionalEncodingConfig()
    time_encoding: PositionalEncodingConfig = TIME_ENCODING

    @classmethod
    def create(cls, depth=4, width=64, rng=None, encoding=PositionalEncodingConfig(),
               time_encoding=TIME_ENCODING) -> "GlobalField":
        in_dim = encoding.output_dim(3) + time_encoding.output_dim(1)
        return cls(init_mlp(in_dim, OUTPUT_DIM, depth, width, rng), encoding, time_encoding)

    def copy(self) -> "GlobalField":
        return GlobalField(self.mlp.copy(), self.encoding, self.time_encoding)

    def inputs(self, positions: np.ndarray, k: int, frame_count: int) -> np.ndarray:
        enc = positional_encode(positions, self.encoding)
        t = positional_encode(np.array([k / frame_count]), self.time_encoding)
        return np.concatenate([enc, np.broadcast_to(t, (len(enc), len(t)))], axis=1)


def _deform(cloud: GaussianCloud, deltas: np.ndarray) -> GaussianCloud:
    return GaussianCloud(
        positions=cloud.positions + deltas[:, 0:3],
        opacity_logits=cloud.opacity_logits + deltas[:, 3],
        log_scales=cloud.log_scales + deltas[:, 4:7],
        rotations=cloud.rotations.copy(),
        colors=cloud.colors.copy(),
    )


def _check_frame(k: int, frame_count: int):
    if not 2 <= k <= frame_count:
        raise ValueError(f"frame index {k} outside 2..{frame_count}")


def local_deltas(field: LocalField, cloud: GaussianCloud) -> np.ndarray:
    out, _ = mlp_forward(field.mlp, field.inputs(cloud.positions))
    return out


def global_deltas(field: GlobalField, canonical: GaussianCloud, k: int, frame_count: int) -> np.ndarray:
    _check_frame(k, frame_count)
    out, _ = mlp_forward(field.mlp, field.inputs(canonical.positions, k, frame_count))
    return out


def apply_local(field: LocalField, cloud: GaussianCloud) -> GaussianCloud:
    return _deform(cloud, local_deltas(field, cloud))


def apply_global(field: GlobalField, canonical: GaussianCloud, k: int, frame_count: int) -> GaussianCloud:
    return _deform(canonical, global_deltas(field, canonical, k, frame_count))


def deform_backward(field, cloud: GaussianCloud, d_deformed: RenderGradients, k=None, frame_count=None):
    """Chain gradients on a deformed cloud into (field params, base cloud).

    Pass ``k`` and ``frame_count`` for a GlobalField. The base position
    gradient includes the path through the positional encoding.
    """
    n = cloud.count
    if d_deformed.d_positions.shape != (n, 3) or d_deformed.d_opacity_logits.shape != (n,):
        raise ValueError("gradient shapes do not match the base cloud")
    if isinstance(field, GlobalField):
        if k is None or frame_count is None:
            raise ValueError("a global field needs k and frame_count")
        _check_frame(k, frame_count)
        x = field.inputs(cloud.positions, k, frame_count)
    else:
        x = field.inputs(cloud.positions)
    _, cache = mlp_forward(field.mlp, x)

    d_out = np.zeros((n, OUTPUT_DIM))
    d_out[:, 0:3] = d_deformed.d_positions
    d_out[:, 3] = d_deformed.d_opacity_logits
    d_out[:, 4:7] = d_deformed.d_log_scales
    d_params, d_in = mlp_backward(field.mlp, cache, d_out)

    enc_dim = field.encoding.output_dim(3)
    d_pos = d_deformed.d_positions + positional_encode_backward(cloud.positions, d_in[:, :enc_dim], field.encoding)
    d_base = RenderGradients(
        d_positions=d_pos,
        d_opacity_logits=d_deformed.d_opacity_logits.copy(),
        d_log_scales=d_deformed.d_log_scales.copy(),
        d_rotations=d_deformed.d_rotations.copy(),
        d_colors=d_deformed.d_colors.copy(),
    )
    return d_params, d_base
