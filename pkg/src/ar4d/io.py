"""Binary checkpoints for clouds and MLPs, and image writers.

Both checkpoint kinds share one envelope: the magic bytes ``AR4D``, a u32
format version and a u64 count, then little-endian float32 payload.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .field import MlpParams
from .scene import CLOUD_FIELDS, FIELD_WIDTHS, GaussianCloud

MAGIC = b"AR4D"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_header(data: bytes) -> tuple[int, int]:
    if len(data) < _HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    return version, count


def cloud_to_bytes(cloud: GaussianCloud) -> bytes:
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, cloud.count)]
    for name in CLOUD_FIELDS:
        parts.append(np.ascontiguousarray(getattr(cloud, name), dtype="<f4").tobytes())
    return b"".join(parts)


def cloud_from_bytes(data: bytes) -> GaussianCloud:
    _, n = _read_header(data)
    floats_per_splat = sum(FIELD_WIDTHS.values())
    expected = _HEADER.size + 4 * n * floats_per_splat
    if len(data) != expected:
        raise CheckpointError(f"malformed cloud checkpoint: {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    fields, pos = {}, 0
    for name in CLOUD_FIELDS:
        width = FIELD_WIDTHS[name]
        chunk = flat[pos:pos + n * width]
        fields[name] = chunk.reshape(n) if width == 1 else chunk.reshape(n, width)
        pos += n * width
    return GaussianCloud(**fields)


def save_cloud(path, cloud: GaussianCloud):
    atomic_write_bytes(path, cloud_to_bytes(cloud))


def load_cloud(path) -> GaussianCloud:
    return cloud_from_bytes(Path(path).read_bytes())


def mlp_to_bytes(params: MlpParams) -> bytes:
    dims = params.dims
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(dims)), np.asarray(dims, dtype="<u4").tobytes()]
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def mlp_from_bytes(data: bytes) -> MlpParams:
    _, count = _read_header(data)
    if count < 2 or len(data) < _HEADER.size + 4 * count:
        raise CheckpointError("malformed MLP checkpoint: bad layer table")
    dims = np.frombuffer(data, dtype="<u4", count=count, offset=_HEADER.size).astype(int).tolist()
    n_floats = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    start = _HEADER.size + 4 * count
    if len(data) != start + 4 * n_floats:
        raise CheckpointError("malformed MLP checkpoint: payload size does not match layer table")
    flat = np.frombuffer(data, dtype="<f4", offset=start).astype(np.float64)
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in).copy())
        pos += fan_in * fan_out
        biases.append(flat[pos:pos + fan_out].copy())
        pos += fan_out
    return MlpParams(weights, biases)


def save_mlp(path, params: MlpParams):
    atomic_write_bytes(path, mlp_to_bytes(params))


def load_mlp(path) -> MlpParams:
    return mlp_from_bytes(Path(path).read_bytes())


def to_uint8(image) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image):
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_ppm(path, image):
    """ASCII P3 pixmap."""
    px = to_uint8(image)
    h, w, _ = px.shape
    rows = [" ".join(str(v) for v in row.reshape(-1)) for row in px]
    Path(path).write_text(f"P3\n{w} {h}\n255\n" + "\n".join(rows) + "\n")


def write_depth_png(path, depth, far: float):
    """16-bit grayscale, 65535 = far plane."""
    scaled = np.clip(np.asarray(depth, dtype=np.float64) / far, 0.0, 1.0)
    Image.fromarray(np.round(scaled * 65535.0).astype(np.uint16)).save(path, format="PNG")


def read_depth_png(path, far: float) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 65535.0 * far


def read_video_dir(path) -> list[np.ndarray]:
    """Frames of a monocular video stored as one PNG per frame, in file-name order."""
    files = sorted(Path(path).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG frames in {path}")
    return [read_png(f) for f in files]
