import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ar4d.field import MlpParams, init_mlp
from ar4d.io import (
    MAGIC,
    CheckpointError,
    atomic_write_bytes,
    cloud_from_bytes,
    cloud_to_bytes,
    load_cloud,
    load_mlp,
    mlp_from_bytes,
    mlp_to_bytes,
    read_depth_png,
    read_png,
    read_video_dir,
    save_cloud,
    save_mlp,
    to_uint8,
    write_depth_png,
    write_png,
    write_ppm,
)
from ar4d.scene import GaussianCloud


def random_cloud(n, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianCloud(rng.normal(size=(n, 3)), rng.normal(size=n), rng.normal(-2, 0.5, (n, 3)),
                         rng.normal(size=(n, 4)), rng.uniform(size=(n, 3)))


def as_f32(a):
    return np.asarray(a, np.float32).astype(np.float64)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 40), st.integers(0, 1000))
def test_cloud_roundtrip_is_float32_exact(n, seed):
    cloud = random_cloud(n, seed)
    back = cloud_from_bytes(cloud_to_bytes(cloud))
    for name, arr in cloud.as_dict().items():
        np.testing.assert_array_equal(getattr(back, name), as_f32(arr))


def test_cloud_bytes_layout():
    data = cloud_to_bytes(random_cloud(3))
    magic, version, count = struct.unpack_from("<4sIQ", data)
    assert (magic, version, count) == (MAGIC, 1, 3)
    assert len(data) == 16 + 4 * 3 * 14


def test_cloud_file_roundtrip(tmp_path):
    cloud = random_cloud(5)
    save_cloud(tmp_path / "c.cloud", cloud)
    np.testing.assert_array_equal(load_cloud(tmp_path / "c.cloud").positions, as_f32(cloud.positions))
    # saving twice yields the same bytes
    first = (tmp_path / "c.cloud").read_bytes()
    save_cloud(tmp_path / "c.cloud", load_cloud(tmp_path / "c.cloud"))
    assert (tmp_path / "c.cloud").read_bytes() == first


def test_bad_magic():
    data = bytearray(cloud_to_bytes(random_cloud(2)))
    data[:4] = b"XXXX"
    with pytest.raises(CheckpointError, match="bad checkpoint magic"):
        cloud_from_bytes(bytes(data))


def test_bad_version():
    data = bytearray(cloud_to_bytes(random_cloud(2)))
    data[4:8] = struct.pack("<I", 99)
    with pytest.raises(CheckpointError, match="version"):
        cloud_from_bytes(bytes(data))


@pytest.mark.parametrize("cut", [3, 16, 40])
def test_truncated_cloud(cut):
    with pytest.raises(CheckpointError):
        cloud_from_bytes(cloud_to_bytes(random_cloud(2))[:cut])


def test_trailing_bytes_rejected():
    with pytest.raises(CheckpointError):
        cloud_from_bytes(cloud_to_bytes(random_cloud(2)) + b"\0\0\0\0")


def test_mlp_roundtrip(tmp_path):
    params = init_mlp(7, 9, width=5, depth=2, rng=0)
    params.weights[-1] += 0.25
    save_mlp(tmp_path / "f.mlp", params)
    back = load_mlp(tmp_path / "f.mlp")
    assert back.dims == params.dims
    for a, b in zip(params.weights + params.biases, back.weights + back.biases):
        np.testing.assert_array_equal(b, as_f32(a))


def test_mlp_rejects_bad_payloads():
    data = mlp_to_bytes(init_mlp(3, 2, width=4, depth=1, rng=0))
    with pytest.raises(CheckpointError):
        mlp_from_bytes(data[:-4])
    with pytest.raises(CheckpointError, match="bad checkpoint magic"):
        mlp_from_bytes(b"JUNK" + data[4:])
    with pytest.raises(CheckpointError):
        mlp_from_bytes(cloud_to_bytes(random_cloud(0)))


def test_mlp_params_dims():
    params = MlpParams([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
    assert params.dims == [3, 4, 2]


def test_atomic_write_leaves_no_temp(tmp_path):
    target = tmp_path / "out.bin"
    atomic_write_bytes(target, b"one")
    atomic_write_bytes(target, b"two")
    assert target.read_bytes() == b"two"
    assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]


def test_atomic_write_failure_keeps_old_file(tmp_path):
    target = tmp_path / "out.bin"
    atomic_write_bytes(target, b"old")

    with pytest.raises(TypeError):
        atomic_write_bytes(target, object())
    assert target.read_bytes() == b"old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]


def test_to_uint8_rounds_and_clips():
    img = np.array([[[-0.5, 0.0, 0.5]], [[1.0, 2.0, 0.2]]])
    np.testing.assert_array_equal(to_uint8(img), [[[0, 0, 128]], [[255, 255, 51]]])


def test_png_roundtrip_within_quantization(tmp_path):
    img = np.random.default_rng(0).uniform(size=(7, 9, 3))
    write_png(tmp_path / "a.png", img)
    back = read_png(tmp_path / "a.png")
    assert back.shape == (7, 9, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    np.testing.assert_array_equal(back, to_uint8(img) / 255.0)


def test_ppm_header_and_values(tmp_path):
    img = np.zeros((2, 3, 3))
    img[0, 0] = [1.0, 0.5, 0.0]
    write_ppm(tmp_path / "a.ppm", img)
    lines = (tmp_path / "a.ppm").read_text().splitlines()
    assert lines[:3] == ["P3", "3 2", "255"]
    assert lines[3].split()[:3] == ["255", "128", "0"]
    assert len(lines) == 5


def test_depth_png_roundtrip(tmp_path):
    depth = np.array([[0.0, 1.0], [50.0, 100.0]])
    write_depth_png(tmp_path / "d.png", depth, far=100.0)
    back = read_depth_png(tmp_path / "d.png", far=100.0)
    assert np.abs(back - depth).max() <= 100.0 / 65535
    assert back[1, 1] == 100.0


def test_video_dir_sorted(tmp_path):
    for i in (2, 0, 1):
        write_png(tmp_path / f"frame_{i:04d}.png", np.full((4, 4, 3), i / 4))
    frames = read_video_dir(tmp_path)
    assert [f[0, 0, 0] for f in frames] == [0.0, to_uint8(0.25)[()] / 255, to_uint8(0.5)[()] / 255]


def test_video_dir_empty(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_video_dir(tmp_path)
