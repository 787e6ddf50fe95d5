import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ar4d.scene import (
    GaussianCloud,
    InvalidRotationError,
    OrbitCamera,
    VideoSequence,
    build_covariance,
    clone_cloud,
    logit,
    quat_to_rotmat,
    sigmoid,
    validate_cloud,
)


def make_cloud(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianCloud(
        positions=rng.normal(size=(n, 3)),
        opacity_logits=rng.normal(size=n),
        log_scales=rng.normal(-2, 0.5, (n, 3)),
        rotations=rng.normal(size=(n, 4)),
        colors=rng.uniform(size=(n, 3)),
    )


def test_identity_quaternion_unit_scale_gives_identity():
    np.testing.assert_array_equal(build_covariance(np.zeros(3), [1, 0, 0, 0]), np.eye(3))


def test_axis_aligned_scaling():
    cov = build_covariance(np.log([2.0, 1.0, 1.0]), [1, 0, 0, 0])
    np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-15)


def test_covariance_eigenvalues_match_squared_scales():
    rng = np.random.default_rng(3)
    q = rng.normal(size=(1000, 4))
    log_s = rng.uniform(-3, 1, (1000, 3))
    cov = build_covariance(log_s, q)
    np.testing.assert_allclose(cov, np.swapaxes(cov, -1, -2), atol=1e-14)
    # brute-force check against a general eigensolver
    eig = np.sort(np.linalg.eigvalsh(cov), axis=1)
    expected = np.sort(np.exp(2 * log_s), axis=1)
    np.testing.assert_allclose(eig, expected, rtol=1e-9)


def test_zero_quaternion_rejected():
    with pytest.raises(InvalidRotationError):
        build_covariance(np.zeros(3), [0, 0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3),
       st.lists(st.floats(-3, 1), min_size=3, max_size=3))
def test_covariance_sign_flip_invariant(q, log_s):
    q = np.array(q)
    np.testing.assert_allclose(build_covariance(log_s, q), build_covariance(log_s, -q), atol=1e-14)


def test_rotation_matrices_are_orthonormal():
    R = quat_to_rotmat(np.random.default_rng(1).normal(size=(50, 4)))
    np.testing.assert_allclose(R @ np.swapaxes(R, 1, 2), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=20))
def test_derived_opacity_and_scale_in_domain(values):
    x = np.array(values)
    a = sigmoid(x)
    assert np.all((a >= 0) & (a <= 1)) and np.all(np.isfinite(a))
    assert np.all(np.exp(np.clip(x, -700, 700)) > 0)


def test_sigmoid_logit_roundtrip():
    p = np.linspace(0.01, 0.99, 21)
    np.testing.assert_allclose(sigmoid(logit(p)), p, atol=1e-14)


def test_validate_well_formed_cloud():
    assert validate_cloud(make_cloud()) == []


def test_validate_reports_nan_position_with_index():
    cloud = make_cloud()
    cloud.positions[2, 1] = np.nan
    problems = validate_cloud(cloud)
    assert problems == ["splat 2: non-finite positions"]


def test_validate_reports_length_mismatch():
    cloud = make_cloud()
    cloud.colors = cloud.colors[:3]
    assert any(p.startswith("length mismatch") for p in validate_cloud(cloud))


def test_validate_reports_zero_quaternion():
    cloud = make_cloud()
    cloud.rotations[4] = 0.0
    assert "splat 4: zero quaternion in rotations" in validate_cloud(cloud)


def test_clone_is_deep_and_equal():
    cloud = make_cloud()
    copy = clone_cloud(cloud)
    for name, arr in cloud.as_dict().items():
        np.testing.assert_array_equal(getattr(copy, name), arr)
    copy.positions[0, 0] += 1.0
    assert copy.positions[0, 0] != cloud.positions[0, 0]


def test_clone_of_empty_cloud_rejected():
    empty = GaussianCloud(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        clone_cloud(empty)


def test_create_from_constrained_values():
    cloud = GaussianCloud.create(np.zeros((2, 3)), [0.25, 0.75], np.full((2, 3), 0.1))
    np.testing.assert_allclose(cloud.opacities, [0.25, 0.75])
    np.testing.assert_allclose(cloud.scales, 0.1)


def test_camera_pose_conventions():
    cam = OrbitCamera()
    np.testing.assert_allclose(cam.position, [0, 0, 1.5], atol=1e-15)
    # forward row points from the eye at the origin
    np.testing.assert_allclose(cam.world_to_camera[2], [0, 0, -1], atol=1e-15)
    side = OrbitCamera(azimuth_deg=90)
    np.testing.assert_allclose(side.position, [1.5, 0, 0], atol=1e-12)
    up = OrbitCamera(elevation_deg=30)
    assert up.position[1] > 0
    W = up.world_to_camera
    np.testing.assert_allclose(W @ W.T, np.eye(3), atol=1e-12)


@pytest.mark.parametrize("kwargs", [dict(radius=0), dict(near=5, far=1), dict(image_width=0),
                                    dict(elevation_deg=90)])
def test_camera_invariants(kwargs):
    with pytest.raises(ValueError):
        OrbitCamera(**kwargs)


def test_video_sequence_contract():
    frames = [np.zeros((4, 5, 3)), np.ones((4, 5, 3))]
    video = VideoSequence(frames)
    assert video.frame_count == 2
    np.testing.assert_array_equal(video[2], 1.0)
    with pytest.raises(IndexError):
        video[0]
    with pytest.raises(ValueError):
        VideoSequence(frames[:1])
    with pytest.raises(ValueError):
        VideoSequence([np.zeros((4, 5, 3)), np.zeros((5, 4, 3))])
