from __future__ import annotations

import numpy as np
import pytest

from uvclean.geometry import (
    BASE_FRAME,
    CAMERA_FRAME,
    CameraIntrinsics,
    PointCloud,
    RigidTransform,
    back_project,
    look_at,
    reach_filter,
    transform_points,
)

from oracles import pinhole_point

INTR = CameraIntrinsics(fx=600.0, fy=590.0, cx=320.0, cy=240.0, width=640, height=480)


def _depth_with(pixels: dict[tuple[int, int], int], intr=INTR):
    depth = np.zeros(intr.shape, dtype=np.uint16)
    mask = np.zeros(intr.shape, dtype=bool)
    for (u, v), d in pixels.items():
        depth[v, u] = d
        mask[v, u] = True
    return depth, mask


class TestIntrinsics:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=0, fy=1, cx=0, cy=0, width=10, height=10)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=1, fy=1, cx=10, cy=0, width=10, height=10)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=10, height=10, depth_scale=0)


class TestBackProject:
    def test_principal_point_ray(self):
        # Pixel at the principal point, 1000 mm: straight down the optical axis.
        depth, mask = _depth_with({(320, 240): 1000})
        cloud = back_project(depth, mask, INTR)
        assert cloud.frame == CAMERA_FRAME
        np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 1.0]], atol=1e-12)

    def test_pinhole_formula_by_hand(self):
        # One focal length to the right of the principal point at z=1 gives x=1.
        # (cx + fx, cy) is off the sensor for these intrinsics, so use a scaled
        # offset: u = cx + 300 -> X = 300 * 1.0 / 600 = 0.5.
        depth, mask = _depth_with({(620, 240): 1000, (320, 431): 1500})
        cloud = back_project(depth, mask, INTR)
        expect_a = pinhole_point(620, 240, 1000, 600.0, 590.0, 320.0, 240.0, 0.001)
        expect_b = pinhole_point(320, 431, 1500, 600.0, 590.0, 320.0, 240.0, 0.001)
        np.testing.assert_allclose(sorted(cloud.points.tolist()),
                                   sorted([expect_a.tolist(), expect_b.tolist()]), atol=1e-12)

    def test_full_focal_offset(self):
        # With a wide sensor the textbook case fits: pixel (cx+fx, cy) -> (1, 0, 1).
        intr = CameraIntrinsics(fx=300.0, fy=300.0, cx=320.0, cy=240.0, width=640, height=480)
        depth = np.zeros(intr.shape, dtype=np.uint16)
        mask = np.zeros(intr.shape, dtype=bool)
        depth[240, 620] = 1000
        mask[240, 620] = True
        cloud = back_project(depth, mask, intr)
        np.testing.assert_allclose(cloud.points, [[1.0, 0.0, 1.0]], atol=1e-12)

    def test_zero_depth_emits_no_point(self):
        depth, mask = _depth_with({(100, 100): 0, (101, 100): 700})
        cloud = back_project(depth, mask, INTR)
        assert len(cloud) == 1

    def test_dimension_mismatch_rejected(self):
        depth = np.zeros((480, 640), dtype=np.uint16)
        mask = np.zeros((480, 641), dtype=bool)
        with pytest.raises(ValueError):
            back_project(depth, mask, INTR)

    def test_empty_mask_is_valid(self):
        depth = np.zeros(INTR.shape, dtype=np.uint16)
        mask = np.zeros(INTR.shape, dtype=bool)
        assert len(back_project(depth, mask, INTR)) == 0

    def test_roundtrip_through_forward_projection(self):
        # Points generated on pixel rays with millimeter-quantized depth must
        # come back within 1 mm.
        rng = np.random.default_rng(11)
        us = rng.integers(0, INTR.width, 300)
        vs = rng.integers(0, INTR.height, 300)
        zs = rng.uniform(0.3, 2.5, 300)
        depth = np.zeros(INTR.shape, dtype=np.uint16)
        mask = np.zeros(INTR.shape, dtype=bool)
        expected = {}
        for u, v, z in zip(us, vs, zs):
            d = int(round(z * 1000.0))
            depth[v, u] = d
            mask[v, u] = True
            expected[(u, v)] = np.array([(u - INTR.cx) * z / INTR.fx,
                                         (v - INTR.cy) * z / INTR.fy, z])
        cloud = back_project(depth, mask, INTR)
        # Match output points back to pixels in row-major order.
        pix = [(u, v) for v in range(INTR.height) for u in range(INTR.width) if mask[v, u]]
        assert len(cloud) == len(pix)
        for p, (u, v) in zip(cloud.points, pix):
            assert np.linalg.norm(p - expected[(u, v)]) < 1e-3


class TestTransform:
    def test_identity(self):
        cloud = PointCloud([[1, 2, 3], [4, 5, 6]], CAMERA_FRAME)
        out = transform_points(cloud, RigidTransform.identity(CAMERA_FRAME))
        np.testing.assert_array_equal(out.points, cloud.points)

    def test_pure_translation(self):
        cloud = PointCloud([[1.0, 2.0, 3.0]], CAMERA_FRAME)
        t = RigidTransform(np.eye(3), [0, 0, 0.5], CAMERA_FRAME, BASE_FRAME)
        out = transform_points(cloud, t)
        np.testing.assert_allclose(out.points, [[1.0, 2.0, 3.5]])
        assert out.frame == BASE_FRAME

    def test_frame_mismatch_rejected(self):
        cloud = PointCloud([[1.0, 2.0, 3.0]], BASE_FRAME)
        t = RigidTransform(np.eye(3), [0, 0, 0.5], CAMERA_FRAME, BASE_FRAME)
        with pytest.raises(ValueError):
            transform_points(cloud, t)

    def test_isometry_on_random_clouds(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            pts = rng.normal(size=(60, 3))
            # Random rotation via QR; fix the determinant sign.
            q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            if np.linalg.det(q) < 0:
                q[:, 0] = -q[:, 0]
            t = RigidTransform(q, rng.normal(size=3), CAMERA_FRAME, BASE_FRAME)
            out = transform_points(PointCloud(pts, CAMERA_FRAME), t)
            d_in = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
            d_out = np.linalg.norm(out.points[:, None] - out.points[None, :], axis=-1)
            assert np.max(np.abs(d_in - d_out)) < 1e-9

    def test_rejects_non_orthonormal_rotation(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-3
        with pytest.raises(ValueError):
            RigidTransform(bad, np.zeros(3), CAMERA_FRAME, BASE_FRAME)

    def test_rejects_reflection(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(flip, np.zeros(3), CAMERA_FRAME, BASE_FRAME)


class TestReachFilter:
    def test_boundary_inside_kept(self):
        cloud = PointCloud([[1.29, 0, 0]], BASE_FRAME)
        assert len(reach_filter(cloud, 1.3)) == 1

    def test_outside_removed(self):
        cloud = PointCloud([[1.31, 0, 0]], BASE_FRAME)
        assert len(reach_filter(cloud, 1.3)) == 0

    def test_rejects_nonpositive_reach(self):
        cloud = PointCloud([[0.1, 0, 0]], BASE_FRAME)
        with pytest.raises(ValueError):
            reach_filter(cloud, 0.0)

    def test_matches_naive_check_and_preserves_order(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-2, 2, size=(500, 3))
        cloud = PointCloud(pts, BASE_FRAME)
        out = reach_filter(cloud, 1.3)
        expected = [p for p in pts if np.sqrt(p[0] ** 2 + p[1] ** 2 + p[2] ** 2) <= 1.3]
        np.testing.assert_array_equal(out.points, np.array(expected))

    def test_subset_and_idempotent(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-2, 2, size=(200, 3))
        out = reach_filter(PointCloud(pts, BASE_FRAME), 1.0)
        rows = {tuple(p) for p in pts}
        assert all(tuple(p) in rows for p in out.points)
        again = reach_filter(out, 1.0)
        np.testing.assert_array_equal(out.points, again.points)


class TestPointCloud:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            PointCloud([[np.nan, 0, 0]], BASE_FRAME)

    def test_role_transition_only_target_to_clean(self):
        target = PointCloud([[0, 0, 0.0]], BASE_FRAME, "target")
        assert target.as_clean().role == "clean"
        non_target = PointCloud([[0, 0, 0.0]], BASE_FRAME, "non_target")
        with pytest.raises(ValueError):
            non_target.as_clean()


def test_look_at_is_valid_rotation():
    t = look_at(position=(0.1, 0.2, 0.8), target=(0.7, 0.0, 0.0))
    assert t.from_frame == CAMERA_FRAME and t.to_frame == BASE_FRAME
    # Forward axis points from the camera to the target.
    fwd = t.rotation[:, 2]
    expect = np.array([0.6, -0.2, -0.8])
    np.testing.assert_allclose(fwd, expect / np.linalg.norm(expect), atol=1e-12)
