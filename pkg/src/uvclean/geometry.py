"""Camera model, rigid transforms, and depth-to-point-cloud extraction.

Conventions used throughout the toolkit:

* right-handed frames; the camera frame follows the usual computer-vision
  convention (+z along the optical axis, +x right, +y down in the image);
* lengths are meters everywhere. Depth images carry unsigned 16-bit sensor
  units converted through ``depth_scale`` (default 0.001, i.e. millimeters);
  a stored depth of 0 marks an invalid pixel and never produces a point;
* point clouds are (N, 3) float64 arrays tagged with a frame label and a
  role. The only permitted role transition is target -> clean, which happens
  at the end of cleaning-point selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CAMERA_FRAME = "camera"
BASE_FRAME = "base"

ROLE_TARGET = "target"
ROLE_NON_TARGET = "non_target"
ROLE_CLEAN = "clean"
_ROLES = (ROLE_TARGET, ROLE_NON_TARGET, ROLE_CLEAN)

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics of a registered RGB-D pair."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 0.001

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )
        if self.depth_scale <= 0:
            raise ValueError(f"depth_scale must be positive, got {self.depth_scale}")

    @property
    def shape(self) -> tuple[int, int]:
        """Image shape as (height, width), matching numpy array layout."""
        return (self.height, self.width)


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation mapping points from one frame to another."""

    rotation: np.ndarray
    translation: np.ndarray
    from_frame: str
    to_frame: str

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-6")
        object.__setattr__(self, "rotation", _as_readonly(r))
        object.__setattr__(self, "translation", _as_readonly(t))

    @classmethod
    def identity(cls, frame: str) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), from_frame=frame, to_frame=frame)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation, self.to_frame, self.from_frame)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable set of 3D points in a named frame with a pipeline role."""

    points: np.ndarray
    frame: str
    role: str = ROLE_TARGET

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "points", _as_readonly(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        """Same frame and role, new coordinates."""
        return PointCloud(points, self.frame, self.role)

    def as_clean(self) -> "PointCloud":
        """Promote a target cloud to the clean role; the only legal transition."""
        if self.role != ROLE_TARGET:
            raise ValueError(f"only target clouds become clean, not {self.role!r}")
        return PointCloud(self.points, self.frame, ROLE_CLEAN)


def back_project(depth: np.ndarray, mask: np.ndarray, intr: CameraIntrinsics,
                 role: str = ROLE_TARGET) -> PointCloud:
    """Lift the masked pixels of a depth image into a camera-frame point cloud.

    One point is emitted per mask-set pixel with nonzero depth, in row-major
    pixel order:  X = (u - cx) * z / fx,  Y = (v - cy) * z / fy,  Z = z,
    with z = depth * depth_scale.
    """
    depth = np.asarray(depth)
    mask = np.asarray(mask, dtype=bool)
    if depth.shape != mask.shape:
        raise ValueError(f"depth {depth.shape} and mask {mask.shape} dimensions differ")
    if depth.shape != intr.shape:
        raise ValueError(f"image {depth.shape} does not match intrinsics {intr.shape}")

    vs, us = np.nonzero(mask)
    z = depth[vs, us].astype(np.float64) * intr.depth_scale
    valid = z > 0
    us, vs, z = us[valid], vs[valid], z[valid]

    pts = np.empty((z.shape[0], 3), dtype=np.float64)
    pts[:, 0] = (us - intr.cx) * z / intr.fx
    pts[:, 1] = (vs - intr.cy) * z / intr.fy
    pts[:, 2] = z
    return PointCloud(pts, CAMERA_FRAME, role)


def transform_points(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    """Re-express a cloud in the transform's target frame."""
    if cloud.frame != transform.from_frame:
        raise ValueError(
            f"cloud is in frame {cloud.frame!r} but transform maps from {transform.from_frame!r}"
        )
    return PointCloud(transform.apply(cloud.points), transform.to_frame, cloud.role)


def reach_filter(cloud: PointCloud, max_reach: float) -> PointCloud:
    """Drop points farther than ``max_reach`` from the manipulator base origin.

    Points at exactly max_reach are kept; input order is preserved.
    """
    if max_reach <= 0:
        raise ValueError(f"max_reach must be positive, got {max_reach}")
    if cloud.frame != BASE_FRAME:
        raise ValueError(f"reach filtering requires the base frame, cloud is in {cloud.frame!r}")
    keep = np.linalg.norm(cloud.points, axis=1) <= max_reach
    return cloud.with_points(cloud.points[keep])


def look_at(position, target, up=(0.0, 0.0, 1.0), from_frame: str = CAMERA_FRAME,
            to_frame: str = BASE_FRAME) -> RigidTransform:
    """Camera-to-world transform for a camera at ``position`` looking at ``target``.

    Columns of the rotation are the camera axes expressed in the world frame
    (+x right, +y down, +z forward). ``up`` resolves the roll; when the view
    direction is parallel to ``up`` the world x axis is used instead.
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    forward = np.asarray(target, dtype=np.float64).reshape(3) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position and target coincide")
    z = forward / norm
    up = np.asarray(up, dtype=np.float64).reshape(3)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
        x = x - np.dot(x, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.column_stack([x, y, z])
    return RigidTransform(rot, position, from_frame=from_frame, to_frame=to_frame)
