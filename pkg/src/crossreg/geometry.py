"""Rigid transforms, pinhole projection and Euler-angle utilities.

Pixel coordinates are continuous with the origin at the image corner, so a
point is visible when it lands in the half-open box [0, width) x [0, height)
with positive depth.  All functions are pure and safe for concurrent use.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """Rigid transform p_cam = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        r = self.rotation
        if r.shape != (3, 3):
            raise ContractError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ContractError("rotation is not a proper orthonormal matrix")

    @staticmethod
    def identity():
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other):
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self):
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters; width/height bound the visible pixel box."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractError("principal point must lie inside the image")

    def scaled(self, factor):
        """Intrinsics for an image resized by ``factor`` (isotropic)."""
        return CameraIntrinsics(self.fx * factor, self.fy * factor,
                                self.cx * factor, self.cy * factor,
                                int(round(self.width * factor)),
                                int(round(self.height * factor)))

    def scaled_xy(self, sx, sy):
        """Intrinsics after an anisotropic resize."""
        return CameraIntrinsics(self.fx * sx, self.fy * sy,
                                self.cx * sx, self.cy * sy,
                                int(round(self.width * sx)),
                                int(round(self.height * sy)))


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    intensity: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        if self.points.shape[0] == 0:
            raise ContractError("point cloud is empty")
        if not np.isfinite(self.points).all():
            raise ContractError("point cloud contains non-finite coordinates")
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if inten.shape[0] != self.points.shape[0]:
                raise ContractError("intensity length must match point count")
            object.__setattr__(self, "intensity", inten)

    def __len__(self):
        return self.points.shape[0]


def transform_points(pose: Pose, cloud: PointCloud) -> PointCloud:
    return PointCloud(pose.apply(cloud.points), cloud.intensity)


def project(intr: CameraIntrinsics, p_cam):
    """Project one camera-frame point; returns (u, v, depth, valid).

    A point at or behind the camera plane is flagged invalid, not an error.
    """
    x, y, z = np.asarray(p_cam, dtype=np.float64)
    if z <= 0.0:
        return 0.0, 0.0, z, False
    return intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy, z, True


def project_many(intr: CameraIntrinsics, pts_cam):
    """Vectorized projection: returns (n,2) pixels, (n,) depths, (n,) validity."""
    pts_cam = np.asarray(pts_cam, dtype=np.float64).reshape(-1, 3)
    z = pts_cam[:, 2]
    valid = z > 0.0
    safe_z = np.where(valid, z, 1.0)
    uv = np.empty((len(pts_cam), 2))
    uv[:, 0] = intr.fx * pts_cam[:, 0] / safe_z + intr.cx
    uv[:, 1] = intr.fy * pts_cam[:, 1] / safe_z + intr.cy
    return uv, z, valid


def unproject(intr: CameraIntrinsics, u, v, depth):
    """Camera-frame point whose projection is (u, v) at the given depth."""
    return np.array([(u - intr.cx) * depth / intr.fx,
                     (v - intr.cy) * depth / intr.fy,
                     depth])


def in_frustum(intr: CameraIntrinsics, pose: Pose, p) -> bool:
    u, v, z, valid = project(intr, pose.apply(np.asarray(p).reshape(1, 3))[0])
    return bool(valid and 0.0 <= u < intr.width and 0.0 <= v < intr.height)


def in_frustum_many(intr: CameraIntrinsics, pose: Pose, pts):
    uv, _, valid = project_many(intr, pose.apply(pts))
    inside = (uv[:, 0] >= 0.0) & (uv[:, 0] < intr.width) & (uv[:, 1] >= 0.0) & (uv[:, 1] < intr.height)
    return valid & inside


def euler_angles(rotation) -> np.ndarray:
    """XYZ-intrinsic Euler angles (degrees) with R = Rx(a) @ Ry(b) @ Rz(c).

    In the gimbal-lock region (|R[0,2]| ~ 1) the canonical branch sets the
    third angle to zero.
    """
    r = np.asarray(rotation, dtype=np.float64)
    sb = r[0, 2]
    if abs(sb) < 1.0 - 1e-10:
        beta = math.asin(sb)
        alpha = math.atan2(-r[1, 2], r[2, 2])
        gamma = math.atan2(-r[0, 1], r[0, 0])
    else:
        beta = math.copysign(math.pi / 2.0, sb)
        alpha = math.atan2(r[1, 0], r[1, 1])
        gamma = 0.0
    return np.degrees([alpha, beta, gamma])


def euler_to_matrix(angles_deg) -> np.ndarray:
    """Inverse of euler_angles: Rx(a) @ Ry(b) @ Rz(c) from degrees."""
    a, b, c = np.radians(np.asarray(angles_deg, dtype=np.float64))
    ca, sa, cb, sbn, cc, sc = math.cos(a), math.sin(a), math.cos(b), math.sin(b), math.cos(c), math.sin(c)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sbn], [0, 1, 0], [-sbn, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    return rx @ ry @ rz


def rotation_about(axis: str, degrees: float) -> np.ndarray:
    angles = {"x": (degrees, 0, 0), "y": (0, degrees, 0), "z": (0, 0, degrees)}[axis]
    return euler_to_matrix(angles)
