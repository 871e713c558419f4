"""Camera models, rigid transforms and the point-cloud value type.

Coordinate conventions (fixed repo-wide):
  Camera frame: +Z forward (optical axis), +X right, +Y down.
  Image frame:  pixel origin at the top-left, u right, v down, units pixels.
  Pose:         a rigid map x -> R x + t. Camera poses are stored
                CAMERA-TO-WORLD (applying a camera's pose maps camera-frame
                points into the world), so projection applies the inverse.

All values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Behind-camera cutoff for projection, meters.
EPSILON_Z = 1e-6


def _as_matrix(value, shape, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3, orthonormal, det +1) plus translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = _as_matrix(self.rotation, (3, 3), "rotation")
        tra = _as_matrix(self.translation, (3,), "translation")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I|max = {err:.2e})")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation has negative determinant (reflection)")
        rot.setflags(write=False)
        tra.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map world points (3,) or (N,3) through x -> R x + t."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        rot_inv = self.rotation.T
        return Pose(rot_inv, -rot_inv @ self.translation)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = _as_matrix(m, (4, 4), "matrix")
        return Pose(m[:3, :3], m[:3, 3])

    def orthonormalized(self) -> "Pose":
        """Snap the rotation back onto SO(3); use after long composition chains."""
        u, _, vt = np.linalg.svd(self.rotation)
        rot = u @ vt
        if np.linalg.det(rot) < 0:
            u[:, -1] = -u[:, -1]
            rot = u @ vt
        return Pose(rot, self.translation)

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (
            np.abs(self.rotation - other.rotation).max() <= tol
            and np.abs(self.translation - other.translation).max() <= tol
        )

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(d["rotation"], d["translation"])


def compose(a: Pose, b: Pose) -> Pose:
    """Pose mapping x -> a(b(x))."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    return p.inverse()


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def look_at(eye, target, down=(0.0, 1.0, 0.0)) -> Pose:
    """Camera-to-world pose for a camera at `eye` looking at `target`.

    `down` is the world direction the camera's +Y axis should roughly align
    with (the world default here is +Y down, matching the camera convention).
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    down = np.asarray(down, dtype=np.float64)
    fwd = target - eye
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ValueError("look_at: eye and target coincide")
    fwd = fwd / norm
    right = np.cross(down, fwd)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise ValueError("look_at: view direction is parallel to the down axis")
    right = right / norm
    cam_down = np.cross(fwd, right)
    rot = np.stack([right, cam_down, fwd], axis=1)
    return Pose(rot, eye)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; fx/fy/cx/cy in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    @staticmethod
    def simple(width: int, height: int, fov_x: float = np.pi / 2) -> "Intrinsics":
        """Square-pixel intrinsics from a horizontal field of view (radians)."""
        fx = width / (2.0 * np.tan(fov_x / 2.0))
        return Intrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                          width=width, height=height)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_dict(d: dict) -> "Intrinsics":
        return Intrinsics(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                          width=int(d["width"]), height=int(d["height"]))


class BehindCameraError(ValueError):
    """Raised when a single-point projection is requested for Zc <= epsilon_z."""


def project_points(points, cam_pose: Pose, intr: Intrinsics, epsilon_z: float = EPSILON_Z):
    """Project world points into the image.

    Args:
        points: (N,3) world coordinates.
        cam_pose: camera-to-world pose of the viewing camera.

    Returns:
        (pixels (N,2), depth (N,), valid (N,) bool). Entries with Zc <= epsilon_z
        are marked invalid and their pixel/depth values are unspecified.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    w2c = cam_pose.inverse()
    cam = pts @ w2c.rotation.T + w2c.translation
    z = cam[:, 2]
    valid = z > epsilon_z
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    return np.stack([u, v], axis=1), z, valid


def project(point, cam_pose: Pose, intr: Intrinsics, epsilon_z: float = EPSILON_Z):
    """Project one world point; returns (pixel (2,), depth) or None if behind the camera."""
    pix, z, valid = project_points(np.asarray(point, dtype=np.float64)[None, :],
                                   cam_pose, intr, epsilon_z)
    if not valid[0]:
        return None
    return pix[0], float(z[0])


def back_project(pixels, depths, cam_pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Lift pixels with depths (camera-frame Zc, meters) to world points.

    Accepts a single (2,) pixel with a scalar depth or (N,2)/(N,) arrays.
    Inverse of `project`: project(back_project(u, d)) == (u, d) for d > 0.
    """
    pix = np.asarray(pixels, dtype=np.float64)
    single = pix.ndim == 1
    pix = pix.reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    if d.shape[0] != pix.shape[0]:
        raise ValueError("pixels and depths must have matching lengths")
    if np.any(d <= 0):
        raise ValueError("back_project requires strictly positive depth")
    x = (pix[:, 0] - intr.cx) / intr.fx * d
    y = (pix[:, 1] - intr.cy) / intr.fy * d
    cam = np.stack([x, y, d], axis=1)
    world = cam_pose.apply(cam)
    return world[0] if single else world


@dataclass(frozen=True)
class PointCloud:
    """Colored point cloud; positions in meters, colors in [0,1]."""

    positions: np.ndarray
    colors: np.ndarray
    source_ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        col = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(pos) != len(col):
            raise ValueError("positions and colors must have equal length")
        if len(col) and (col.min() < 0.0 or col.max() > 1.0):
            raise ValueError("colors must lie in [0,1]")
        ids = self.source_ids
        if ids is not None:
            ids = np.asarray(ids, dtype=np.int64).reshape(-1)
            if len(ids) != len(pos):
                raise ValueError("source_ids must match point count")
            ids.setflags(write=False)
        pos.setflags(write=False)
        col.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "source_ids", ids)

    def __len__(self) -> int:
        return len(self.positions)

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))


def transform_cloud(cloud: PointCloud, p: Pose) -> PointCloud:
    """Map every position through `p`; colors and ids untouched."""
    return PointCloud(p.apply(cloud.positions), cloud.colors, cloud.source_ids)


def concat_clouds(clouds) -> PointCloud:
    clouds = [c for c in clouds if len(c)]
    if not clouds:
        return PointCloud.empty()
    have_ids = all(c.source_ids is not None for c in clouds)
    return PointCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
        np.concatenate([c.source_ids for c in clouds]) if have_ids else None,
    )
