"""View-specific projections of the scene point cloud.

Point-splat rendering with a z-buffer: within a point's splat disc a pixel
takes the color of the nearest-depth point; depth ties are broken by the
lower point index so renders are bit-reproducible. Pixels no point touches
are invalid and zero-filled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import EPSILON_Z, Intrinsics, PointCloud, Pose, back_project, project_points


@dataclass(frozen=True)
class ProjectionImage:
    """Splat render: rgb zero and depth zero wherever validity is False."""

    rgb: np.ndarray        # (H,W,3) float32
    validity: np.ndarray   # (H,W) bool
    depth: np.ndarray      # (H,W) float32, 0 where invalid

    def __post_init__(self):
        if self.rgb.shape[:2] != self.validity.shape or self.depth.shape != self.validity.shape:
            raise ValueError("rgb/validity/depth dimensions disagree")


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera path: one (pose, intrinsics) per output frame."""

    poses: tuple[Pose, ...]
    intrinsics: tuple[Intrinsics, ...]

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ValueError("trajectory needs at least one pose")
        if len(self.intrinsics) == 1 and len(self.poses) > 1:
            object.__setattr__(self, "intrinsics", self.intrinsics * len(self.poses))
        if len(self.poses) != len(self.intrinsics):
            raise ValueError("poses and intrinsics must align")
        w, h = self.intrinsics[0].width, self.intrinsics[0].height
        for intr in self.intrinsics:
            if (intr.width, intr.height) != (w, h):
                raise ValueError("all intrinsics must share width/height")

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.poses, self.intrinsics))

    @staticmethod
    def from_poses(poses, intr: Intrinsics) -> "Trajectory":
        return Trajectory(tuple(poses), (intr,))

    def reversed(self) -> "Trajectory":
        return Trajectory(tuple(reversed(self.poses)), tuple(reversed(self.intrinsics)))

    def to_dict(self) -> dict:
        return {
            "poses": [p.to_dict() for p in self.poses],
            "intrinsics": self.intrinsics[0].to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Trajectory":
        intr = Intrinsics.from_dict(d["intrinsics"])
        poses = tuple(Pose.from_dict(p) for p in d["poses"])
        return Trajectory(poses, (intr,))


class ProjectionVideo:
    """Sequence of ProjectionImages rendered along a trajectory."""

    def __init__(self, frames):
        self.frames: list[ProjectionImage] = list(frames)
        if not self.frames:
            raise ValueError("projection video needs at least one frame")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i) -> ProjectionImage:
        return self.frames[i]

    def rgb_array(self) -> np.ndarray:
        return np.stack([f.rgb for f in self.frames])

    def validity_array(self) -> np.ndarray:
        return np.stack([f.validity for f in self.frames])

    def depth_array(self) -> np.ndarray:
        return np.stack([f.depth for f in self.frames])


def _splat_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    if r < 0:
        raise ValueError("splat radius must be >= 0")
    grid = np.arange(-r, r + 1)
    dx, dy = np.meshgrid(grid, grid)
    keep = dx * dx + dy * dy <= r * r
    return np.stack([dx[keep], dy[keep]], axis=1)


def render_projection(cloud: PointCloud, cam: Pose, intr: Intrinsics,
                      splat_radius: int = 1, epsilon_z: float = EPSILON_Z) -> ProjectionImage:
    """Render the cloud from one viewpoint with z-buffered point splats."""
    h, w = intr.height, intr.width
    rgb = np.zeros((h, w, 3), dtype=np.float32)
    validity = np.zeros((h, w), dtype=bool)
    depth_out = np.zeros((h, w), dtype=np.float32)
    if len(cloud) == 0:
        return ProjectionImage(rgb, validity, depth_out)

    pix, z, valid = project_points(cloud.positions, cam, intr, epsilon_z)
    if not valid.any():
        return ProjectionImage(rgb, validity, depth_out)
    r = int(splat_radius)
    centers = np.rint(pix[valid]).astype(np.int64)
    z = z[valid]
    idx = np.nonzero(valid)[0]
    inside = ((centers[:, 0] >= -r) & (centers[:, 0] < w + r)
              & (centers[:, 1] >= -r) & (centers[:, 1] < h + r))
    if not inside.any():
        return ProjectionImage(rgb, validity, depth_out)
    centers = centers[inside]
    z = z[inside]
    idx = idx[inside]

    # Candidate (pixel, depth, point-index) triples over every splat offset.
    flat_list, depth_list, idx_list = [], [], []
    for dx, dy in _splat_offsets(splat_radius):
        px = centers[:, 0] + dx
        py = centers[:, 1] + dy
        ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        if not ok.any():
            continue
        flat_list.append(py[ok] * w + px[ok])
        depth_list.append(z[ok])
        idx_list.append(idx[ok])
    if not flat_list:
        return ProjectionImage(rgb, validity, depth_out)
    flat = np.concatenate(flat_list)
    depths = np.concatenate(depth_list)
    indices = np.concatenate(idx_list)

    # Two well-defined scatter-min passes: nearest depth, then lowest index
    # among the depth winners (the documented tie-break).
    zbuf = np.full(h * w, np.inf)
    np.minimum.at(zbuf, flat, depths)
    on_front = depths == zbuf[flat]
    winner = np.full(h * w, len(cloud), dtype=np.int64)
    np.minimum.at(winner, flat[on_front], indices[on_front])

    touched = winner < len(cloud)
    validity = touched.reshape(h, w)
    win_idx = winner[touched]
    rgb_flat = rgb.reshape(-1, 3)
    rgb_flat[touched] = cloud.colors[win_idx].astype(np.float32)
    depth_flat = depth_out.reshape(-1)
    depth_flat[touched] = zbuf[touched].astype(np.float32)
    return ProjectionImage(rgb, validity, depth_out)


def render_sequence(cloud: PointCloud, traj: Trajectory,
                    splat_radius: int = 1) -> ProjectionVideo:
    """Render one ProjectionImage per trajectory entry (deterministic)."""
    return ProjectionVideo(render_projection(cloud, pose, intr, splat_radius)
                           for pose, intr in traj)


def projection_to_view_cloud(img: ProjectionImage, cam: Pose, intr: Intrinsics,
                             world_frame: bool = True) -> PointCloud:
    """Back-project a projection's valid pixels into a view-specific cloud.

    With world_frame=False the points stay in the rendering camera's frame
    (register them with the relative pose before comparing to another view).
    """
    vs, us = np.nonzero(img.validity)
    if len(vs) == 0:
        return PointCloud.empty()
    pix = np.stack([us, vs], axis=1).astype(np.float64)
    depths = img.depth[vs, us].astype(np.float64)
    pose = cam if world_frame else Pose.identity()
    pts = back_project(pix, depths, pose, intr)
    return PointCloud(pts, img.rgb[vs, us].astype(np.float64))


# -- disk formats (see docs/formats.md) ---------------------------------------


def save_projection_video(video: ProjectionVideo, out_dir) -> None:
    """PNG frame directory + raw .npy tensors + 1-bit validity PNGs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video.frames):
        Image.fromarray((frame.rgb * 255.0 + 0.5).astype(np.uint8)).save(
            out / f"frame_{i:04d}.png")
        Image.fromarray(frame.validity).convert("1").save(
            out / f"validity_{i:04d}.png")
    np.save(out / "rgb.npy", video.rgb_array())
    np.save(out / "depth.npy", video.depth_array())
    np.save(out / "validity.npy", video.validity_array())
    (out / "meta.json").write_text(json.dumps(
        {"frames": len(video), "height": video.frames[0].rgb.shape[0],
         "width": video.frames[0].rgb.shape[1], "version": 1}, indent=2))


def load_projection_video(in_dir) -> ProjectionVideo:
    src = Path(in_dir)
    rgb = np.load(src / "rgb.npy")
    depth = np.load(src / "depth.npy")
    validity = np.load(src / "validity.npy")
    return ProjectionVideo(
        ProjectionImage(rgb[i], validity[i], depth[i]) for i in range(len(rgb)))
