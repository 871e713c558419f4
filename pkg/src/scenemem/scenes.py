"""Procedural synthetic scenes with exact renders, depths, poses and masks.

A scene is a closed room (axis-aligned box, +Y down so the floor is at
y = extent_y) holding colored static primitives and optional dynamic
entities on periodic paths. Rendering is analytic ray casting, so depths
are exact and dynamic masks are oracle-precise. Also houses training-sample
assembly: clip splitting, scene-cloud construction from a sampled candidate
frame, view-specific projections, and reference retrieval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .frames import Frame
from .geometry import Intrinsics, PointCloud, Pose, rot_x, rot_y
from .projection import (ProjectionVideo, Trajectory, projection_to_view_cloud,
                         render_projection)
from .retrieval import RetrievalConfig, retrieve_references
from .voxel_memory import DEFAULT_CUBE_SIDE, SpatialMemory

BACKGROUND_COLOR = np.zeros(3, dtype=np.float64)
NO_HIT_DEPTH = 100.0  # sentinel written where a ray leaves the scene

INSTRUCTIONS = (
    "orbit_left", "orbit_right", "pan_left", "pan_right",
    "dolly_in", "dolly_out", "strafe_left", "strafe_right",
    "pan_up", "pan_down", "arc_left", "arc_right",
    "sweep_left", "sweep_right", "push_left", "push_right",
)


@dataclass(frozen=True)
class StaticPrimitive:
    """Axis-aligned colored box (optional yaw) or sphere inside the room."""

    shape: str                      # "box" | "sphere"
    center: np.ndarray
    color: np.ndarray
    size: np.ndarray | None = None  # box extents
    radius: float | None = None
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64))
        if self.size is not None:
            object.__setattr__(self, "size", np.asarray(self.size, dtype=np.float64))

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "center": self.center.tolist(),
             "color": self.color.tolist(), "yaw": self.yaw}
        if self.shape == "box":
            d["size"] = self.size.tolist()
        else:
            d["radius"] = self.radius
        return d

    @staticmethod
    def from_dict(d: dict) -> "StaticPrimitive":
        return StaticPrimitive(shape=d["shape"], center=d["center"], color=d["color"],
                               size=d.get("size"), radius=d.get("radius"),
                               yaw=d.get("yaw", 0.0))


@dataclass(frozen=True)
class DynamicEntity:
    """A primitive oscillating along a direction: c(t) = base + amp*sin(2π f t + φ)*dir."""

    primitive: StaticPrimitive
    direction: np.ndarray
    amplitude: float
    frequency: float
    phase: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValueError("dynamic entity needs a nonzero direction")
        object.__setattr__(self, "direction", d / n)

    def center_at(self, time: float) -> np.ndarray:
        offset = self.amplitude * np.sin(2.0 * np.pi * self.frequency * time + self.phase)
        return self.primitive.center + offset * self.direction

    def primitive_at(self, time: float) -> StaticPrimitive:
        return replace(self.primitive, center=self.center_at(time))

    def to_dict(self) -> dict:
        return {"primitive": self.primitive.to_dict(),
                "direction": self.direction.tolist(), "amplitude": self.amplitude,
                "frequency": self.frequency, "phase": self.phase}

    @staticmethod
    def from_dict(d: dict) -> "DynamicEntity":
        return DynamicEntity(primitive=StaticPrimitive.from_dict(d["primitive"]),
                             direction=d["direction"], amplitude=d["amplitude"],
                             frequency=d["frequency"], phase=d.get("phase", 0.0))


@dataclass(frozen=True)
class SceneSpec:
    """Fully deterministic scene description (the seed pins everything)."""

    seed: int
    extents: np.ndarray                    # room size (x, y=height, z), meters
    wall_colors: np.ndarray                # (6,3): -x +x -y +y -z +z faces
    checker_scale: float
    statics: tuple[StaticPrimitive, ...]
    dynamics: tuple[DynamicEntity, ...]
    instruction_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "extents", np.asarray(self.extents, dtype=np.float64))
        object.__setattr__(self, "wall_colors", np.asarray(self.wall_colors, dtype=np.float64))

    @property
    def center(self) -> np.ndarray:
        return self.extents / 2.0

    def duration(self) -> float:
        return 1e9  # periodic motion: any non-negative time is valid

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "extents": self.extents.tolist(),
            "wall_colors": self.wall_colors.tolist(),
            "checker_scale": self.checker_scale,
            "statics": [s.to_dict() for s in self.statics],
            "dynamics": [e.to_dict() for e in self.dynamics],
            "instruction_id": self.instruction_id,
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        return SceneSpec(
            seed=d["seed"], extents=d["extents"], wall_colors=d["wall_colors"],
            checker_scale=d["checker_scale"],
            statics=tuple(StaticPrimitive.from_dict(s) for s in d["statics"]),
            dynamics=tuple(DynamicEntity.from_dict(e) for e in d["dynamics"]),
            instruction_id=d.get("instruction_id", 0),
        )


@dataclass(frozen=True)
class SceneParams:
    """Ranges for procedural generation; all sampling is seed-deterministic."""

    extent_range: tuple[float, float] = (3.6, 5.0)
    height_range: tuple[float, float] = (2.4, 3.2)
    num_static: tuple[int, int] = (2, 5)
    num_dynamic: tuple[int, int] = (0, 0)
    checker_range: tuple[float, float] = (0.35, 0.7)
    clearance: float = 1.1  # statics keep this horizontal distance from room center

    def __post_init__(self):
        if self.extent_range[0] <= 0 or self.height_range[0] <= 0:
            raise ValueError("room extents must be positive")


def _random_color(rng: np.random.Generator) -> np.ndarray:
    # Bright, saturated-ish colors; avoids near-black walls.
    c = rng.uniform(0.15, 1.0, size=3)
    c[rng.integers(0, 3)] = rng.uniform(0.7, 1.0)
    return c


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> SceneSpec:
    """Deterministic procedural room; raises on degenerate parameter ranges."""
    rng = np.random.default_rng(seed)
    ex = rng.uniform(*params.extent_range)
    ey = rng.uniform(*params.height_range)
    ez = rng.uniform(*params.extent_range)
    extents = np.array([ex, ey, ez])
    center = extents / 2.0
    wall_colors = np.stack([_random_color(rng) for _ in range(6)])
    checker = rng.uniform(*params.checker_range)

    statics: list[StaticPrimitive] = []
    n_static = int(rng.integers(params.num_static[0], params.num_static[1] + 1))
    n_static = max(1, n_static)
    for _ in range(n_static):
        angle = rng.uniform(0, 2 * np.pi)
        ring = rng.uniform(params.clearance, max(params.clearance + 0.1,
                                                 min(ex, ez) / 2.0 - 0.45))
        cx = center[0] + ring * np.cos(angle)
        cz = center[2] + ring * np.sin(angle)
        if rng.uniform() < 0.6:
            size = rng.uniform(0.3, 0.8, size=3)
            # Horizontal clearance covers any yaw of the box footprint.
            m = float(np.hypot(size[0], size[2]) / 2.0 + 0.02)
            cx = np.clip(cx, m, ex - m)
            cz = np.clip(cz, m, ez - m)
            cy = ey - size[1] / 2.0  # resting on the floor (+Y down)
            statics.append(StaticPrimitive("box", (cx, cy, cz), _random_color(rng),
                                           size=size, yaw=rng.uniform(0, np.pi)))
        else:
            radius = rng.uniform(0.15, 0.35)
            cx = np.clip(cx, radius + 0.02, ex - radius - 0.02)
            cz = np.clip(cz, radius + 0.02, ez - radius - 0.02)
            cy = ey - radius
            statics.append(StaticPrimitive("sphere", (cx, cy, cz),
                                           _random_color(rng), radius=radius))

    dynamics: list[DynamicEntity] = []
    n_dyn = int(rng.integers(params.num_dynamic[0], params.num_dynamic[1] + 1))
    for _ in range(n_dyn):
        radius = rng.uniform(0.1, 0.2)
        base = np.array([
            rng.uniform(0.8, ex - 0.8),
            rng.uniform(ey * 0.4, ey - radius - 0.05),
            rng.uniform(0.8, ez - 0.8),
        ])
        theta = rng.uniform(0, 2 * np.pi)
        direction = np.array([np.cos(theta), 0.0, np.sin(theta)])
        max_amp = min(base[0] - radius - 0.05, ex - base[0] - radius - 0.05,
                      base[2] - radius - 0.05, ez - base[2] - radius - 0.05)
        amp = rng.uniform(0.2, max(0.25, min(0.8, max_amp)))
        prim = StaticPrimitive("sphere", base, _random_color(rng), radius=radius)
        dynamics.append(DynamicEntity(prim, direction, amplitude=amp,
                                      frequency=rng.uniform(0.1, 0.3),
                                      phase=rng.uniform(0, 2 * np.pi)))

    return SceneSpec(seed=seed, extents=extents, wall_colors=wall_colors,
                     checker_scale=checker, statics=tuple(statics),
                     dynamics=tuple(dynamics),
                     instruction_id=int(rng.integers(0, len(INSTRUCTIONS))))


def scene_contains(scene: SceneSpec, times=(0.0,)) -> bool:
    """True if every primitive stays inside the room at the probed times."""
    lo = np.zeros(3)
    hi = scene.extents

    def prim_ok(p: StaticPrimitive) -> bool:
        if p.shape == "sphere":
            return bool(np.all(p.center - p.radius >= lo - 1e-9)
                        and np.all(p.center + p.radius <= hi + 1e-9))
        half = p.size / 2.0
        signs = np.array([[sx, sy, sz] for sx in (-1, 1)
                          for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        corners = p.center + (signs * half) @ rot_y(p.yaw).T
        return bool(np.all(corners >= lo - 1e-9) and np.all(corners <= hi + 1e-9))

    if not all(prim_ok(p) for p in scene.statics):
        return False
    for t in times:
        if not all(prim_ok(e.primitive_at(t)) for e in scene.dynamics):
            return False
    return True


# -- ray casting ---------------------------------------------------------------


def _ray_box(origins, dirs, center, size, yaw):
    """Entry distance and face info for an oriented box; inf where missed."""
    if yaw != 0.0:
        r_inv = rot_y(-yaw)
        o = (origins - center) @ r_inv.T
        v = dirs @ r_inv.T
    else:
        o = origins - center
        v = dirs
    half = size / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / v
        t2 = (half - o) / v
    t_near_ax = np.minimum(t1, t2)
    t_far_ax = np.maximum(t1, t2)
    # Parallel rays: only hit if the origin is inside that slab.
    par = np.abs(v) < 1e-12
    inside = (o >= -half) & (o <= half)
    t_near_ax = np.where(par, np.where(inside, -np.inf, np.inf), t_near_ax)
    t_far_ax = np.where(par, np.where(inside, np.inf, -np.inf), t_far_ax)
    t_near = t_near_ax.max(axis=1)
    t_far = t_far_ax.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    axis = t_near_ax.argmax(axis=1)
    t_entry = np.where(hit, t_near, np.inf)
    # Face shading factor keyed on entry axis.
    shade = np.choose(axis, [1.0, 0.8, 0.9])
    return t_entry, shade


def _ray_sphere(origins, dirs, center, radius):
    oc = origins - center
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2.0 * np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - 4 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = (-b - sq) / (2 * a)
    t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > 1e-9, t0, t1)
    hit = ok & (t > 1e-9)
    return np.where(hit, t, np.inf)


def _wall_hit(scene: SceneSpec, origins, dirs):
    """Exit distance through the room walls plus per-ray wall color."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (scene.extents - origins) / dirs
        t_lo = (0.0 - origins) / dirs
    t_exit_ax = np.where(dirs > 1e-12, t_hi,
                         np.where(dirs < -1e-12, t_lo, np.inf))
    axis = t_exit_ax.argmin(axis=1)
    t_exit = t_exit_ax.min(axis=1)
    inside = np.all((origins >= -1e-9) & (origins <= scene.extents + 1e-9), axis=1)
    ok = inside & np.isfinite(t_exit) & (t_exit > 1e-9)
    face = axis * 2 + (np.take_along_axis(dirs, axis[:, None], axis=1)[:, 0] > 0)

    hit_pts = origins + t_exit[:, None] * dirs
    colors = scene.wall_colors[face]
    # Checker pattern over the two in-plane axes gives walls spatial texture.
    cells = np.floor(hit_pts / scene.checker_scale + 1e-9).astype(np.int64)
    plane_sum = cells.sum(axis=1) - np.take_along_axis(cells, axis[:, None], axis=1)[:, 0]
    checker = (plane_sum % 2 == 0)
    colors = colors * np.where(checker[:, None], 1.0, 0.72)
    return np.where(ok, t_exit, np.inf), colors


def render_gt(scene: SceneSpec, cam: Pose, intr: Intrinsics, time: float = 0.0):
    """Analytic render: (rgb (H,W,3) f32, depth (H,W) f32 = camera Zc, dynamic mask).

    Rays through pixel centers carry dir_cam.z = 1, so the ray parameter IS
    the camera-frame depth. Rays that leave the scene get BACKGROUND_COLOR
    and the NO_HIT_DEPTH sentinel.
    """
    if time < 0:
        raise ValueError("time must be non-negative")
    h, w = intr.height, intr.width
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    dir_cam = np.stack([(us.ravel() - intr.cx) / intr.fx,
                        (vs.ravel() - intr.cy) / intr.fy,
                        np.ones(h * w)], axis=1)
    dirs = dir_cam @ cam.rotation.T
    origins = np.broadcast_to(cam.translation, dirs.shape)

    depth, colors = _wall_hit(scene, origins, dirs)
    dynamic = np.zeros(h * w, dtype=bool)

    def apply_prim(prim: StaticPrimitive, is_dynamic: bool):
        nonlocal depth, colors, dynamic
        if prim.shape == "box":
            t, shade = _ray_box(origins, dirs, prim.center, prim.size, prim.yaw)
            col = prim.color[None, :] * shade[:, None]
        else:
            t = _ray_sphere(origins, dirs, prim.center, prim.radius)
            t_safe = np.where(np.isfinite(t), t, 0.0)
            pts = origins + t_safe[:, None] * dirs
            normal = (pts - prim.center) / prim.radius
            lam = np.einsum("ij,ij->i", normal, -dirs)
            lam = lam / np.maximum(np.linalg.norm(dirs, axis=1), 1e-12)
            shade = 0.6 + 0.4 * np.clip(lam, 0.0, 1.0)
            col = prim.color[None, :] * shade[:, None]
        closer = t < depth
        depth = np.where(closer, t, depth)
        colors = np.where(closer[:, None], col, colors)
        dynamic = np.where(closer, is_dynamic, dynamic)

    for prim in scene.statics:
        apply_prim(prim, False)
    for ent in scene.dynamics:
        apply_prim(ent.primitive_at(time), True)

    miss = ~np.isfinite(depth)
    colors = np.where(miss[:, None], BACKGROUND_COLOR, colors)
    depth = np.where(miss, NO_HIT_DEPTH, depth)
    rgb = np.clip(colors, 0.0, 1.0).reshape(h, w, 3).astype(np.float32)
    return rgb, depth.reshape(h, w).astype(np.float32), dynamic.reshape(h, w)


def render_frame(scene: SceneSpec, cam: Pose, intr: Intrinsics,
                 time: float = 0.0, frame_id: int = -1) -> Frame:
    rgb, depth, mask = render_gt(scene, cam, intr, time)
    return Frame(rgb=rgb, pose=cam, intrinsics=intr, depth=depth,
                 dynamic_mask=mask, frame_id=frame_id)


# -- camera paths --------------------------------------------------------------


def heading_pose(eye, yaw: float, pitch: float = 0.0) -> Pose:
    """Camera-to-world pose from a world position, yaw about +Y and pitch."""
    return Pose(rot_y(yaw) @ rot_x(pitch), np.asarray(eye, dtype=np.float64))


def initial_pose(scene: SceneSpec) -> Pose:
    """Camera slightly behind the room center, level, looking along +Z."""
    eye = scene.center + np.array([0.0, -0.15 * scene.extents[1], -0.25 * scene.extents[2]])
    return heading_pose(eye, yaw=0.0, pitch=0.0)


def make_clip_trajectory(scene: SceneSpec, kind: str, n_frames: int,
                         intr: Intrinsics, rng: np.random.Generator | None = None,
                         start: Pose | None = None, scale: float = 1.0) -> Trajectory:
    """Smooth per-instruction camera path starting at `start` (or the scene default)."""
    if kind not in INSTRUCTIONS:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    rng = rng or np.random.default_rng(0)
    start = start or initial_pose(scene)
    eye0 = start.translation.copy()
    # Recover yaw/pitch from the start rotation's forward axis:
    # fwd = (sin(yaw) cos(pitch), -sin(pitch), cos(yaw) cos(pitch)).
    fwd = start.rotation[:, 2]
    yaw0 = float(np.arctan2(fwd[0], fwd[2]))
    pitch0 = float(np.arcsin(np.clip(-fwd[1], -1.0, 1.0)))

    turn = rng.uniform(0.55, 0.85) * scale
    move = rng.uniform(0.5, 0.9) * scale
    poses = []
    for i in range(n_frames):
        s = i / max(1, n_frames - 1)
        eye, yaw, pitch = eye0.copy(), yaw0, pitch0
        if kind in ("pan_left", "pan_right"):
            yaw += turn * s * (1 if kind == "pan_left" else -1)
        elif kind in ("orbit_left", "orbit_right"):
            sign = 1 if kind == "orbit_left" else -1
            pivot = eye0 + rot_y(yaw0) @ np.array([0.0, 0.0, 1.4])
            ang = sign * turn * s
            eye = pivot + rot_y(ang) @ (eye0 - pivot)
            yaw += ang
        elif kind in ("dolly_in", "dolly_out"):
            sign = 1 if kind == "dolly_in" else -1
            eye = eye0 + rot_y(yaw0) @ np.array([0.0, 0.0, sign * move * s])
        elif kind in ("strafe_left", "strafe_right"):
            sign = -1 if kind == "strafe_left" else 1
            eye = eye0 + rot_y(yaw0) @ np.array([sign * move * s, 0.0, 0.0])
        elif kind in ("pan_up", "pan_down"):
            pitch += 0.45 * turn * s * (-1 if kind == "pan_up" else 1)
        elif kind in ("arc_left", "arc_right"):
            sign = 1 if kind == "arc_left" else -1
            yaw += sign * turn * s
            eye = eye0 + np.array([0.0, -0.25 * move * s, 0.0])
        elif kind in ("sweep_left", "sweep_right"):
            sign = 1 if kind == "sweep_left" else -1
            yaw += sign * turn * s
            eye = eye0 + rot_y(yaw0) @ np.array([-sign * move * s, 0.0, 0.0])
        else:  # push_left / push_right
            sign = -1 if kind == "push_left" else 1
            eye = eye0 + rot_y(yaw0) @ np.array([sign * 0.6 * move * s, 0.0, 0.55 * move * s])
        poses.append(heading_pose(eye, yaw, pitch))
    return Trajectory.from_poses(poses, intr)


def out_and_back(out_traj: Trajectory) -> Trajectory:
    """Palindromic trajectory: out then exactly back (last pose = first pose)."""
    back = list(out_traj.poses[::-1])
    return Trajectory(tuple(out_traj.poses) + tuple(back),
                      tuple(out_traj.intrinsics) + tuple(out_traj.intrinsics[::-1]))


# -- training-sample assembly ----------------------------------------------------


def split_indices(n_frames: int, n_target: int, n_preceding: int,
                  rng: np.random.Generator):
    """Random contiguous target window with its immediate predecessors."""
    if n_frames < n_target + n_preceding:
        raise ValueError("video too short for the requested split")
    start = int(rng.integers(n_preceding, n_frames - n_target + 1))
    t_idx = list(range(start, start + n_target))
    p_idx = list(range(start - n_preceding, start))
    c_idx = [i for i in range(n_frames) if i not in t_idx and i not in p_idx]
    return t_idx, p_idx, c_idx


def split_video(frames, n_target: int, n_preceding: int, rng: np.random.Generator):
    """Split posed frames into (target clip, preceding clip, candidate set)."""
    t_idx, p_idx, c_idx = split_indices(len(frames), n_target, n_preceding, rng)
    return ([frames[i] for i in t_idx], [frames[i] for i in p_idx],
            [frames[i] for i in c_idx])


@dataclass
class TrainingSample:
    """Everything one training step needs, fully materialized."""

    target_frames: list[Frame]
    preceding_frames: list[Frame]
    candidate_frames: list[Frame]
    ref_ids: list[int]
    ref_frames: list[Frame]
    proj_target: ProjectionVideo
    proj_preceding: ProjectionVideo
    proj_candidates: ProjectionVideo | None
    scene_cloud: PointCloud
    instruction_id: int
    scene_seed: int = 0


def assemble_sample(scene: SceneSpec, trajectory: Trajectory, n_target: int,
                    n_preceding: int, cfg: RetrievalConfig,
                    rng: np.random.Generator, *, memory_d: float = DEFAULT_CUBE_SIDE,
                    splat_radius: int = 1, fps: float = 8.0,
                    cloud_source: str = "single") -> TrainingSample:
    """Render, split, build the scene cloud and retrieve references.

    The global static cloud comes from a single randomly sampled candidate
    frame's unmasked depth (cloud_source="all" fuses every candidate instead,
    for ablations). View-specific clouds are the cloud's visible subsets,
    obtained by rendering at each frame's pose and back-projecting.
    """
    if len(trajectory) < n_target + n_preceding:
        raise ValueError("trajectory too short for the requested split")
    frames = [render_frame(scene, pose, intr, time=i / fps, frame_id=i)
              for i, (pose, intr) in enumerate(trajectory)]
    t_idx, p_idx, c_idx = split_indices(len(frames), n_target, n_preceding, rng)

    mem = SpatialMemory(cube_side=memory_d)
    if cloud_source == "all" and c_idx:
        for i in c_idx:
            mem.fuse_frame(frames[i])
    else:
        # Fall back to the first preceding frame if the split left no candidates.
        src = int(rng.choice(c_idx)) if c_idx else p_idx[0]
        mem.fuse_frame(frames[src])
    cloud = mem.snapshot()

    projections = []
    view_clouds = []
    for frame in frames:
        proj = render_projection(cloud, frame.pose, frame.intrinsics, splat_radius)
        projections.append(proj)
        view_clouds.append(projection_to_view_cloud(proj, frame.pose, frame.intrinsics))

    ref_ids = retrieve_references([view_clouds[i] for i in t_idx],
                                  [(i, view_clouds[i]) for i in c_idx], cfg)
    return TrainingSample(
        target_frames=[frames[i] for i in t_idx],
        preceding_frames=[frames[i] for i in p_idx],
        candidate_frames=[frames[i] for i in c_idx],
        ref_ids=ref_ids,
        ref_frames=[frames[i] for i in ref_ids],
        proj_target=ProjectionVideo(projections[i] for i in t_idx),
        proj_preceding=ProjectionVideo(projections[i] for i in p_idx),
        proj_candidates=ProjectionVideo(projections[i] for i in c_idx) if c_idx else None,
        scene_cloud=cloud,
        instruction_id=scene.instruction_id,
        scene_seed=scene.seed,
    )


@dataclass(frozen=True)
class DatasetParams:
    """Knobs for dataset synthesis; N/M/O proportions are deliberately exposed."""

    resolution: int = 128
    fov_x: float = np.pi / 2
    n_target: int = 9
    n_preceding: int = 3
    n_candidates: int = 12
    memory_d: float = DEFAULT_CUBE_SIDE
    splat_radius: int = 1
    fps: float = 8.0
    image_mode_fraction: float = 0.25   # samples trained with a 1-frame preceding clip
    scene: SceneParams = field(default_factory=SceneParams)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    cloud_source: str = "single"

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics.simple(self.resolution, self.resolution, self.fov_x)


def generate_training_set(num_samples: int, params: DatasetParams,
                          seed: int = 0) -> list[TrainingSample]:
    """In-memory dataset; each sample derives from an independent child seed."""
    root = np.random.default_rng(seed)
    samples = []
    for _ in range(num_samples):
        sample_seed = int(root.integers(0, 2**31 - 1))
        rng = np.random.default_rng(sample_seed)
        scene = generate_scene(sample_seed, params.scene)
        kind = INSTRUCTIONS[scene.instruction_id]
        total = params.n_target + params.n_preceding + params.n_candidates
        traj = make_clip_trajectory(scene, kind, total, params.intrinsics, rng)
        m = 1 if rng.uniform() < params.image_mode_fraction else params.n_preceding
        samples.append(assemble_sample(scene, traj, params.n_target, m,
                                       params.retrieval, rng,
                                       memory_d=params.memory_d,
                                       splat_radius=params.splat_radius,
                                       fps=params.fps,
                                       cloud_source=params.cloud_source))
    return samples


# -- on-disk dataset (frames PNG, depth/mask .npy, poses JSON, manifest) --------


def _save_frames(frames: list[Frame], out: Path, prefix: str) -> list[dict]:
    metas = []
    for i, f in enumerate(frames):
        Image.fromarray((f.rgb * 255.0 + 0.5).astype(np.uint8)).save(
            out / f"{prefix}_{i:04d}.png")
        np.save(out / f"{prefix}_{i:04d}_depth.npy", f.depth)
        np.save(out / f"{prefix}_{i:04d}_mask.npy", f.dynamic_mask)
        metas.append({"pose": f.pose.to_dict(), "intrinsics": f.intrinsics.to_dict(),
                      "frame_id": f.frame_id})
    return metas


def _load_frames(src: Path, prefix: str, metas: list[dict]) -> list[Frame]:
    frames = []
    for i, meta in enumerate(metas):
        rgb = np.asarray(Image.open(src / f"{prefix}_{i:04d}.png"),
                         dtype=np.float32) / 255.0
        depth = np.load(src / f"{prefix}_{i:04d}_depth.npy")
        mask = np.load(src / f"{prefix}_{i:04d}_mask.npy")
        frames.append(Frame(rgb=rgb, pose=Pose.from_dict(meta["pose"]),
                            intrinsics=Intrinsics.from_dict(meta["intrinsics"]),
                            depth=depth, dynamic_mask=mask,
                            frame_id=meta["frame_id"]))
    return frames


def save_dataset(samples: list[TrainingSample], out_dir, params: DatasetParams | None = None) -> None:
    from .pointcloud_io import write_spcl
    from .projection import save_projection_video

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": 1, "num_samples": len(samples)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for k, s in enumerate(samples):
        sd = out / f"sample_{k:05d}"
        sd.mkdir(exist_ok=True)
        meta = {
            "instruction_id": s.instruction_id,
            "scene_seed": s.scene_seed,
            "ref_ids": s.ref_ids,
            "target": _save_frames(s.target_frames, sd, "target"),
            "preceding": _save_frames(s.preceding_frames, sd, "preceding"),
            "candidate": _save_frames(s.candidate_frames, sd, "candidate"),
            "reference": _save_frames(s.ref_frames, sd, "reference"),
        }
        save_projection_video(s.proj_target, sd / "proj_target")
        save_projection_video(s.proj_preceding, sd / "proj_preceding")
        if s.proj_candidates is not None:
            save_projection_video(s.proj_candidates, sd / "proj_candidates")
        write_spcl(s.scene_cloud, sd / "scene_cloud.spcl")
        (sd / "sample.json").write_text(json.dumps(meta, indent=2))


def load_dataset(in_dir) -> list[TrainingSample]:
    from .pointcloud_io import read_spcl
    from .projection import load_projection_video

    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    if manifest.get("version") != 1:
        raise ValueError("unsupported dataset version")
    samples = []
    for k in range(manifest["num_samples"]):
        sd = src / f"sample_{k:05d}"
        meta = json.loads((sd / "sample.json").read_text())
        proj_c = None
        if (sd / "proj_candidates").exists():
            proj_c = load_projection_video(sd / "proj_candidates")
        samples.append(TrainingSample(
            target_frames=_load_frames(sd, "target", meta["target"]),
            preceding_frames=_load_frames(sd, "preceding", meta["preceding"]),
            candidate_frames=_load_frames(sd, "candidate", meta["candidate"]),
            ref_ids=meta["ref_ids"],
            ref_frames=_load_frames(sd, "reference", meta["reference"]),
            proj_target=load_projection_video(sd / "proj_target"),
            proj_preceding=load_projection_video(sd / "proj_preceding"),
            proj_candidates=proj_c,
            scene_cloud=read_spcl(sd / "scene_cloud.spcl"),
            instruction_id=meta["instruction_id"],
            scene_seed=meta["scene_seed"],
        ))
    return samples
