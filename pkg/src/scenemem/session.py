"""Iterative generation sessions: memory in, clip out, memory updated.

Each step renders the memory along the requested trajectory, retrieves
reference frames from the archive by 3D overlap, conditions the generator,
then fuses the generated frames back into memory (dynamic regions excluded
when an oracle scene provides masks). Steps are atomic: any failure leaves
the session state untouched. Sessions serialize to a self-contained binary
bundle that re-exports byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .frames import Frame
from .geometry import Intrinsics, Pose
from .projection import (ProjectionVideo, Trajectory, projection_to_view_cloud,
                         render_sequence)
from .retrieval import RetrievalConfig, retrieve_references
from .scenes import SceneSpec, initial_pose, render_frame, render_gt
from .voxel_memory import EditOp, SpatialMemory, apply_edit

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b"SSBN"
BUNDLE_VERSION = 1


class CorruptBundleError(ValueError):
    pass


class StepError(RuntimeError):
    """A step failed; session state is unchanged."""


@dataclass(frozen=True)
class SessionConfig:
    clip_len: int = 9
    preceding_len: int = 3
    memory_d: float = 0.01
    splat_radius: int = 1
    resolution: int = 128
    fov_x: float = float(np.pi / 2)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    use_scene: bool = True
    use_refs: bool = True
    fuse_stride: int = 1
    pose_gap_bound: float = 1.0   # max jump (m) from the previous clip's last pose
    seed: int = 0
    fps: float = 8.0
    sample_steps: int = 20

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics.simple(self.resolution, self.resolution, self.fov_x)

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["retrieval"] = self.retrieval.__dict__.copy()
        return d

    @staticmethod
    def from_dict(d: dict) -> "SessionConfig":
        d = dict(d)
        d["retrieval"] = RetrievalConfig(**d["retrieval"])
        return SessionConfig(**d)


@dataclass(frozen=True)
class StepRequest:
    trajectory: Trajectory
    instruction_id: int = 0
    edits: tuple[EditOp, ...] = ()
    seed: int | None = None

    def to_dict(self) -> dict:
        return {"trajectory": self.trajectory.to_dict(),
                "instruction_id": self.instruction_id,
                "edits": [e.to_dict() for e in self.edits],
                "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "StepRequest":
        return StepRequest(trajectory=Trajectory.from_dict(d["trajectory"]),
                           instruction_id=d.get("instruction_id", 0),
                           edits=tuple(EditOp.from_dict(e)
                                       for e in d.get("edits", [])),
                           seed=d.get("seed"))


@dataclass
class GenerationRequest:
    """Everything a clip generator may condition on for one step.

    projection_video is None when scene conditioning is disabled; otherwise a
    dict with "target" and "preceding" ProjectionVideo entries.
    """

    trajectory: Trajectory
    instruction_id: int
    preceding_frames: list[Frame]
    ref_frames: list[Frame]
    projection_video: dict[str, ProjectionVideo] | None
    seed: int


class OracleClipGenerator:
    """Renders ground truth instead of generating; the harness upper bound."""

    def __init__(self, scene: SceneSpec, time_fn=None):
        self.scene = scene
        self.time_fn = time_fn or (lambda frame_index: 0.0)

    def generate(self, req: GenerationRequest) -> np.ndarray:
        frames = [render_gt(self.scene, pose, intr, self.time_fn(i))[0]
                  for i, (pose, intr) in enumerate(req.trajectory)]
        return np.stack(frames)


class ModelClipGenerator:
    """Conditions the trained flow-matching model and samples a clip."""

    def __init__(self, model, sample_steps: int = 20):
        self.model = model
        self.sample_steps = sample_steps
        self._tokenizer = model.config.build_tokenizer()

    def generate(self, req: GenerationRequest) -> np.ndarray:
        from .generator.conditioning import build_condition, collate
        from .generator.flow import sample_clip

        cfg = self.model.config
        if len(req.trajectory) != cfg.clip_len:
            raise ValueError("trajectory length does not match the model clip length")
        use_scene = req.projection_video is not None
        prec = req.preceding_frames[-cfg.preceding_len:]
        proj_prec = None
        if use_scene:
            # Keep the scene-preceding stream aligned with the (possibly
            # truncated) preceding clip.
            full = req.projection_video["preceding"]
            proj_prec = ProjectionVideo(full.frames[-len(prec):])
        cond = build_condition(
            cfg, self._tokenizer,
            preceding=prec,
            proj_preceding=proj_prec,
            proj_target=req.projection_video["target"] if use_scene else None,
            instruction=req.instruction_id,
            ref_frames=req.ref_frames,
            use_scene=use_scene,
        )
        batch = collate([cond], cfg)
        gen = torch.Generator().manual_seed(req.seed)
        return sample_clip(self.model, batch, self.sample_steps, generator=gen)


class Session:
    """Single-writer session; use one step at a time (services add locking)."""

    def __init__(self, memory: SpatialMemory, archive: list[Frame],
                 config: SessionConfig, generator, scene: SceneSpec | None = None,
                 clip_index: int = 0):
        self.memory = memory
        self.archive = archive
        self.config = config
        self.generator = generator
        self.scene = scene
        self.clip_index = clip_index

    # -- queries -------------------------------------------------------------

    def memory_cloud(self):
        return self.memory.snapshot()

    def clip_frames(self, k: int) -> list[Frame]:
        """Frames of generated clip k (0-based); raises IndexError when absent."""
        if not (0 <= k < self.clip_index):
            raise IndexError(f"clip {k} not generated (have {self.clip_index})")
        n = self.config.clip_len
        start = 1 + k * n
        return self.archive[start:start + n]

    def state_checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        digest.update(struct.pack("<q", self.clip_index))
        for arr in self.memory.raw_state():
            digest.update(arr.tobytes())
        for f in self.archive:
            digest.update(f.rgb.tobytes())
            if f.depth is not None:
                digest.update(f.depth.tobytes())
            if f.dynamic_mask is not None:
                digest.update(f.dynamic_mask.tobytes())
            digest.update(json.dumps(f.pose.to_dict(), sort_keys=True).encode())
        return digest.hexdigest()

    # -- mutations -----------------------------------------------------------

    def apply_edit(self, op: EditOp) -> None:
        mem = self.memory.copy()
        apply_edit(mem, op)
        self.memory = mem

    def step(self, req: StepRequest) -> list[Frame]:
        """Generate one clip; commits state only if every stage succeeds."""
        cfg = self.config
        if len(req.trajectory) != cfg.clip_len:
            raise StepError(f"trajectory length {len(req.trajectory)} != clip "
                            f"length {cfg.clip_len}")
        gap = np.linalg.norm(req.trajectory.poses[0].translation
                             - self.archive[-1].pose.translation)
        if gap > cfg.pose_gap_bound:
            raise StepError(f"trajectory start jumps {gap:.3f} m from the previous "
                            f"pose (bound {cfg.pose_gap_bound} m)")

        mem = self.memory.copy()
        for op in req.edits:
            apply_edit(mem, op)
        cloud = mem.snapshot()

        need_renders = cfg.use_scene or cfg.use_refs
        proj_target = proj_prec = None
        if need_renders:
            proj_target = render_sequence(cloud, req.trajectory, cfg.splat_radius)
        preceding = self.archive[-cfg.preceding_len:]
        if cfg.use_scene:
            prec_traj = Trajectory(tuple(f.pose for f in preceding),
                                   tuple(f.intrinsics for f in preceding))
            proj_prec = render_sequence(cloud, prec_traj, cfg.splat_radius)

        ref_frames: list[Frame] = []
        if cfg.use_refs and len(self.archive) > 0:
            targets = [projection_to_view_cloud(img, pose, intr)
                       for img, (pose, intr) in zip(proj_target.frames,
                                                    req.trajectory)]
            arch_traj = Trajectory(tuple(f.pose for f in self.archive),
                                   tuple(f.intrinsics for f in self.archive))
            arch_proj = render_sequence(cloud, arch_traj, cfg.splat_radius)
            candidates = [(i, projection_to_view_cloud(img, f.pose, f.intrinsics))
                          for i, (img, f) in enumerate(zip(arch_proj.frames,
                                                           self.archive))]
            ids = retrieve_references(targets, candidates, cfg.retrieval)
            ref_frames = [self.archive[i] for i in ids]

        gen_req = GenerationRequest(
            trajectory=req.trajectory,
            instruction_id=req.instruction_id,
            preceding_frames=list(preceding),
            ref_frames=ref_frames,
            projection_video={"target": proj_target, "preceding": proj_prec}
            if cfg.use_scene else None,
            seed=req.seed if req.seed is not None else cfg.seed + self.clip_index,
        )
        try:
            rgb = np.asarray(self.generator.generate(gen_req), dtype=np.float32)
        except Exception as e:
            raise StepError(f"generator failed: {e}") from e
        h = w = cfg.resolution
        if rgb.shape != (cfg.clip_len, h, w, 3):
            raise StepError(f"generator returned {rgb.shape}, expected "
                            f"{(cfg.clip_len, h, w, 3)}")
        if not np.isfinite(rgb).all():
            raise StepError("generator produced non-finite values")

        base_time = len(self.archive)
        new_frames = []
        for i, (pose, intr) in enumerate(req.trajectory):
            t = (base_time + i) / cfg.fps
            if self.scene is not None:
                _, depth, mask = render_gt(self.scene, pose, intr, t)
            else:
                # Freeform: geometry from the memory render; uncovered pixels
                # carry no depth and are skipped by fusion. All-static assumed.
                depth = proj_target[i].depth if proj_target is not None else None
                mask = None
            new_frames.append(Frame(rgb=rgb[i], pose=pose, intrinsics=intr,
                                    depth=depth, dynamic_mask=mask,
                                    frame_id=base_time + i))
        for f in new_frames:
            if f.depth is not None:
                mem.fuse_frame(f, stride=cfg.fuse_stride)

        self.memory = mem
        self.archive = self.archive + new_frames
        self.clip_index += 1
        return new_frames


def create_session(init, config: SessionConfig, generator=None) -> Session:
    """Start a session from a posed RGB-D frame or a procedural scene spec."""
    scene = None
    if isinstance(init, SceneSpec):
        scene = init
        frame = render_frame(scene, initial_pose(scene), config.intrinsics,
                             time=0.0, frame_id=0)
    elif isinstance(init, Frame):
        frame = init
        if frame.depth is None:
            raise ValueError("image-initialized sessions need a depth channel")
    else:
        raise TypeError(f"cannot initialize a session from {type(init)!r}")
    if generator is None:
        if scene is None:
            raise ValueError("a generator is required without an oracle scene")
        generator = OracleClipGenerator(scene)

    memory = SpatialMemory(cube_side=config.memory_d)
    memory.fuse_frame(frame, stride=config.fuse_stride)
    if memory.cell_count == 0:
        logger.warning("initial frame contributed no static content; "
                       "memory starts empty")
    return Session(memory=memory, archive=[frame], config=config,
                   generator=generator, scene=scene)


# -- bundle serialization -------------------------------------------------------


def _section(name: str, payload: bytes) -> bytes:
    nb = name.encode()
    return struct.pack("<I", len(nb)) + nb + struct.pack("<Q", len(payload)) + payload


def _frame_blob(f: Frame) -> bytes:
    meta = {"pose": f.pose.to_dict(), "intrinsics": f.intrinsics.to_dict(),
            "frame_id": f.frame_id, "has_depth": f.depth is not None,
            "has_mask": f.dynamic_mask is not None}
    mb = json.dumps(meta, sort_keys=True).encode()
    parts = [struct.pack("<I", len(mb)), mb, f.rgb.astype("<f4").tobytes()]
    if f.depth is not None:
        parts.append(f.depth.astype("<f4").tobytes())
    if f.dynamic_mask is not None:
        parts.append(np.packbits(f.dynamic_mask).tobytes())
    return b"".join(parts)


def _read_frame_blob(blob: bytes, h: int, w: int) -> Frame:
    (mlen,) = struct.unpack_from("<I", blob, 0)
    meta = json.loads(blob[4:4 + mlen])
    off = 4 + mlen
    rgb = np.frombuffer(blob, dtype="<f4", count=h * w * 3,
                        offset=off).reshape(h, w, 3)
    off += h * w * 12
    depth = None
    if meta["has_depth"]:
        depth = np.frombuffer(blob, dtype="<f4", count=h * w,
                              offset=off).reshape(h, w)
        off += h * w * 4
    mask = None
    if meta["has_mask"]:
        nbytes = (h * w + 7) // 8
        mask = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, count=nbytes,
                                           offset=off))[:h * w].reshape(h, w).astype(bool)
    return Frame(rgb=rgb.copy(), pose=Pose.from_dict(meta["pose"]),
                 intrinsics=Intrinsics.from_dict(meta["intrinsics"]),
                 depth=depth.copy() if depth is not None else None,
                 dynamic_mask=mask, frame_id=meta["frame_id"])


def export_session(session: Session) -> bytes:
    """Deterministic binary bundle (byte-identical across re-exports)."""
    head = {
        "version": BUNDLE_VERSION,
        "config": session.config.to_dict(),
        "clip_index": session.clip_index,
        "archive_len": len(session.archive),
        "scene": session.scene.to_dict() if session.scene is not None else None,
        "memory_cells": session.memory.cell_count,
    }
    keys, pos_sum, col_sum, counts = session.memory.raw_state()
    parts = [
        BUNDLE_MAGIC, struct.pack("<I", BUNDLE_VERSION),
        _section("header", json.dumps(head, sort_keys=True).encode()),
        _section("memory", keys.astype("<i8").tobytes()
                 + pos_sum.astype("<f8").tobytes()
                 + col_sum.astype("<f8").tobytes()
                 + counts.astype("<i8").tobytes()),
    ]
    for i, frame in enumerate(session.archive):
        parts.append(_section(f"frame_{i:06d}", _frame_blob(frame)))
    return b"".join(parts)


def import_session(blob: bytes, generator=None) -> Session:
    if len(blob) < 8 or blob[:4] != BUNDLE_MAGIC:
        raise CorruptBundleError("bad bundle magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != BUNDLE_VERSION:
        raise CorruptBundleError(f"unsupported bundle version {version}")
    off = 8
    sections: dict[str, bytes] = {}
    while off < len(blob):
        try:
            (nlen,) = struct.unpack_from("<I", blob, off)
            name = blob[off + 4:off + 4 + nlen].decode()
            (plen,) = struct.unpack_from("<Q", blob, off + 4 + nlen)
            start = off + 4 + nlen + 8
            payload = blob[start:start + plen]
            if len(payload) != plen:
                raise CorruptBundleError(f"truncated section {name!r}")
            sections[name] = payload
            off = start + plen
        except struct.error as e:
            raise CorruptBundleError("truncated bundle") from e
    if "header" not in sections or "memory" not in sections:
        raise CorruptBundleError("bundle missing required sections")
    head = json.loads(sections["header"])
    config = SessionConfig.from_dict(head["config"])

    n = head["memory_cells"]
    memblob = sections["memory"]
    expected = n * (8 + 24 + 24 + 8)
    if len(memblob) != expected:
        raise CorruptBundleError("memory section size mismatch")
    o = 0
    keys = np.frombuffer(memblob, dtype="<i8", count=n, offset=o).copy()
    o += n * 8
    pos_sum = np.frombuffer(memblob, dtype="<f8", count=3 * n,
                            offset=o).reshape(n, 3).copy()
    o += n * 24
    col_sum = np.frombuffer(memblob, dtype="<f8", count=3 * n,
                            offset=o).reshape(n, 3).copy()
    o += n * 24
    counts = np.frombuffer(memblob, dtype="<i8", count=n, offset=o).copy()
    mem = SpatialMemory.from_raw_state(config.memory_d, keys, pos_sum,
                                       col_sum, counts)

    h = w = config.resolution
    archive = []
    for i in range(head["archive_len"]):
        name = f"frame_{i:06d}"
        if name not in sections:
            raise CorruptBundleError(f"bundle missing {name}")
        archive.append(_read_frame_blob(sections[name], h, w))

    scene = SceneSpec.from_dict(head["scene"]) if head.get("scene") else None
    if generator is None and scene is not None:
        generator = OracleClipGenerator(scene)
    return Session(memory=mem, archive=archive, config=config,
                   generator=generator, scene=scene,
                   clip_index=head["clip_index"])
