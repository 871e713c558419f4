"""Persistent spatial memory: voxel-hashed fusion of posed RGB-D frames.

Cells aggregate back-projected pixels with a running mean of position and
color; dynamic-masked pixels never enter; fusion only adds cells. Edits
(delete / add-primitive / recolor) are the only way content is removed or
overwritten. Single writer, many readers: `snapshot()` returns immutable
copies that are safe to hand to other threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frames import Frame
from .geometry import EPSILON_Z, PointCloud, Pose, back_project
from .pointcloud_io import decode_spcl, encode_spcl

# Tolerance (in voxel units) pulling floating-point dust like 0.07/0.01 =
# 6.999999999999999 up to the integer cell a hand computation expects.
KEY_EPS = 1e-9

# Packed-key layout: 21 bits per axis, offset so coordinates are non-negative.
_KEY_BITS = 21
_KEY_OFFSET = 1 << 20

DEFAULT_CUBE_SIDE = 0.01
DEFAULT_MAX_RANGE = 100.0
MEMORY_FORMAT_VERSION = 1


def voxel_keys(points, d: float) -> np.ndarray:
    """Integer voxel coordinates, floor(point / d) per axis, shape (N,3)."""
    if d <= 0:
        raise ValueError("cube side must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.floor(pts / d + KEY_EPS).astype(np.int64)


def voxel_key(point, d: float) -> tuple[int, int, int]:
    k = voxel_keys(np.asarray(point, dtype=np.float64)[None, :], d)[0]
    return int(k[0]), int(k[1]), int(k[2])


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack (N,3) integer keys into sortable int64; range +-2^20 voxels per axis."""
    shifted = keys + _KEY_OFFSET
    if shifted.min(initial=0) < 0 or shifted.max(initial=0) >= (1 << _KEY_BITS):
        raise ValueError("voxel key out of packable range (+-2^20 cells)")
    return (shifted[:, 0] << (2 * _KEY_BITS)) | (shifted[:, 1] << _KEY_BITS) | shifted[:, 2]


def unpack_keys(packed: np.ndarray) -> np.ndarray:
    mask = (1 << _KEY_BITS) - 1
    out = np.empty((len(packed), 3), dtype=np.int64)
    out[:, 0] = (packed >> (2 * _KEY_BITS)) & mask
    out[:, 1] = (packed >> _KEY_BITS) & mask
    out[:, 2] = packed & mask
    return out - _KEY_OFFSET


def _aggregate(packed: np.ndarray, positions: np.ndarray, colors: np.ndarray):
    """Group points by packed key: (unique keys, pos sums, color sums, counts)."""
    uniq, inv, counts = np.unique(packed, return_inverse=True, return_counts=True)
    pos_sum = np.zeros((len(uniq), 3))
    col_sum = np.zeros((len(uniq), 3))
    np.add.at(pos_sum, inv, positions)
    np.add.at(col_sum, inv, colors)
    return uniq, pos_sum, col_sum, counts.astype(np.int64)


class SpatialMemory:
    """Voxel-hashed global static point cloud (the scene memory)."""

    def __init__(self, cube_side: float = DEFAULT_CUBE_SIDE,
                 max_range: float = DEFAULT_MAX_RANGE):
        if cube_side <= 0:
            raise ValueError("cube side must be positive")
        self.cube_side = float(cube_side)
        self.max_range = float(max_range)
        self._keys = np.zeros(0, dtype=np.int64)      # packed, kept sorted
        self._pos_sum = np.zeros((0, 3), dtype=np.float64)
        self._col_sum = np.zeros((0, 3), dtype=np.float64)
        self._counts = np.zeros(0, dtype=np.int64)

    @property
    def cell_count(self) -> int:
        return len(self._keys)

    def copy(self) -> "SpatialMemory":
        out = SpatialMemory(self.cube_side, self.max_range)
        out._keys = self._keys.copy()
        out._pos_sum = self._pos_sum.copy()
        out._col_sum = self._col_sum.copy()
        out._counts = self._counts.copy()
        return out

    # -- fusion ------------------------------------------------------------

    def fuse_points(self, positions, colors) -> "SpatialMemory":
        """Merge raw points into cells via running means. Returns self."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if len(positions) != len(colors):
            raise ValueError("positions/colors length mismatch")
        if len(positions) == 0:
            return self
        packed = pack_keys(voxel_keys(positions, self.cube_side))
        uniq, pos_sum, col_sum, counts = _aggregate(packed, positions, colors)

        idx = np.searchsorted(self._keys, uniq)
        idx_clip = np.minimum(idx, len(self._keys) - 1) if len(self._keys) else idx
        exists = np.zeros(len(uniq), dtype=bool)
        if len(self._keys):
            exists = self._keys[idx_clip] == uniq
        hit = np.where(exists, idx_clip, 0)

        if exists.any():
            rows = hit[exists]
            np.add.at(self._pos_sum, rows, pos_sum[exists])
            np.add.at(self._col_sum, rows, col_sum[exists])
            np.add.at(self._counts, rows, counts[exists])
        if (~exists).any():
            new = ~exists
            self._keys = np.concatenate([self._keys, uniq[new]])
            self._pos_sum = np.concatenate([self._pos_sum, pos_sum[new]])
            self._col_sum = np.concatenate([self._col_sum, col_sum[new]])
            self._counts = np.concatenate([self._counts, counts[new]])
            order = np.argsort(self._keys, kind="stable")
            self._keys = self._keys[order]
            self._pos_sum = self._pos_sum[order]
            self._col_sum = self._col_sum[order]
            self._counts = self._counts[order]
        return self

    def fuse_frame(self, frame: Frame, stride: int = 1) -> "SpatialMemory":
        """Back-project one posed RGB-D frame, skipping dynamic-masked pixels.

        Pixels with depth <= epsilon_z or depth >= max_range are ignored
        (the scene oracle writes exactly max_range where nothing was hit).
        `stride` subsamples the pixel grid; default uses every pixel.
        """
        if frame.depth is None:
            raise ValueError("fusion requires a depth channel")
        h, w = frame.depth.shape
        vs = np.arange(0, h, stride)
        us = np.arange(0, w, stride)
        uu, vv = np.meshgrid(us, vs)
        depth = frame.depth[vv, uu].astype(np.float64)
        keep = (depth > EPSILON_Z) & (depth < self.max_range)
        if frame.dynamic_mask is not None:
            keep &= ~frame.dynamic_mask[vv, uu]
        if not keep.any():
            return self
        pix = np.stack([uu[keep], vv[keep]], axis=1).astype(np.float64)
        world = back_project(pix, depth[keep], frame.pose, frame.intrinsics)
        colors = frame.rgb[vv, uu][keep].astype(np.float64)
        return self.fuse_points(world, colors)

    # -- queries -----------------------------------------------------------

    def snapshot(self) -> PointCloud:
        """One point per cell (centroid, mean color), sorted by voxel key."""
        if not len(self._keys):
            return PointCloud.empty()
        counts = self._counts[:, None].astype(np.float64)
        return PointCloud(self._pos_sum / counts,
                          np.clip(self._col_sum / counts, 0.0, 1.0))

    def keys_array(self) -> np.ndarray:
        """(N,3) integer voxel coordinates, in snapshot order."""
        return unpack_keys(self._keys)

    def counts_array(self) -> np.ndarray:
        return self._counts.copy()

    def raw_state(self):
        """Internal accumulators (packed keys, pos sums, color sums, counts).

        Returned arrays are live references; callers must not mutate them.
        Used for exact serialization and checksums.
        """
        return self._keys, self._pos_sum, self._col_sum, self._counts

    @staticmethod
    def from_raw_state(cube_side: float, keys, pos_sum, col_sum, counts,
                       max_range: float = DEFAULT_MAX_RANGE) -> "SpatialMemory":
        mem = SpatialMemory(cube_side, max_range)
        mem._keys = np.asarray(keys, dtype=np.int64)
        mem._pos_sum = np.asarray(pos_sum, dtype=np.float64).reshape(-1, 3)
        mem._col_sum = np.asarray(col_sum, dtype=np.float64).reshape(-1, 3)
        mem._counts = np.asarray(counts, dtype=np.int64)
        n = len(mem._keys)
        if any(len(a) != n for a in (mem._pos_sum, mem._col_sum, mem._counts)):
            raise ValueError("inconsistent raw memory arrays")
        return mem

    # -- edits ---------------------------------------------------------------

    def _select_region(self, region: "Region") -> np.ndarray:
        """Boolean row mask of cells whose centroid lies in the region."""
        if not len(self._keys):
            return np.zeros(0, dtype=bool)
        centroids = self._pos_sum / self._counts[:, None]
        if isinstance(region, BoxRegion):
            return np.all((centroids >= region.min_corner) &
                          (centroids <= region.max_corner), axis=1)
        packed = pack_keys(np.asarray(region.keys, dtype=np.int64).reshape(-1, 3))
        return np.isin(self._keys, packed)

    def delete_region(self, region: "Region") -> int:
        mask = self._select_region(region)
        removed = int(mask.sum())
        if removed:
            keep = ~mask
            self._keys = self._keys[keep]
            self._pos_sum = self._pos_sum[keep]
            self._col_sum = self._col_sum[keep]
            self._counts = self._counts[keep]
        return removed

    def recolor_region(self, region: "Region", color) -> int:
        color = np.asarray(color, dtype=np.float64).reshape(3)
        if color.min() < 0 or color.max() > 1:
            raise ValueError("recolor target must lie in [0,1]")
        mask = self._select_region(region)
        self._col_sum[mask] = color * self._counts[mask, None]
        return int(mask.sum())

    # -- serialization -------------------------------------------------------

    def sidecar(self) -> dict:
        return {"d": self.cube_side, "cell_count": self.cell_count,
                "version": MEMORY_FORMAT_VERSION}

    def save(self, spcl_path, sidecar_path=None) -> None:
        """SPCL centroid dump plus JSON sidecar {d, cell_count, version}."""
        Path(spcl_path).write_bytes(encode_spcl(self.snapshot()))
        if sidecar_path is None:
            sidecar_path = Path(spcl_path).with_suffix(".json")
        Path(sidecar_path).write_text(json.dumps(self.sidecar(), indent=2))

    @staticmethod
    def load(spcl_path, sidecar_path=None) -> "SpatialMemory":
        if sidecar_path is None:
            sidecar_path = Path(spcl_path).with_suffix(".json")
        meta = json.loads(Path(sidecar_path).read_text())
        if meta.get("version") != MEMORY_FORMAT_VERSION:
            raise ValueError(f"unsupported memory version {meta.get('version')}")
        mem = SpatialMemory(cube_side=meta["d"])
        cloud = decode_spcl(Path(spcl_path).read_bytes())
        mem.fuse_points(cloud.positions, cloud.colors)
        return mem


def fuse_frames(mem: SpatialMemory, frames, stride: int = 1) -> SpatialMemory:
    """Fuse a batch of posed RGB-D frames (dynamic regions excluded) into `mem`."""
    for frame in frames:
        mem.fuse_frame(frame, stride=stride)
    return mem


def downsample(cloud: PointCloud, d: float) -> PointCloud:
    """Voxel-grid downsample: one centroid/mean-color point per occupied cube."""
    if d <= 0:
        raise ValueError("cube side must be positive")
    if len(cloud) == 0:
        return PointCloud.empty()
    packed = pack_keys(voxel_keys(cloud.positions, d))
    uniq, pos_sum, col_sum, counts = _aggregate(packed, cloud.positions, cloud.colors)
    counts = counts[:, None].astype(np.float64)
    return PointCloud(pos_sum / counts, np.clip(col_sum / counts, 0.0, 1.0))


# -- edit operations ---------------------------------------------------------


@dataclass(frozen=True)
class BoxRegion:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if np.any(hi <= lo):
            raise ValueError("region box must have positive extent on every axis")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def to_dict(self) -> dict:
        return {"type": "box", "min": self.min_corner.tolist(),
                "max": self.max_corner.tolist()}


@dataclass(frozen=True)
class VoxelRegion:
    keys: np.ndarray

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.int64).reshape(-1, 3)
        if len(keys) == 0:
            raise ValueError("voxel region must name at least one cell")
        object.__setattr__(self, "keys", keys)

    def to_dict(self) -> dict:
        return {"type": "voxels", "keys": self.keys.tolist()}


Region = BoxRegion | VoxelRegion


@dataclass(frozen=True)
class PrimitiveSpec:
    """Surface primitive for add-primitive edits: an oriented box or a sphere."""

    shape: str                      # "box" | "sphere"
    color: np.ndarray
    size: np.ndarray | None = None  # box full extents (3,)
    radius: float | None = None     # sphere
    pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        color = np.asarray(self.color, dtype=np.float64).reshape(3)
        if color.min() < 0 or color.max() > 1:
            raise ValueError("primitive color must lie in [0,1]")
        object.__setattr__(self, "color", color)
        if self.shape == "box":
            if self.size is None:
                raise ValueError("box primitive needs a size")
            size = np.asarray(self.size, dtype=np.float64).reshape(3)
            if np.any(size <= 0):
                raise ValueError("box size must be positive")
            object.__setattr__(self, "size", size)
        elif self.shape == "sphere":
            if self.radius is None or self.radius <= 0:
                raise ValueError("sphere primitive needs a positive radius")
        else:
            raise ValueError(f"unknown primitive shape {self.shape!r}")

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "color": self.color.tolist(),
             "pose": self.pose.to_dict()}
        if self.shape == "box":
            d["size"] = self.size.tolist()
        else:
            d["radius"] = self.radius
        return d

    @staticmethod
    def from_dict(d: dict) -> "PrimitiveSpec":
        pose = Pose.from_dict(d["pose"]) if "pose" in d else Pose.identity()
        return PrimitiveSpec(shape=d["shape"], color=d["color"], pose=pose,
                             size=d.get("size"), radius=d.get("radius"))


def sample_primitive_surface(prim: PrimitiveSpec, spacing: float):
    """Lattice of surface points at the given spacing (positions, colors)."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    pts = []
    if prim.shape == "box":
        hx, hy, hz = prim.size / 2.0
        for axis, (a, b) in enumerate([(hy, hz), (hx, hz), (hx, hy)]):
            na = max(2, int(np.ceil(2 * a / spacing)) + 1)
            nb = max(2, int(np.ceil(2 * b / spacing)) + 1)
            ga = np.linspace(-a, a, na)
            gb = np.linspace(-b, b, nb)
            aa, bb = np.meshgrid(ga, gb)
            for sign in (-1.0, 1.0):
                face = np.zeros((aa.size, 3))
                face[:, axis] = sign * prim.size[axis] / 2.0
                other = [i for i in range(3) if i != axis]
                face[:, other[0]] = aa.ravel()
                face[:, other[1]] = bb.ravel()
                pts.append(face)
        local = np.concatenate(pts)
    else:
        r = prim.radius
        # Fibonacci sphere at >= (4 / spacing^2) points per unit area.
        n = max(8, int(np.ceil(4.0 * np.pi * r * r * 4.0 / spacing**2)))
        i = np.arange(n)
        phi = np.pi * (3.0 - np.sqrt(5.0)) * i
        y = 1.0 - 2.0 * (i + 0.5) / n
        rad = np.sqrt(np.maximum(0.0, 1.0 - y * y))
        local = np.stack([np.cos(phi) * rad, y, np.sin(phi) * rad], axis=1) * r
    world = prim.pose.apply(local)
    colors = np.tile(prim.color, (len(world), 1))
    return world, colors


@dataclass(frozen=True)
class EditOp:
    """A 3D scene edit: delete-region, add-primitive, or recolor-region."""

    kind: str
    region: Region | None = None
    primitive: PrimitiveSpec | None = None
    color: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("delete-region", "add-primitive", "recolor-region"):
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if self.kind in ("delete-region", "recolor-region") and self.region is None:
            raise ValueError(f"{self.kind} needs a region")
        if self.kind == "add-primitive" and self.primitive is None:
            raise ValueError("add-primitive needs a primitive")
        if self.kind == "recolor-region":
            if self.color is None:
                raise ValueError("recolor-region needs a target color")
            color = np.asarray(self.color, dtype=np.float64).reshape(3)
            if color.min() < 0 or color.max() > 1:
                raise ValueError("recolor target must lie in [0,1]")
            object.__setattr__(self, "color", color)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.region is not None:
            d["region"] = self.region.to_dict()
        if self.primitive is not None:
            d["primitive"] = self.primitive.to_dict()
        if self.color is not None:
            d["color"] = self.color.tolist()
        return d

    @staticmethod
    def from_dict(d: dict) -> "EditOp":
        region = None
        if "region" in d and d["region"] is not None:
            r = d["region"]
            if r.get("type") == "box":
                region = BoxRegion(r["min"], r["max"])
            elif r.get("type") == "voxels":
                region = VoxelRegion(np.asarray(r["keys"]))
            else:
                raise ValueError(f"unknown region type {r.get('type')!r}")
        prim = PrimitiveSpec.from_dict(d["primitive"]) if d.get("primitive") else None
        return EditOp(kind=d["kind"], region=region, primitive=prim,
                      color=d.get("color"))

    @staticmethod
    def from_json(text: str) -> "EditOp":
        return EditOp.from_dict(json.loads(text))


def apply_edit(mem: SpatialMemory, op: EditOp) -> SpatialMemory:
    """Apply one edit in place; returns `mem`.

    add-primitive samples the primitive surface at spacing d/2 (>= 4 points
    per voxel-face area) and fuses the samples like any other points.
    """
    if op.kind == "delete-region":
        mem.delete_region(op.region)
    elif op.kind == "recolor-region":
        mem.recolor_region(op.region, op.color)
    else:
        pos, col = sample_primitive_surface(op.primitive, mem.cube_side / 2.0)
        mem.fuse_points(pos, col)
    return mem
