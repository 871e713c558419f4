"""Posed RGB(-D) frames: the unit flowing through memory fusion and sessions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics, Pose


@dataclass(frozen=True)
class Frame:
    """One image with camera metadata.

    rgb:   (H,W,3) float32 in [0,1]
    depth: optional (H,W) float32, camera-frame Zc in meters
    dynamic_mask: optional (H,W) bool, True on pixels covered by dynamic entities
    pose:  camera-to-world
    """

    rgb: np.ndarray
    pose: Pose
    intrinsics: Intrinsics
    depth: np.ndarray | None = None
    dynamic_mask: np.ndarray | None = None
    frame_id: int = -1

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float32)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"rgb must be (H,W,3), got {rgb.shape}")
        h, w = rgb.shape[:2]
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError("rgb size does not match intrinsics")
        object.__setattr__(self, "rgb", rgb)
        if self.depth is not None:
            depth = np.asarray(self.depth, dtype=np.float32)
            if depth.shape != (h, w):
                raise ValueError("depth size does not match rgb")
            object.__setattr__(self, "depth", depth)
        if self.dynamic_mask is not None:
            mask = np.asarray(self.dynamic_mask, dtype=bool)
            if mask.shape != (h, w):
                raise ValueError("dynamic_mask size does not match rgb")
            object.__setattr__(self, "dynamic_mask", mask)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]
