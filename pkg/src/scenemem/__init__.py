"""Spatial-memory-aware iterative video generation toolkit."""

__version__ = "0.1.0"

from .frames import Frame
from .geometry import Intrinsics, PointCloud, Pose
from .projection import ProjectionImage, ProjectionVideo, Trajectory
from .retrieval import RetrievalConfig
from .voxel_memory import EditOp, SpatialMemory

__all__ = [
    "Frame",
    "Intrinsics",
    "PointCloud",
    "Pose",
    "ProjectionImage",
    "ProjectionVideo",
    "Trajectory",
    "RetrievalConfig",
    "EditOp",
    "SpatialMemory",
    "__version__",
]
