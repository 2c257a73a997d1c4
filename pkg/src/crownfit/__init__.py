"""Crown-fitting pipeline for intraoral scans.

Takes an arbitrarily oriented scan mesh plus a target FDI tooth number and
produces a positioned, collision-free preliminary crown shell: scan
classification, classification-guided coarse-to-fine registration, graph-cut
label refinement, context-aware crown retrieval, spline-guided alignment and
intersection-driven fitting.
"""

from .mesh import (
    GINGIVA,
    PREPARED,
    LabeledMesh,
    PointCloud,
    RigidTransform,
    bounding_box_diagonal,
    estimate_vertex_normals,
    is_watertight,
    voxel_downsample,
)
from .meshio import load_mesh, save_mesh

__version__ = "0.1.0"

__all__ = [
    "GINGIVA",
    "PREPARED",
    "LabeledMesh",
    "PointCloud",
    "RigidTransform",
    "bounding_box_diagonal",
    "estimate_vertex_normals",
    "is_watertight",
    "load_mesh",
    "save_mesh",
    "voxel_downsample",
    "__version__",
]
