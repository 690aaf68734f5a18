"""pointlod: out-of-core point cloud level-of-detail engine.

Ingest PLY/LAS clouds, decimate for an immediate preview, build a
shallow LOD octree in the background, then traverse and rasterize it
under a camera-driven point budget, locally or over HTTP.
"""

__version__ = "0.1.0"

from .core import AABB, POINT_DTYPE, cube_bounds, child_index
from .cloud_io import (
    CloudSource,
    cloud_bounds,
    compute_bounds,
    open_cloud,
    read_range,
    write_ply_binary,
)
from .decimate import DecimatedCloud, DecimationConfig, decimate, select_indices
from .octree import (
    BuildConfig,
    NodeEntry,
    OctreeHierarchy,
    build_octree,
    load_octree,
    read_node_payload,
)
from .traverse import (
    ActionDispatcher,
    CameraState,
    Frustum,
    NodeCache,
    PlanMailbox,
    TraversalConfig,
    TraversalPlan,
    aabb_visible,
    cache_apply,
    extract_frustum,
    node_priority,
    plan_traversal,
)
from .raster import (
    Framebuffer64,
    RenderTarget,
    depth_key,
    rasterize_points,
    render_view,
    resolve,
    write_ppm,
)
from .server import BuildJob, BuildStatus, PointService, ServeConfig

__all__ = [
    "AABB",
    "POINT_DTYPE",
    "ActionDispatcher",
    "BuildConfig",
    "BuildJob",
    "BuildStatus",
    "CameraState",
    "CloudSource",
    "DecimatedCloud",
    "DecimationConfig",
    "Framebuffer64",
    "Frustum",
    "NodeCache",
    "NodeEntry",
    "OctreeHierarchy",
    "PlanMailbox",
    "PointService",
    "RenderTarget",
    "ServeConfig",
    "TraversalConfig",
    "TraversalPlan",
    "aabb_visible",
    "build_octree",
    "cache_apply",
    "child_index",
    "cloud_bounds",
    "compute_bounds",
    "cube_bounds",
    "decimate",
    "depth_key",
    "extract_frustum",
    "load_octree",
    "node_priority",
    "open_cloud",
    "plan_traversal",
    "rasterize_points",
    "read_node_payload",
    "read_range",
    "render_view",
    "resolve",
    "select_indices",
    "write_ply_binary",
    "write_ppm",
]
