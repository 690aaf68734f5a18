"""Deterministic software point rasterizer over 64-bit packed cells.

Each framebuffer cell holds (depthKey << 32) | RGBA in one uint64, so a
single unsigned minimum performs the depth test and color write
together; all-ones marks an empty pixel. Depth keys are the raw bit
patterns of nonnegative float32 view-space depths, which order exactly
like the floats themselves.

Concurrency contract: the final cell value equals the minimum candidate
over all points mapping to that pixel regardless of writer interleaving.
This implementation takes a per-framebuffer mutex around each vectorized
scatter-min, which trivially satisfies the contract for any number of
writers.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .core import dequantize
from .errors import DimensionMismatchError, NodeNotResidentError
from .traverse import CameraState, NodeCache, TraversalPlan
from .octree import OctreeHierarchy

EMPTY_CELL = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass
class Framebuffer64:
    width: int
    height: int
    cells: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise DimensionMismatchError("framebuffer dimensions must be positive")
        if self.cells is None:
            self.cells = np.full(self.width * self.height, EMPTY_CELL, dtype=np.uint64)
        self._lock = threading.Lock()


@dataclass
class RenderTarget:
    color: np.ndarray  # (h, w, 3) uint8
    depth: np.ndarray  # (h, w) float32, nonnegative (+inf = empty)

    def __post_init__(self) -> None:
        if self.color.shape[:2] != self.depth.shape:
            raise DimensionMismatchError("color/depth dimensions disagree")

    @classmethod
    def flat(cls, width: int, height: int, color=(0, 0, 0)) -> "RenderTarget":
        c = np.zeros((height, width, 3), dtype=np.uint8)
        c[:] = color
        d = np.full((height, width), np.inf, dtype=np.float32)
        return cls(c, d)


@dataclass
class RasterStats:
    tested: int = 0
    written: int = 0
    early_rejected: int = 0
    clipped: int = 0


def depth_key(depth) -> np.ndarray:
    """Monotone 32-bit key of a nonnegative finite float32 depth."""
    return np.asarray(depth, dtype=np.float32).view(np.uint32)


def pack_cells(depths: np.ndarray, r, g, b) -> np.ndarray:
    keys = depth_key(depths).astype(np.uint64)
    rgba = (
        (np.asarray(r, dtype=np.uint64) << np.uint64(24))
        | (np.asarray(g, dtype=np.uint64) << np.uint64(16))
        | (np.asarray(b, dtype=np.uint64) << np.uint64(8))
        | np.uint64(0xFF)
    )
    return (keys << np.uint64(32)) | rgba


def unpack_depth(cells: np.ndarray) -> np.ndarray:
    return (cells >> np.uint64(32)).astype(np.uint32).view(np.float32)


def unpack_color(cells: np.ndarray) -> np.ndarray:
    r = ((cells >> np.uint64(24)) & np.uint64(0xFF)).astype(np.uint8)
    g = ((cells >> np.uint64(16)) & np.uint64(0xFF)).astype(np.uint8)
    b = ((cells >> np.uint64(8)) & np.uint64(0xFF)).astype(np.uint8)
    return np.stack([r, g, b], axis=-1)


def project_points(pos: np.ndarray, cam: CameraState, width: int, height: int):
    """Viewport mapping; returns (pixel index, view depth, survivor mask)."""
    vc = cam.view_coords(pos)
    z = vc[:, 2]
    th = np.tan(cam.vertical_fov_radians / 2)
    tw = th * cam.aspect
    with np.errstate(divide="ignore", invalid="ignore"):
        ndc_x = vc[:, 0] / (z * tw)
        ndc_y = vc[:, 1] / (z * th)
    ok = (z >= cam.near_plane) & (z <= cam.far_plane)
    ok &= (ndc_x >= -1) & (ndc_x <= 1) & (ndc_y >= -1) & (ndc_y <= 1)
    col = np.floor((ndc_x + 1) * 0.5 * width).astype(np.int64)
    row = np.floor((1 - ndc_y) * 0.5 * height).astype(np.int64)
    # half-open pixel rule: the +1 boundary falls off the high edge
    ok &= (col >= 0) & (col < width) & (row >= 0) & (row < height)
    return row * width + col, z, ok


def rasterize_points(
    records: np.ndarray,
    scale: np.ndarray,
    offset: np.ndarray,
    cam: CameraState,
    fb: Framebuffer64,
    stats: RasterStats | None = None,
) -> RasterStats:
    """Scatter-min points into the framebuffer; safe for concurrent writers.

    Candidates >= the current cell value perform no write and count as
    early rejections (ties keep the first writer).
    """
    if stats is None:
        stats = RasterStats()
    n = len(records)
    if n == 0:
        return stats
    pos = dequantize(records, scale, offset)
    pix, z, ok = project_points(pos, cam, fb.width, fb.height)
    survivors = int(ok.sum())
    candidates = pack_cells(z[ok], records["r"][ok], records["g"][ok], records["b"][ok])
    pix = pix[ok]
    with fb._lock:
        before = fb.cells[pix]
        np.minimum.at(fb.cells, pix, candidates)
        written = int((candidates < before).sum())
        stats.tested += n
        stats.clipped += n - survivors
        stats.written += written
        stats.early_rejected += survivors - written
    return stats


def resolve(fb: Framebuffer64, background: RenderTarget) -> RenderTarget:
    """Compose the framebuffer over a color+depth background (min depth wins).

    Ties favor the point.
    """
    h, w = background.depth.shape
    if (w, h) != (fb.width, fb.height):
        raise DimensionMismatchError(
            f"framebuffer {fb.width}x{fb.height} vs background {w}x{h}"
        )
    cells = fb.cells.reshape(h, w)
    has_point = cells != EMPTY_CELL
    pdepth = unpack_depth(cells)
    point_wins = has_point & ~(background.depth < pdepth)
    color = background.color.copy()
    color[point_wins] = unpack_color(cells)[point_wins]
    depth = np.where(point_wins, pdepth, background.depth)
    return RenderTarget(color, depth.astype(np.float32))


def render_view(
    plan: TraversalPlan,
    cache: NodeCache,
    h: OctreeHierarchy,
    cam: CameraState,
    background: RenderTarget,
) -> RenderTarget:
    """Rasterize every render-set node into a fresh framebuffer and resolve.

    Node order cannot affect the output: minimum semantics make the pass
    order-independent.
    """
    height, width = background.depth.shape
    fb = Framebuffer64(width, height)
    for name in plan.render_set:
        payload = cache.payload(name)
        if payload is None:
            raise NodeNotResidentError(f"node {name} is in the plan but not loaded")
        rasterize_points(payload, h.scale, h.offset, cam, fb)
    return resolve(fb, background)


def write_ppm(color: np.ndarray, path) -> None:
    """Binary P6 PPM, rows top to bottom."""
    hgt, wid = color.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{wid} {hgt}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(color, dtype=np.uint8).tobytes())


def write_pgm_depth(depth: np.ndarray, path) -> None:
    """Float depth sidecar: plain text header + little-endian float32 rows."""
    hgt, wid = depth.shape
    with open(path, "wb") as f:
        f.write(f"Pf-le\n{wid} {hgt}\n".encode("ascii"))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())
