"""Core record layout and axis-aligned box arithmetic.

Every pipeline stage moves the same 16-byte point record: quantized
int32 position (units of ``scale`` relative to ``offset``), 8-bit RGB
color and one reserved pad byte.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Canonical point record: px,py,pz int32 LE, r,g,b uint8, 1 pad byte (zero).
POINT_DTYPE = np.dtype(
    [
        ("px", "<i4"),
        ("py", "<i4"),
        ("pz", "<i4"),
        ("r", "u1"),
        ("g", "u1"),
        ("b", "u1"),
        ("pad", "u1"),
    ]
)
assert POINT_DTYPE.itemsize == 16

#: Default quantization step for sources that carry float positions (PLY).
DEFAULT_SCALE = 0.001


def empty_records(n: int = 0) -> np.ndarray:
    return np.zeros(n, dtype=POINT_DTYPE)


def make_records(positions: np.ndarray, colors: np.ndarray | None = None) -> np.ndarray:
    """Assemble records from int quantized positions and optional uint8 colors."""
    positions = np.asarray(positions)
    out = np.zeros(len(positions), dtype=POINT_DTYPE)
    out["px"] = positions[:, 0]
    out["py"] = positions[:, 1]
    out["pz"] = positions[:, 2]
    if colors is None:
        out["r"] = out["g"] = out["b"] = 255
    else:
        colors = np.asarray(colors)
        out["r"] = colors[:, 0]
        out["g"] = colors[:, 1]
        out["b"] = colors[:, 2]
    return out


def quantized_positions(records: np.ndarray) -> np.ndarray:
    """(n,3) int32 view-copy of the quantized positions."""
    return np.stack([records["px"], records["py"], records["pz"]], axis=1)


def dequantize(records: np.ndarray, scale: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """(n,3) float64 world positions: offset + p * scale."""
    q = quantized_positions(records).astype(np.float64)
    return q * np.asarray(scale, dtype=np.float64) + np.asarray(offset, dtype=np.float64)


def quantize(positions: np.ndarray, scale: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Round float world positions onto the integer grid."""
    p = (np.asarray(positions, dtype=np.float64) - offset) / scale
    return np.rint(p).astype(np.int64).astype(np.int32)


@dataclass
class AABB:
    """Axis-aligned box with float64 min/max corners."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self) -> None:
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) * 0.5

    @property
    def size(self) -> np.ndarray:
        return self.max - self.min

    def copy(self) -> "AABB":
        return AABB(self.min.copy(), self.max.copy())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AABB):
            return NotImplemented
        return bool(np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max))

    def contains(self, p: np.ndarray) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))


def cube_bounds(b: AABB, min_side: float = DEFAULT_SCALE) -> AABB:
    """Smallest cube centered on ``b`` containing it.

    Zero-extent boxes are inflated to ``min_side`` (one default scale step)
    so octant arithmetic never divides a degenerate cube.
    """
    side = float(np.max(b.size))
    if side <= 0.0:
        side = min_side
    c = b.center
    half = side * 0.5
    return AABB(c - half, c + half)


def child_octant_bounds(b: AABB, k: int) -> AABB:
    """Bounds of octant ``k`` (bit2 = x-high, bit1 = y-high, bit0 = z-high)."""
    mid = b.center
    hi = np.array([(k >> 2) & 1, (k >> 1) & 1, k & 1], dtype=bool)
    return AABB(np.where(hi, mid, b.min), np.where(hi, b.max, mid))


def child_index(p: np.ndarray, bounds: AABB) -> int:
    """Octant of ``p`` inside cubic ``bounds``; boundary points (>= mid) go high."""
    mid = bounds.center
    p = np.asarray(p, dtype=np.float64)
    return int((p[0] >= mid[0]) << 2 | (p[1] >= mid[1]) << 1 | (p[2] >= mid[2]))


def child_indices(positions: np.ndarray, bounds: AABB) -> np.ndarray:
    """Vectorized child_index over an (n,3) position array."""
    mid = bounds.center
    hx = positions[:, 0] >= mid[0]
    hy = positions[:, 1] >= mid[1]
    hz = positions[:, 2] >= mid[2]
    return (hx.astype(np.int64) << 2) | (hy.astype(np.int64) << 1) | hz.astype(np.int64)


def node_bounds_from_name(root: AABB, name: str) -> AABB:
    """Descend from the cubic root along an octant path like ``r372``."""
    b = root
    for ch in name[1:]:
        b = child_octant_bounds(b, int(ch))
    return b
