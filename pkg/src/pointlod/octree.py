"""Shallow out-of-core LOD octree construction and serialization.

Pipeline: a counting pass bins points into a coarse octant grid, cells
merge bottom-up into out-of-core chunks, a distribution pass writes the
chunk files, each chunk becomes a local octree in parallel, and the
local trees are stitched under a global root and written as
metadata.json + hierarchy.bin + points.bin.

Every point is stored exactly once: LOD samples are MOVED from child
payloads to their parent, never copied.
"""
from __future__ import annotations

import json
import math
import os
import shutil
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .cloud_io import CloudSource, cloud_bounds, read_range
from .core import (
    AABB,
    POINT_DTYPE,
    child_indices,
    child_octant_bounds,
    cube_bounds,
    dequantize,
    empty_records,
    node_bounds_from_name,
)
from .decimate import default_worker_count
from .errors import CancelledError, InconsistentChunksError, MalformedHeaderError

RECORD_SIZE = POINT_DTYPE.itemsize
HIERARCHY_RECORD_DTYPE = np.dtype(
    {
        "names": ["child_mask", "reserved", "num_points", "byte_offset", "byte_size"],
        "formats": ["u1", "u1", "<u4", "<u8", "<u8"],
        "offsets": [0, 1, 2, 6, 14],
        "itemsize": 22,
    }
)

ProgressFn = Callable[[str, float], None]


@dataclass
class BuildConfig:
    max_chunk_points: int = 4_000_000
    max_node_points: int = 200_000
    sampling_grid_size: int = 128
    worker_count: int = field(default_factory=default_worker_count)
    batch_size: int = 1 << 20

    def __post_init__(self) -> None:
        if self.max_node_points < 1:
            raise ValueError("max_node_points must be >= 1")
        g = self.sampling_grid_size
        if g < 2 or g & (g - 1):
            raise ValueError("sampling_grid_size must be a power of two >= 2")
        if self.max_chunk_points < self.max_node_points:
            raise ValueError("max_chunk_points must be >= max_node_points")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")


@dataclass
class NodeEntry:
    name: str
    child_mask: int = 0
    num_points: int = 0
    byte_offset: int = 0
    byte_size: int = 0

    @property
    def level(self) -> int:
        return len(self.name) - 1

    @property
    def is_leaf(self) -> bool:
        return self.child_mask == 0


@dataclass
class OctreeHierarchy:
    nodes: dict[str, NodeEntry]
    root_bounds: AABB  # cubic
    cloud_bounds: AABB
    total_points: int
    scale: np.ndarray
    offset: np.ndarray
    max_node_points: int
    grid_size: int
    directory: Optional[Path] = None

    def node_bounds(self, name: str) -> AABB:
        return node_bounds_from_name(self.root_bounds, name)

    def bfs_names(self) -> list[str]:
        return sorted(self.nodes, key=lambda n: (len(n), n))

    def depth(self) -> int:
        return max(len(n) - 1 for n in self.nodes)


@dataclass
class ChunkSpec:
    name: str
    cell_range: tuple[int, int]  # half-open range of max-level cells covered
    point_count: int
    path: Optional[Path] = None


@dataclass
class ChunkTable:
    grid_level: int
    counts: np.ndarray  # dense per-cell counters, 8**grid_level entries
    chunks: list[ChunkSpec] = field(default_factory=list)
    cell_to_chunk: Optional[np.ndarray] = None


def grid_level_for(point_count: int, max_chunk_points: int) -> int:
    if point_count <= max_chunk_points:
        return 1
    return max(1, math.ceil(math.log(point_count / max_chunk_points, 8)))


def octant_cells(positions: np.ndarray, root: AABB, level: int) -> np.ndarray:
    """Level-``level`` octant path of each position, as a base-8 packed cell id.

    Descends midpoints one level at a time, so the mapping agrees exactly
    with repeated :func:`pointlod.core.child_index` calls.
    """
    n = len(positions)
    lo = np.broadcast_to(root.min, (n, 3)).copy()
    hi = np.broadcast_to(root.max, (n, 3)).copy()
    cells = np.zeros(n, dtype=np.int64)
    for _ in range(level):
        mid = (lo + hi) * 0.5
        high = positions >= mid
        octs = (
            (high[:, 0].astype(np.int64) << 2)
            | (high[:, 1].astype(np.int64) << 1)
            | high[:, 2].astype(np.int64)
        )
        cells = (cells << 3) | octs
        lo = np.where(high, mid, lo)
        hi = np.where(high, hi, mid)
    return cells


def cell_name(cell: int, level: int) -> str:
    digits = []
    for _ in range(level):
        digits.append(str(cell & 7))
        cell >>= 3
    return "r" + "".join(reversed(digits))


def chunk_count_pass(
    src: CloudSource,
    cfg: BuildConfig,
    root: Optional[AABB] = None,
    progress: Optional[Callable[[float], None]] = None,
    cancel: Optional[threading.Event] = None,
) -> ChunkTable:
    """First pass: count points per cell of the level-L octant grid."""
    n = src.point_count
    level = grid_level_for(n, cfg.max_chunk_points)
    counts = np.zeros(8**level, dtype=np.int64)
    if root is None:
        root = cube_bounds(cloud_bounds(src))
    ranges = [(s, min(cfg.batch_size, n - s)) for s in range(0, n, cfg.batch_size)]

    lock = threading.Lock()
    done = [0]

    def count_range(rng):
        start, cnt = rng
        if cancel is not None and cancel.is_set():
            raise CancelledError("build cancelled")
        recs = read_range(src, start, cnt)
        pos = dequantize(recs, src.header.scale, src.header.offset)
        cells = octant_cells(pos, root, level)
        local = np.bincount(cells, minlength=8**level)
        with lock:
            counts[:] += local
            done[0] += 1
            if progress:
                progress(done[0] / max(len(ranges), 1))

    if cfg.worker_count == 1 or len(ranges) <= 1:
        for rng in ranges:
            count_range(rng)
    else:
        with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
            list(pool.map(count_range, ranges))
    return ChunkTable(grid_level=level, counts=counts)


def merge_cells(table: ChunkTable, cfg: BuildConfig) -> ChunkTable:
    """Collapse groups of 8 sibling cells bottom-up while they fit a chunk.

    A node becomes a chunk when its subtree count fits max_chunk_points
    but its parent's does not; occupied max-level cells that exceed the
    limit stay as oversize chunks (shallow-tree policy).
    """
    L = table.grid_level
    # counts_at[l][c] = points under cell c of the level-l grid
    counts_at = [None] * (L + 1)
    counts_at[L] = table.counts
    for l in range(L - 1, -1, -1):
        counts_at[l] = counts_at[l + 1].reshape(-1, 8).sum(axis=1)

    chunks: list[ChunkSpec] = []
    cell_to_chunk = np.full(8**L, -1, dtype=np.int64)

    def is_chunk(l: int, c: int) -> bool:
        cnt = counts_at[l][c]
        if cnt == 0:
            return False
        if cnt <= cfg.max_chunk_points:
            return l == 0 or counts_at[l - 1][c >> 3] > cfg.max_chunk_points
        return l == L  # oversize leaf cell, accepted

    for l in range(0, L + 1):
        span = 8 ** (L - l)
        for c in np.flatnonzero(counts_at[l] > 0):
            c = int(c)
            if is_chunk(l, c):
                idx = len(chunks)
                rng = (c * span, (c + 1) * span)
                chunks.append(ChunkSpec(cell_name(c, l), rng, int(counts_at[l][c])))
                cell_to_chunk[rng[0] : rng[1]] = idx
    table.chunks = chunks
    table.cell_to_chunk = cell_to_chunk
    return table


def chunk_distribute_pass(
    src: CloudSource,
    table: ChunkTable,
    cfg: BuildConfig,
    work_dir: Path,
    root: Optional[AABB] = None,
    progress: Optional[Callable[[float], None]] = None,
    cancel: Optional[threading.Event] = None,
) -> None:
    """Second pass: append every point to its chunk file (buffered)."""
    if table.cell_to_chunk is None:
        raise ValueError("merge_cells must run before distribution")
    if root is None:
        root = cube_bounds(cloud_bounds(src))
    work_dir.mkdir(parents=True, exist_ok=True)
    for i, ch in enumerate(table.chunks):
        ch.path = work_dir / f"chunk_{i:05d}.bin"
    handles = [open(ch.path, "wb") for ch in table.chunks]
    buffers = [bytearray() for _ in table.chunks]
    flush_at = 1 << 20  # >= 1 MiB per chunk before hitting the filesystem
    n = src.point_count
    try:
        for start in range(0, n, cfg.batch_size):
            if cancel is not None and cancel.is_set():
                raise CancelledError("build cancelled")
            cnt = min(cfg.batch_size, n - start)
            recs = read_range(src, start, cnt)
            pos = dequantize(recs, src.header.scale, src.header.offset)
            cells = octant_cells(pos, root, table.grid_level)
            chunk_ids = table.cell_to_chunk[cells]
            order = np.argsort(chunk_ids, kind="stable")
            sorted_ids = chunk_ids[order]
            sorted_recs = recs[order]
            edges = np.flatnonzero(np.diff(sorted_ids)) + 1
            for seg, cid in zip(
                np.split(sorted_recs, edges), sorted_ids[np.r_[0, edges]] if cnt else []
            ):
                buf = buffers[cid]
                buf += seg.tobytes()
                if len(buf) >= flush_at:
                    handles[cid].write(buf)
                    buffers[cid] = bytearray()
            if progress:
                progress(min(1.0, (start + cnt) / max(n, 1)))
        for buf, fh in zip(buffers, handles):
            if buf:
                fh.write(buf)
    finally:
        for fh in handles:
            fh.close()


def _sample_into_parent(
    parent_name: str,
    parent_bounds: AABB,
    child_names: list[str],
    payloads: dict[str, np.ndarray],
    cfg: BuildConfig,
    scale: np.ndarray,
    offset: np.ndarray,
) -> np.ndarray:
    """Move the first-arriving point per sampling cell from children to parent.

    Arrival order: children in octant order, payload order within each.
    Returns the parent payload; child payloads are shrunk in place in the
    ``payloads`` map.
    """
    g = cfg.sampling_grid_size
    concat = np.concatenate([payloads[c] for c in child_names])
    if len(concat) == 0:
        return empty_records(0)
    pos = dequantize(concat, scale, offset)
    side = parent_bounds.size
    cell = np.clip(
        ((pos - parent_bounds.min) / (side / g)).astype(np.int64), 0, g - 1
    )
    cells = (cell[:, 0] * g + cell[:, 1]) * g + cell[:, 2]
    _, first = np.unique(cells, return_index=True)
    first.sort()
    taken = np.zeros(len(concat), dtype=bool)
    taken[first] = True
    parent_payload = concat[first]
    # remove moved rows from each child
    off = 0
    for c in child_names:
        ln = len(payloads[c])
        keep = ~taken[off : off + ln]
        payloads[c] = payloads[c][keep]
        off += ln
    return parent_payload


def index_chunk(
    records: np.ndarray,
    chunk_name: str,
    chunk_bounds: AABB,
    cfg: BuildConfig,
    scale: np.ndarray,
    offset: np.ndarray,
) -> dict[str, np.ndarray]:
    """Build a local octree from one in-memory chunk.

    Returns name -> payload records. Points partition by octant until a
    node holds <= max_node_points, then LOD samples move bottom-up.
    """
    payloads: dict[str, np.ndarray] = {}

    def build(recs: np.ndarray, name: str, bounds: AABB) -> None:
        if len(recs) <= cfg.max_node_points:
            payloads[name] = recs
            return
        pos = dequantize(recs, scale, offset)
        octs = child_indices(pos, bounds)
        order = np.argsort(octs, kind="stable")
        recs = recs[order]
        octs = octs[order]
        edges = np.searchsorted(octs, np.arange(9))
        child_names = []
        for k in range(8):
            if edges[k + 1] > edges[k]:
                cn = name + str(k)
                child_names.append(cn)
                build(recs[edges[k] : edges[k + 1]], cn, child_octant_bounds(bounds, k))
        payloads[name] = _sample_into_parent(
            name, bounds, child_names, payloads, cfg, scale, offset
        )

    build(records, chunk_name, chunk_bounds)
    return payloads


def stitch(
    local_payloads: list[dict[str, np.ndarray]],
    root_bounds: AABB,
    cfg: BuildConfig,
    scale: np.ndarray,
    offset: np.ndarray,
) -> dict[str, np.ndarray]:
    """Graft local trees under one root, LOD-populating created intermediates."""
    merged: dict[str, np.ndarray] = {}
    roots: list[str] = []
    for tree in local_payloads:
        if not tree:
            continue
        root = min(tree, key=len)
        roots.append(root)
        for name, payload in tree.items():
            if name in merged:
                raise InconsistentChunksError(f"node {name} produced by two chunks")
            merged[name] = payload
    for a in roots:
        for b in roots:
            if a != b and b.startswith(a):
                raise InconsistentChunksError(f"chunk {a} is a prefix of chunk {b}")

    created = set()
    for r in roots:
        for l in range(1, len(r)):
            prefix = r[:l]
            if prefix not in merged:
                merged[prefix] = empty_records(0)
                created.add(prefix)
    if "r" not in merged:
        merged["r"] = empty_records(0)
        created.add("r")

    for name in sorted(created, key=len, reverse=True):
        child_names = [name + str(k) for k in range(8) if name + str(k) in merged]
        merged[name] = _sample_into_parent(
            name,
            node_bounds_from_name(root_bounds, name),
            child_names,
            payloads=merged,
            cfg=cfg,
            scale=scale,
            offset=offset,
        )
    return merged


def hierarchy_from_payloads(
    payloads: dict[str, np.ndarray],
    root_bounds: AABB,
    bounds: AABB,
    scale: np.ndarray,
    offset: np.ndarray,
    cfg: BuildConfig,
) -> OctreeHierarchy:
    nodes: dict[str, NodeEntry] = {}
    for name, recs in payloads.items():
        nodes[name] = NodeEntry(name=name, num_points=len(recs))
    for name in nodes:
        if name != "r":
            parent = nodes.get(name[:-1])
            if parent is None:
                raise InconsistentChunksError(f"node {name} has no parent")
            parent.child_mask |= 1 << int(name[-1])
    offset_bytes = 0
    for name in sorted(nodes, key=lambda n: (len(n), n)):
        e = nodes[name]
        e.byte_offset = offset_bytes
        e.byte_size = e.num_points * RECORD_SIZE
        offset_bytes += e.byte_size
    return OctreeHierarchy(
        nodes=nodes,
        root_bounds=root_bounds,
        cloud_bounds=bounds,
        total_points=sum(e.num_points for e in nodes.values()),
        scale=np.asarray(scale, dtype=np.float64),
        offset=np.asarray(offset, dtype=np.float64),
        max_node_points=cfg.max_node_points,
        grid_size=cfg.sampling_grid_size,
    )


def write_octree(
    h: OctreeHierarchy,
    payloads: dict[str, np.ndarray],
    out_dir: Path,
    decimated: Optional[np.ndarray] = None,
) -> None:
    """Serialize to metadata.json + hierarchy.bin + points.bin (+ decimated.bin)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = h.bfs_names()

    with open(out_dir / "points.bin", "wb") as f:
        for name in names:
            f.write(payloads[name].tobytes())
        f.flush()
        os.fsync(f.fileno())

    hier = np.zeros(len(names), dtype=HIERARCHY_RECORD_DTYPE)
    for i, name in enumerate(names):
        e = h.nodes[name]
        hier[i]["child_mask"] = e.child_mask
        hier[i]["num_points"] = e.num_points
        hier[i]["byte_offset"] = e.byte_offset
        hier[i]["byte_size"] = e.byte_size
    with open(out_dir / "hierarchy.bin", "wb") as f:
        f.write(hier.tobytes())
        f.flush()
        os.fsync(f.fileno())

    files = {"hierarchy": "hierarchy.bin", "points": "points.bin", "decimated": "decimated.bin"}
    if decimated is not None:
        with open(out_dir / "decimated.bin", "wb") as f:
            f.write(np.ascontiguousarray(decimated).tobytes())
            f.flush()
            os.fsync(f.fileno())
    meta = {
        "version": 1,
        "points": h.total_points,
        "bounds": {"min": list(h.cloud_bounds.min), "max": list(h.cloud_bounds.max)},
        "scale": list(h.scale),
        "offset": list(h.offset),
        "rootSide": float(h.root_bounds.size[0]),
        "maxNodePoints": h.max_node_points,
        "gridSize": h.grid_size,
        "files": files,
    }
    with open(out_dir / "metadata.json", "w") as f:
        json.dump(meta, f, indent=2)
        f.flush()
        os.fsync(f.fileno())
    h.directory = out_dir


def load_octree(directory: str | os.PathLike) -> OctreeHierarchy:
    """Reload a serialized hierarchy; node names rebuilt from BFS order."""
    directory = Path(directory)
    with open(directory / "metadata.json") as f:
        meta = json.load(f)
    raw = (directory / "hierarchy.bin").read_bytes()
    if len(raw) % HIERARCHY_RECORD_DTYPE.itemsize:
        raise MalformedHeaderError("hierarchy.bin not a whole number of records")
    arr = np.frombuffer(raw, dtype=HIERARCHY_RECORD_DTYPE)
    bounds = AABB(np.array(meta["bounds"]["min"]), np.array(meta["bounds"]["max"]))
    side = float(meta["rootSide"])
    c = bounds.center
    root_bounds = AABB(c - side / 2, c + side / 2)

    nodes: dict[str, NodeEntry] = {}
    queue = ["r"]
    for rec in arr:
        if not queue:
            raise MalformedHeaderError("hierarchy.bin has more records than reachable nodes")
        name = queue.pop(0)
        mask = int(rec["child_mask"])
        nodes[name] = NodeEntry(
            name=name,
            child_mask=mask,
            num_points=int(rec["num_points"]),
            byte_offset=int(rec["byte_offset"]),
            byte_size=int(rec["byte_size"]),
        )
        for k in range(8):
            if mask & (1 << k):
                queue.append(name + str(k))
    if queue:
        raise MalformedHeaderError("hierarchy.bin truncated: missing child records")
    return OctreeHierarchy(
        nodes=nodes,
        root_bounds=root_bounds,
        cloud_bounds=bounds,
        total_points=int(meta["points"]),
        scale=np.array(meta["scale"], dtype=np.float64),
        offset=np.array(meta["offset"], dtype=np.float64),
        max_node_points=int(meta["maxNodePoints"]),
        grid_size=int(meta["gridSize"]),
        directory=directory,
    )


def read_node_payload(h: OctreeHierarchy, name: str) -> np.ndarray:
    if h.directory is None:
        raise ValueError("hierarchy has no backing directory")
    e = h.nodes[name]
    with open(Path(h.directory) / "points.bin", "rb") as f:
        f.seek(e.byte_offset)
        raw = f.read(e.byte_size)
    return np.frombuffer(raw, dtype=POINT_DTYPE)


@dataclass
class BuildResult:
    hierarchy: OctreeHierarchy
    timings: dict[str, float]


def build_octree(
    src: CloudSource,
    cfg: BuildConfig,
    out_dir: str | os.PathLike,
    progress: Optional[ProgressFn] = None,
    cancel: Optional[threading.Event] = None,
    decimated: Optional[np.ndarray] = None,
) -> BuildResult:
    """Run the full build: count, merge, distribute, index, stitch, write.

    Output appears atomically: everything is staged in a sibling temp
    directory renamed onto ``out_dir`` on success; cancellation or
    failure leaves no partial output.
    """
    import time

    out_dir = Path(out_dir)
    staging = out_dir.parent / f".{out_dir.name}.staging-{uuid.uuid4().hex[:8]}"
    chunk_dir = staging / "chunks"
    timings: dict[str, float] = {}

    def emit(phase: str, frac: float) -> None:
        if progress:
            progress(phase, frac)

    def check_cancel() -> None:
        if cancel is not None and cancel.is_set():
            raise CancelledError("build cancelled")

    try:
        staging.mkdir(parents=True, exist_ok=False)
        t0 = time.perf_counter()
        bounds = cloud_bounds(src) if src.point_count else AABB(np.zeros(3), np.zeros(3))
        root = cube_bounds(bounds)
        scale, offset = src.header.scale, src.header.offset

        emit("Chunking", 0.0)
        if src.point_count == 0:
            payload_trees: list[dict[str, np.ndarray]] = [{"r": empty_records(0)}]
            table = ChunkTable(grid_level=1, counts=np.zeros(8, dtype=np.int64))
            t1 = time.perf_counter()
            emit("Indexing", 1.0)
            t2 = time.perf_counter()
        else:
            table = chunk_count_pass(
                src, cfg, root, progress=lambda f: emit("Chunking", f * 0.5), cancel=cancel
            )
            merge_cells(table, cfg)
            chunk_distribute_pass(
                src,
                table,
                cfg,
                chunk_dir,
                root,
                progress=lambda f: emit("Chunking", 0.5 + f * 0.5),
                cancel=cancel,
            )
            t1 = time.perf_counter()

            emit("Indexing", 0.0)
            done = [0]
            lock = threading.Lock()

            def index_one(ch: ChunkSpec) -> dict[str, np.ndarray]:
                check_cancel()
                recs = np.fromfile(ch.path, dtype=POINT_DTYPE)
                out = index_chunk(
                    recs,
                    ch.name,
                    node_bounds_from_name(root, ch.name),
                    cfg,
                    scale,
                    offset,
                )
                os.unlink(ch.path)
                with lock:
                    done[0] += 1
                    emit("Indexing", done[0] / max(len(table.chunks), 1))
                return out

            if cfg.worker_count == 1 or len(table.chunks) <= 1:
                payload_trees = [index_one(ch) for ch in table.chunks]
            else:
                with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
                    payload_trees = list(pool.map(index_one, table.chunks))
            t2 = time.perf_counter()

        check_cancel()
        emit("Stitching", 0.0)
        payloads = stitch(payload_trees, root, cfg, scale, offset)
        h = hierarchy_from_payloads(payloads, root, bounds, scale, offset, cfg)
        emit("Stitching", 0.5)
        write_octree(h, payloads, staging, decimated=decimated)
        t3 = time.perf_counter()
        emit("Stitching", 1.0)

        shutil.rmtree(chunk_dir, ignore_errors=True)
        check_cancel()
        if out_dir.exists():
            shutil.rmtree(out_dir)
        os.replace(staging, out_dir)
        h.directory = out_dir
        timings["chunking"] = t1 - t0
        timings["indexing"] = t2 - t1
        timings["stitching"] = t3 - t2
        emit("Done", 1.0)
        return BuildResult(hierarchy=h, timings=timings)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
