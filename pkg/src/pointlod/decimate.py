"""Exact, deterministic uniform subsampling with parallel readers.

The selected indices are a pure function of (sourceCount, targetCount),
so the output is byte-identical no matter how many workers run or how
reads are batched; workers just split the selected-index sequence into
contiguous slices and gather their own batches.
"""
from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cloud_io import CloudSource, cloud_bounds, read_range
from .core import AABB, empty_records
from .errors import CancelledError


def default_worker_count() -> int:
    env = os.environ.get("POINTLOD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class DecimationConfig:
    target_count: int = 1_000_000
    worker_count: int = field(default_factory=default_worker_count)
    batch_size: int = 65_536

    def __post_init__(self) -> None:
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")


@dataclass
class DecimatedCloud:
    points: np.ndarray  # POINT_DTYPE records, ascending source index
    source_bounds: AABB
    source_count: int


def select_indices(source_count: int, target_count: int) -> np.ndarray:
    """Strictly increasing uniform sample: index(i) = floor(i*N/target).

    Returns all of 0..N when the source is not larger than the target.
    """
    if source_count < 0:
        raise ValueError("source_count must be >= 0")
    if source_count <= target_count:
        return np.arange(source_count, dtype=np.int64)
    i = np.arange(target_count, dtype=np.int64)
    return (i * source_count) // target_count


def decimate(
    src: CloudSource,
    cfg: DecimationConfig | None = None,
    progress: Optional[Callable[[float], None]] = None,
    cancel: Optional[threading.Event] = None,
) -> DecimatedCloud:
    """Gather the uniform subsample with ``cfg.worker_count`` parallel readers.

    Output equals applying :func:`select_indices` in one sequential pass,
    regardless of worker count or batch size. The progress callback may
    fire from any worker; fractions are monotone and end at 1.0.
    """
    cfg = cfg or DecimationConfig()
    n = src.point_count
    indices = select_indices(n, cfg.target_count)
    bounds = cloud_bounds(src) if n else AABB(np.zeros(3), np.zeros(3))
    if len(indices) == 0:
        if progress:
            progress(1.0)
        return DecimatedCloud(empty_records(0), bounds, n)

    slices = np.array_split(indices, cfg.worker_count)
    total_batches = sum(_batch_count(s, cfg.batch_size) for s in slices if len(s))
    done = [0]
    lock = threading.Lock()

    def report() -> None:
        if progress is None:
            return
        # callback fires under the lock so observed fractions are monotone
        with lock:
            done[0] += 1
            progress(done[0] / max(total_batches, 1))

    def gather(sel: np.ndarray) -> np.ndarray:
        if len(sel) == 0:
            return empty_records(0)
        parts = []
        # Visit only the read batches that contain selected indices.
        for b0, b1, local in _iter_batches(sel, cfg.batch_size):
            if cancel is not None and cancel.is_set():
                raise CancelledError("decimation cancelled")
            recs = read_range(src, b0, b1 - b0)
            parts.append(recs[local])
            report()
        return np.concatenate(parts)

    if cfg.worker_count == 1:
        chunks = [gather(s) for s in slices]
    else:
        with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
            chunks = list(pool.map(gather, slices))
    points = np.concatenate([c for c in chunks if len(c)]) if chunks else empty_records(0)
    if progress:
        progress(1.0)
    return DecimatedCloud(points, bounds, n)


def _batch_count(sel: np.ndarray, batch: int) -> int:
    if len(sel) == 0:
        return 0
    return len(np.unique(sel // batch))


def _iter_batches(sel: np.ndarray, batch: int):
    """Yield (first, last, local_offsets) per read batch holding selections."""
    groups = sel // batch
    starts = np.flatnonzero(np.diff(groups, prepend=groups[0] - 1))
    for gi, s in enumerate(starts):
        e = starts[gi + 1] if gi + 1 < len(starts) else len(sel)
        chunk = sel[s:e]
        yield int(chunk[0]), int(chunk[-1]) + 1, chunk - int(chunk[0])
