"""Camera-driven octree traversal.

Walks the hierarchy best-first by projected node size under a point
budget, producing per-tick plans (render/load/unload) that a payload
cache applies asynchronously. A bounded FIFO dispatcher lets any worker
queue actions for a single consumer to drain a fixed number per frame,
and a single-slot mailbox always hands the consumer only the newest
plan.
"""
from __future__ import annotations

import heapq
import math
import queue
import threading
from concurrent.futures import Executor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .core import AABB
from .errors import DegenerateCameraError, QueueClosedError
from .octree import OctreeHierarchy


@dataclass
class CameraState:
    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray
    vertical_fov_radians: float = math.radians(60.0)
    aspect: float = 16.0 / 9.0
    near_plane: float = 0.1
    far_plane: float = 10_000.0
    screen_height_pixels: int = 1080

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64)
        f = np.asarray(self.forward, dtype=np.float64)
        u = np.asarray(self.up, dtype=np.float64)
        fn = np.linalg.norm(f)
        if fn == 0 or np.linalg.norm(u) == 0:
            raise DegenerateCameraError("zero-length camera axis")
        if not (0 < self.near_plane < self.far_plane):
            raise DegenerateCameraError("require 0 < near < far")
        if not (0 < self.vertical_fov_radians < math.pi):
            raise DegenerateCameraError("fov outside (0, pi)")
        f = f / fn
        u = u - f * np.dot(u, f)  # orthonormalize
        un = np.linalg.norm(u)
        if un < 1e-12:
            raise DegenerateCameraError("up parallel to forward")
        self.forward = f
        self.up = u / un

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.forward, self.up)

    def view_coords(self, points: np.ndarray) -> np.ndarray:
        """(n,3) camera-space coordinates: x right, y up, z forward depth."""
        rel = np.atleast_2d(points) - self.position
        return np.stack(
            [rel @ self.right, rel @ self.up, rel @ self.forward], axis=1
        )


@dataclass
class Frustum:
    normals: np.ndarray  # (6,3) unit inward normals
    offsets: np.ndarray  # (6,)

    def contains(self, p: np.ndarray) -> bool:
        return bool(np.all(self.normals @ np.asarray(p, dtype=np.float64) + self.offsets >= 0))


def extract_frustum(cam: CameraState) -> Frustum:
    """Six inward planes; a point is inside iff dot(n,p)+d >= 0 for all."""
    th = math.tan(cam.vertical_fov_radians / 2)
    tw = th * cam.aspect
    f, u, r, pos = cam.forward, cam.up, cam.right, cam.position
    normals = [
        f,  # near
        -f,  # far
        tw * f - r,  # right
        tw * f + r,  # left
        th * f - u,  # top
        th * f + u,  # bottom
    ]
    normals = np.array([n / np.linalg.norm(n) for n in normals])
    offsets = np.empty(6)
    offsets[0] = -np.dot(normals[0], pos) - cam.near_plane
    offsets[1] = np.dot(f, pos) + cam.far_plane
    for i in range(2, 6):
        offsets[i] = -np.dot(normals[i], pos)
    return Frustum(normals=normals, offsets=offsets)


def aabb_visible(b: AABB, f: Frustum) -> bool:
    """Conservative positive-vertex test: never culls an intersecting box."""
    pv = np.where(f.normals >= 0, b.max, b.min)  # (6,3)
    return bool(np.all(np.einsum("ij,ij->i", f.normals, pv) + f.offsets >= 0))


def node_priority(bounds: AABB, num_points: int, cam: CameraState) -> float:
    """Projected pixel radius of the node's bounding sphere.

    Camera inside the sphere scores +inf so enclosing nodes always come
    first.
    """
    c = bounds.center
    r = float(np.linalg.norm(bounds.size)) / 2
    dist = float(np.linalg.norm(cam.position - c)) - r
    if dist <= 0:
        return math.inf
    d = max(dist, cam.near_plane)
    return (r / d) * (cam.screen_height_pixels / (2 * math.tan(cam.vertical_fov_radians / 2)))


@dataclass
class TraversalConfig:
    point_budget: int = 2_000_000
    min_projected_pixels: float = 2.0
    max_actions_per_tick: int = 16
    max_cached_bytes: int = 1 << 32

    def __post_init__(self) -> None:
        if self.point_budget < 1:
            raise ValueError("point_budget must be >= 1")
        if self.max_actions_per_tick < 1:
            raise ValueError("max_actions_per_tick must be >= 1")


@dataclass
class TraversalPlan:
    render_set: list[str]
    load_list: list[str]
    unload_list: list[str]
    tick_id: int = 0


class Residency(Enum):
    UNLOADED = "unloaded"
    LOADING = "loading"
    LOADED = "loaded"


@dataclass
class _CacheSlot:
    state: Residency = Residency.UNLOADED
    payload: Optional[np.ndarray] = None
    bytes: int = 0
    generation: int = 0


class NodeCache:
    """Payload residency tracker. Transitions only Unloaded->Loading->Loaded->Unloaded."""

    def __init__(self) -> None:
        self._slots: dict[str, _CacheSlot] = {}
        self._lock = threading.Lock()
        self.resident_bytes = 0
        self.committed_bytes = 0  # includes in-flight loads

    def state_of(self, name: str) -> Residency:
        with self._lock:
            slot = self._slots.get(name)
            return slot.state if slot else Residency.UNLOADED

    def payload(self, name: str) -> Optional[np.ndarray]:
        with self._lock:
            slot = self._slots.get(name)
            if slot and slot.state == Residency.LOADED:
                return slot.payload
            return None

    def loaded_names(self) -> list[str]:
        with self._lock:
            return [n for n, s in self._slots.items() if s.state == Residency.LOADED]

    def resident_names(self) -> list[str]:
        with self._lock:
            return [n for n, s in self._slots.items() if s.state != Residency.UNLOADED]


def plan_traversal(
    h: OctreeHierarchy,
    cache: NodeCache,
    cam: CameraState,
    cfg: TraversalConfig,
    tick_id: int = 0,
) -> TraversalPlan:
    """Best-first selection by descending projected size under the budget.

    Children are only reachable through a selected parent; the first node
    that would overflow the budget stops expansion entirely. Ties break
    by ascending node name for determinism.
    """
    f = extract_frustum(cam)
    selected: list[tuple[float, str]] = []
    total = 0
    heap: list[tuple[float, str]] = []

    def push(name: str) -> None:
        e = h.nodes[name]
        pri = node_priority(h.node_bounds(name), e.num_points, cam)
        heapq.heappush(heap, (-pri, name))

    if "r" in h.nodes:
        push("r")
    while heap:
        neg_pri, name = heapq.heappop(heap)
        pri = -neg_pri
        e = h.nodes[name]
        if not aabb_visible(h.node_bounds(name), f):
            continue
        if pri < cfg.min_projected_pixels:
            continue
        if total + e.num_points > cfg.point_budget:
            break
        selected.append((pri, name))
        total += e.num_points
        for k in range(8):
            if e.child_mask & (1 << k):
                push(name + str(k))

    selected_names = {n for _, n in selected}
    render_set = []
    load_list = []
    for pri, name in sorted(selected, key=lambda t: (-t[0], t[1])):
        if cache.state_of(name) == Residency.LOADED:
            render_set.append(name)
        else:
            load_list.append(name)
    unload_list = sorted(n for n in cache.resident_names() if n not in selected_names)
    return TraversalPlan(render_set, load_list, unload_list, tick_id)


LoadEvent = tuple[str, str]  # (node name, "loaded" | "load_failed" | "deferred")


def cache_apply(
    cache: NodeCache,
    plan: TraversalPlan,
    reader: Callable[[str], np.ndarray],
    node_sizes: Callable[[str], int],
    max_cached_bytes: int,
    executor: Optional[Executor] = None,
    events: Optional[list[LoadEvent]] = None,
) -> list[LoadEvent]:
    """Apply one plan: immediate unloads, then loads in priority order.

    A load completing after its node was unloaded is discarded (the slot
    generation changed), and loads that would push committed residency
    past ``max_cached_bytes`` are deferred to a later plan.
    """
    if events is None:
        events = []
    ev_lock = threading.Lock()

    def emit(name: str, what: str) -> None:
        with ev_lock:
            events.append((name, what))

    with cache._lock:
        for name in plan.unload_list:
            slot = cache._slots.get(name)
            if slot is None or slot.state == Residency.UNLOADED:
                continue
            if slot.state == Residency.LOADED:
                cache.resident_bytes -= slot.bytes
            cache.committed_bytes -= slot.bytes
            slot.state = Residency.UNLOADED
            slot.payload = None
            slot.bytes = 0
            slot.generation += 1

    to_load: list[tuple[str, int]] = []
    with cache._lock:
        for name in plan.load_list:
            slot = cache._slots.setdefault(name, _CacheSlot())
            if slot.state != Residency.UNLOADED:
                continue
            size = node_sizes(name)
            if cache.committed_bytes + size > max_cached_bytes:
                emit(name, "deferred")
                continue
            slot.state = Residency.LOADING
            slot.bytes = size
            cache.committed_bytes += size
            to_load.append((name, slot.generation))

    def finish(name: str, generation: int) -> None:
        try:
            payload = reader(name)
        except OSError:
            with cache._lock:
                slot = cache._slots[name]
                if slot.generation == generation and slot.state == Residency.LOADING:
                    cache.committed_bytes -= slot.bytes
                    slot.state = Residency.UNLOADED
                    slot.bytes = 0
                    slot.generation += 1
            emit(name, "load_failed")
            return
        with cache._lock:
            slot = cache._slots[name]
            if slot.generation != generation or slot.state != Residency.LOADING:
                return  # unloaded while in flight: no resurrection
            slot.state = Residency.LOADED
            slot.payload = payload
            cache.resident_bytes += slot.bytes
        emit(name, "loaded")

    if executor is None:
        for name, gen in to_load:
            finish(name, gen)
    else:
        for name, gen in to_load:
            executor.submit(finish, name, gen)
    return events


class ActionDispatcher:
    """Multi-producer FIFO; one consumer drains a bounded number per tick."""

    def __init__(self) -> None:
        self._q: queue.SimpleQueue = queue.SimpleQueue()
        self._closed = False

    def enqueue(self, action: Callable[[], None]) -> None:
        if self._closed:
            raise QueueClosedError("dispatcher is shut down")
        self._q.put(action)

    def drain(self, max_actions: int) -> int:
        if self._closed:
            raise QueueClosedError("dispatcher is shut down")
        executed = 0
        while executed < max_actions:
            try:
                action = self._q.get_nowait()
            except queue.Empty:
                break
            action()
            executed += 1
        return executed

    def close(self) -> None:
        self._closed = True


class PlanMailbox:
    """Single-slot handoff that keeps only the newest plan."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._plan: Optional[TraversalPlan] = None

    def post(self, plan: TraversalPlan) -> None:
        with self._lock:
            self._plan = plan

    def take(self) -> Optional[TraversalPlan]:
        with self._lock:
            plan, self._plan = self._plan, None
            return plan
