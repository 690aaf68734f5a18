import math
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from pointlod.core import AABB, make_records, quantize
from pointlod.errors import DegenerateCameraError, QueueClosedError
from pointlod.octree import BuildConfig, hierarchy_from_payloads
from pointlod.traverse import (
    ActionDispatcher,
    CameraState,
    NodeCache,
    PlanMailbox,
    Residency,
    TraversalConfig,
    TraversalPlan,
    aabb_visible,
    cache_apply,
    extract_frustum,
    node_priority,
    plan_traversal,
)

from oracles import plan_reference, point_inside_frustum

SCALE = np.full(3, 0.001)
OFFSET = np.zeros(3)


def simple_cam(**kw):
    args = dict(
        position=np.zeros(3),
        forward=np.array([0.0, 0.0, -1.0]),
        up=np.array([0.0, 1.0, 0.0]),
        vertical_fov_radians=math.radians(90),
        aspect=1.0,
        near_plane=0.1,
        far_plane=1000.0,
        screen_height_pixels=512,
    )
    args.update(kw)
    return CameraState(**args)


# ------------------------------------------------------------- frustum


def test_frustum_basic_classification():
    f = extract_frustum(simple_cam())
    assert f.contains([0, 0, -1])
    assert not f.contains([0, 0, 1])  # behind the camera


def test_near_plane_center_inside():
    cam = simple_cam()
    f = extract_frustum(cam)
    assert f.contains([0, 0, -cam.near_plane])


def test_frustum_matches_projection_oracle(rng):
    cam = simple_cam(
        position=rng.uniform(-5, 5, 3),
        forward=rng.normal(size=3),
        up=rng.normal(size=3),
        vertical_fov_radians=math.radians(70),
        aspect=1.5,
    )
    f = extract_frustum(cam)
    pts = rng.uniform(-50, 50, (1000, 3))
    for p in pts:
        margin = np.min(f.normals @ p + f.offsets)
        if abs(margin) < 1e-9:
            continue  # plane-boundary points may differ by rounding
        assert f.contains(p) == point_inside_frustum(p, cam)


def test_degenerate_camera_rejected():
    with pytest.raises(DegenerateCameraError):
        CameraState(np.zeros(3), np.zeros(3), np.array([0, 1, 0.0]))
    with pytest.raises(DegenerateCameraError):
        simple_cam(near_plane=10.0, far_plane=1.0)


def test_aabb_visible_encloses_camera():
    f = extract_frustum(simple_cam())
    assert aabb_visible(AABB([-10, -10, -10], [10, 10, 10]), f)


def test_aabb_visible_behind_camera():
    f = extract_frustum(simple_cam())
    assert not aabb_visible(AABB([-1, -1, 5], [1, 1, 6]), f)


def test_aabb_visible_conservative(rng):
    # no box containing an oracle-interior point may be culled
    for _ in range(300):
        cam = simple_cam(
            position=rng.uniform(-10, 10, 3),
            forward=rng.normal(size=3),
            up=rng.normal(size=3),
            vertical_fov_radians=rng.uniform(0.3, 2.4),
            aspect=rng.uniform(0.5, 2.5),
        )
        f = extract_frustum(cam)
        lo = rng.uniform(-30, 30, 3)
        box = AABB(lo, lo + rng.uniform(0.1, 20, 3))
        inner = rng.uniform(box.min, box.max, (8, 3))
        if any(point_inside_frustum(p, cam) for p in inner):
            assert aabb_visible(box, f)


# ------------------------------------------------------------- priority


def test_priority_inside_sphere_is_infinite():
    cam = simple_cam()
    assert node_priority(AABB([-1, -1, -1], [1, 1, 1]), 10, cam) == math.inf


def test_priority_halves_with_distance():
    cam1 = simple_cam(position=np.array([0, 0, 1e4]))
    cam2 = simple_cam(position=np.array([0, 0, 2e4]))
    b = AABB([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5])
    p1 = node_priority(b, 1, cam1)
    p2 = node_priority(b, 1, cam2)
    assert p1 / p2 == pytest.approx(2.0, rel=1e-3)


def test_priority_hand_computed():
    cam = simple_cam(
        position=np.array([0, 0, 100.0]),
        vertical_fov_radians=math.radians(60),
        screen_height_pixels=1080,
    )
    b = AABB([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5])
    r = math.sqrt(3) / 2
    expect = (r / (100 - r)) * (1080 / (2 * math.tan(math.radians(30))))
    assert node_priority(b, 1, cam) == pytest.approx(expect)
    assert expect == pytest.approx(8.17, abs=0.01)


# ------------------------------------------------------------- planning


def synthetic_tree(rng, node_points=900, depth=2):
    """Full 8-ary tree of the given depth: 1 + 8 + 64 = 73 nodes at depth 2."""
    payloads = {}

    def fill(name):
        payloads[name] = make_records(
            quantize(rng.uniform(0, 10, (node_points, 3)), SCALE, OFFSET)
        )
        if len(name) <= depth:
            for k in range(8):
                fill(name + str(k))

    fill("r")
    cfg = BuildConfig(max_chunk_points=10**9, max_node_points=node_points)
    bounds = AABB(np.zeros(3), np.full(3, 10.0))
    return hierarchy_from_payloads(payloads, bounds, bounds, SCALE, OFFSET, cfg), payloads


def random_cam(rng):
    return simple_cam(
        position=rng.uniform(-15, 25, 3),
        forward=rng.normal(size=3),
        up=rng.normal(size=3),
        vertical_fov_radians=rng.uniform(0.4, 2.2),
        aspect=rng.uniform(0.6, 2.2),
        screen_height_pixels=int(rng.integers(200, 2000)),
    )


def test_plan_infinite_budget_sees_everything(rng):
    h, _ = synthetic_tree(rng)
    cam = simple_cam(position=np.array([5.0, 5.0, 40.0]), far_plane=10_000)
    cfg = TraversalConfig(point_budget=10**12, min_projected_pixels=0.0)
    plan = plan_traversal(h, NodeCache(), cam, cfg)
    assert set(plan.render_set) | set(plan.load_list) == set(h.nodes)


def test_plan_budget_below_root(rng):
    h, _ = synthetic_tree(rng, node_points=1000, depth=0)
    cam = simple_cam(position=np.array([5.0, 5.0, 40.0]))
    plan = plan_traversal(h, NodeCache(), cam, TraversalConfig(point_budget=999))
    assert plan.render_set == [] and plan.load_list == []
    plan = plan_traversal(h, NodeCache(), cam, TraversalConfig(point_budget=1000))
    assert plan.load_list == ["r"]


def test_plan_matches_reference_oracle(rng):
    h, _ = synthetic_tree(rng)
    from pointlod.traverse import extract_frustum as ef

    for i in range(60):
        cam = random_cam(rng)
        budget = int(rng.integers(500, 80_000))
        cfg = TraversalConfig(point_budget=budget, min_projected_pixels=2.0)
        plan = plan_traversal(h, NodeCache(), cam, cfg)
        f = ef(cam)
        expect = plan_reference(
            h,
            cam,
            cfg,
            visible_fn=lambda n: aabb_visible(h.node_bounds(n), f),
            priority_fn=lambda n: node_priority(h.node_bounds(n), h.nodes[n].num_points, cam),
        )
        assert sorted(plan.render_set + plan.load_list) == sorted(expect)


def test_plan_parent_closure_and_budget(rng):
    h, _ = synthetic_tree(rng)
    for _ in range(40):
        cam = random_cam(rng)
        cfg = TraversalConfig(point_budget=int(rng.integers(1000, 50_000)))
        plan = plan_traversal(h, NodeCache(), cam, cfg)
        selected = set(plan.render_set) | set(plan.load_list)
        for name in selected:
            if name != "r":
                assert name[:-1] in selected
        total = sum(h.nodes[n].num_points for n in selected)
        assert total <= cfg.point_budget + h.max_node_points


def test_plan_stability_under_fixed_camera(rng):
    h, payloads = synthetic_tree(rng)
    cam = simple_cam(position=np.array([5.0, 5.0, 30.0]))
    cfg = TraversalConfig(point_budget=20_000)
    cache = NodeCache()
    p1 = plan_traversal(h, cache, cam, cfg, tick_id=0)
    cache_apply(
        cache,
        p1,
        reader=lambda n: payloads[n],
        node_sizes=lambda n: h.nodes[n].byte_size,
        max_cached_bytes=1 << 40,
    )
    p2 = plan_traversal(h, cache, cam, cfg, tick_id=1)
    p3 = plan_traversal(h, cache, cam, cfg, tick_id=2)
    assert p2.load_list == [] and p2.unload_list == []
    assert p2.render_set == p3.render_set
    assert sorted(p2.render_set) == sorted(p1.render_set + p1.load_list)


# ------------------------------------------------------------- cache


def tiny_tree(rng):
    return synthetic_tree(rng, node_points=50, depth=1)  # 9 nodes


def test_cache_load_then_unload_same_tick(rng):
    h, payloads = tiny_tree(rng)
    cache = NodeCache()
    plan = TraversalPlan(render_set=[], load_list=["r"], unload_list=[], tick_id=0)
    cache_apply(cache, plan, payloads.__getitem__, lambda n: h.nodes[n].byte_size, 1 << 30)
    assert cache.state_of("r") == Residency.LOADED
    # a later unload wins over the earlier load
    plan2 = TraversalPlan(render_set=[], load_list=[], unload_list=["r"], tick_id=1)
    cache_apply(cache, plan2, payloads.__getitem__, lambda n: h.nodes[n].byte_size, 1 << 30)
    assert cache.state_of("r") == Residency.UNLOADED
    assert cache.resident_bytes == 0


def test_cache_empty_plan_noop(rng):
    h, payloads = tiny_tree(rng)
    cache = NodeCache()
    cache_apply(
        cache,
        TraversalPlan([], [], [], 0),
        payloads.__getitem__,
        lambda n: h.nodes[n].byte_size,
        1 << 30,
    )
    assert cache.resident_bytes == 0
    assert cache.resident_names() == []


def test_cache_in_flight_unload_discards(rng):
    h, payloads = tiny_tree(rng)
    cache = NodeCache()
    release = threading.Event()

    def slow_reader(name):
        release.wait(5)
        return payloads[name]

    with ThreadPoolExecutor(max_workers=1) as pool:
        cache_apply(
            cache,
            TraversalPlan([], ["r"], [], 0),
            slow_reader,
            lambda n: h.nodes[n].byte_size,
            1 << 30,
            executor=pool,
        )
        assert cache.state_of("r") == Residency.LOADING
        cache_apply(
            cache,
            TraversalPlan([], [], ["r"], 1),
            slow_reader,
            lambda n: h.nodes[n].byte_size,
            1 << 30,
        )
        release.set()
    assert cache.state_of("r") == Residency.UNLOADED  # no resurrection
    assert cache.payload("r") is None
    assert cache.resident_bytes == 0


def test_cache_byte_cap_defers(rng):
    h, payloads = tiny_tree(rng)
    cache = NodeCache()
    size = h.nodes["r"].byte_size
    events = cache_apply(
        cache,
        TraversalPlan([], ["r", "r0", "r1"], [], 0),
        payloads.__getitem__,
        lambda n: h.nodes[n].byte_size,
        max_cached_bytes=2 * size,
    )
    assert cache.resident_bytes <= 2 * size
    assert ("r1", "deferred") in events
    assert cache.state_of("r1") == Residency.UNLOADED


def test_cache_load_failure(rng):
    h, payloads = tiny_tree(rng)
    cache = NodeCache()

    def bad_reader(name):
        raise OSError("disk gone")

    events = cache_apply(
        cache,
        TraversalPlan([], ["r"], [], 0),
        bad_reader,
        lambda n: h.nodes[n].byte_size,
        1 << 30,
    )
    assert ("r", "load_failed") in events
    assert cache.state_of("r") == Residency.UNLOADED


def test_cache_randomized_against_sequential_replay(rng):
    h, payloads = synthetic_tree(rng, node_points=20, depth=1)
    names = sorted(h.nodes)
    cache = NodeCache()
    plans = []
    for tick in range(100):
        wanted = set(rng.choice(names, size=int(rng.integers(0, len(names))), replace=False))
        resident = set(cache.resident_names())
        plan = TraversalPlan(
            render_set=[],
            load_list=sorted(wanted - resident),
            unload_list=sorted(resident - wanted),
            tick_id=tick,
        )
        plans.append(plan)
        cache_apply(cache, plan, payloads.__getitem__, lambda n: h.nodes[n].byte_size, 1 << 40)
    # oracle: replay the same plans through a plain dict state machine
    state: dict[str, str] = {}
    for plan in plans:
        for n in plan.unload_list:
            state.pop(n, None)
        for n in plan.load_list:
            state.setdefault(n, "loaded")
    assert sorted(cache.loaded_names()) == sorted(state)
    assert cache.resident_bytes == sum(h.nodes[n].byte_size for n in state)


# ------------------------------------------------------------- dispatcher


def test_dispatcher_bounded_drain():
    d = ActionDispatcher()
    log = []
    for i in range(40):
        d.enqueue(lambda i=i: log.append(i))
    assert d.drain(16) == 16
    assert d.drain(16) == 16
    assert d.drain(16) == 8
    assert log == list(range(40))


def test_dispatcher_empty_drain():
    assert ActionDispatcher().drain(16) == 0


def test_dispatcher_closed():
    d = ActionDispatcher()
    d.close()
    with pytest.raises(QueueClosedError):
        d.enqueue(lambda: None)
    with pytest.raises(QueueClosedError):
        d.drain(1)


def test_dispatcher_per_producer_order():
    d = ActionDispatcher()
    log = []

    def producer(tag):
        for i in range(1000):
            d.enqueue(lambda t=tag, i=i: log.append((t, i)))

    threads = [threading.Thread(target=producer, args=(t,)) for t in ("A", "B")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    while d.drain(64):
        pass
    for tag in ("A", "B"):
        seq = [i for t, i in log if t == tag]
        assert seq == list(range(1000))


def test_mailbox_keeps_newest_only():
    box = PlanMailbox()
    assert box.take() is None
    box.post(TraversalPlan([], [], [], tick_id=1))
    box.post(TraversalPlan([], [], [], tick_id=2))
    plan = box.take()
    assert plan.tick_id == 2
    assert box.take() is None
