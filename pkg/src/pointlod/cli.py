"""Command-line entry points: convert, info, render, serve, bench."""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cloud_io import open_cloud
from .decimate import DecimationConfig, decimate, default_worker_count
from .errors import PointLodError, MalformedHeaderError, UnsupportedFormatError
from .octree import BuildConfig, build_octree, load_octree, read_node_payload
from .raster import RenderTarget, render_view, write_ppm
from .server import BuildJob, PointService, ServeConfig
from .traverse import (
    CameraState,
    NodeCache,
    TraversalConfig,
    cache_apply,
    plan_traversal,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNSUPPORTED = 2
EXIT_IO = 3
EXIT_INTERRUPT = 130


def _phase_printer():
    last = {}

    def emit(phase: str, frac: float) -> None:
        prev = last.get(phase, -1.0)
        if frac >= 1.0 or frac - prev >= 0.05:
            last[phase] = frac
            print(f"PHASE {phase} {frac:.3f}", file=sys.stderr, flush=True)

    return emit


def _build_config(args) -> BuildConfig:
    return BuildConfig(
        max_chunk_points=args.max_chunk_points,
        max_node_points=args.max_node_points,
        sampling_grid_size=args.grid_size,
        worker_count=args.threads or default_worker_count(),
    )


def cmd_convert(args) -> int:
    emit = _phase_printer()
    try:
        src = open_cloud(args.input)
        cfg = _build_config(args)
        dcfg = DecimationConfig(
            target_count=args.target_decimated, worker_count=cfg.worker_count
        )
        t0 = time.perf_counter()
        emit("Decimating", 0.0)
        dec = decimate(src, dcfg, progress=lambda f: emit("Decimating", f))
        t_dec = time.perf_counter() - t0
        result = build_octree(src, cfg, args.output, progress=emit, decimated=dec.points)
        result.timings["decimation"] = t_dec
        if args.timings_json:
            Path(args.timings_json).write_text(json.dumps(result.timings))
        return EXIT_OK
    except (UnsupportedFormatError, MalformedHeaderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except KeyboardInterrupt:
        return EXIT_INTERRUPT
    except (OSError, PointLodError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def cmd_info(args) -> int:
    try:
        h = load_octree(args.directory)
    except (OSError, json.JSONDecodeError, PointLodError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    levels: dict[int, int] = {}
    for name in h.nodes:
        levels[len(name) - 1] = levels.get(len(name) - 1, 0) + 1
    total_bytes = sum(e.byte_size for e in h.nodes.values())
    print(f"points: {h.total_points}")
    print(f"nodes: {len(h.nodes)}, depth: {h.depth()}")
    print(f"payload bytes: {total_bytes}")
    for lvl in sorted(levels):
        print(f"level {lvl}: {levels[lvl]} nodes")
    return EXIT_OK


def _parse_vec(text: str) -> np.ndarray:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return np.array(parts)


def _parse_size(text: str) -> tuple[int, int]:
    w, h = text.lower().split("x")
    return int(w), int(h)


def _camera_from_args(args, h) -> CameraState:
    if args.pos is not None:
        pos = args.pos
    else:
        c = h.cloud_bounds.center
        side = float(np.max(h.cloud_bounds.size)) or 1.0
        pos = c + np.array([0.0, 0.0, 2.5 * side])
    target = args.look_at if args.look_at is not None else h.cloud_bounds.center
    forward = target - pos
    if np.linalg.norm(forward) == 0:
        forward = np.array([0.0, 0.0, -1.0])
    width, height = args.size
    return CameraState(
        position=pos,
        forward=forward,
        up=np.array([0.0, 1.0, 0.0])
        if abs(forward[1]) < 0.99 * np.linalg.norm(forward)
        else np.array([1.0, 0.0, 0.0]),
        vertical_fov_radians=math.radians(args.fov),
        aspect=width / height,
        screen_height_pixels=height,
    )


def cmd_render(args) -> int:
    try:
        h = load_octree(args.directory)
        cam = _camera_from_args(args, h)
        cfg = TraversalConfig(point_budget=max(args.budget, 1))
        cache = NodeCache()
        plan = plan_traversal(h, cache, cam, cfg)
        if args.budget <= 0:
            plan.render_set, plan.load_list, plan.unload_list = [], [], []
        selected = sorted(plan.render_set + plan.load_list, key=lambda n: (len(n), n))
        # force every load synchronous, then re-plan so the render set is complete
        cache_apply(
            cache,
            plan,
            reader=lambda name: read_node_payload(h, name),
            node_sizes=lambda name: h.nodes[name].byte_size,
            max_cached_bytes=cfg.max_cached_bytes,
        )
        plan = plan_traversal(h, cache, cam, cfg, tick_id=1)
        if args.budget <= 0:
            plan.render_set = []
        width, height = args.size
        if args.plan_json:
            doc = json.dumps(
                {
                    "selected": selected,
                    "budget": args.budget,
                    "camera": {
                        "position": list(cam.position),
                        "forward": list(cam.forward),
                        "up": list(cam.up),
                        "fovDegrees": args.fov,
                        "width": width,
                        "height": height,
                    },
                }
            )
            if args.plan_json == "-":
                print(doc)
            else:
                Path(args.plan_json).write_text(doc)
        if args.output:
            background = RenderTarget.flat(width, height)
            target = render_view(plan, cache, h, cam, background)
            write_ppm(target.color, args.output)
        return EXIT_OK
    except (OSError, PointLodError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def cmd_serve(args) -> int:
    cfg = ServeConfig(
        port=args.port,
        served_directory=args.directory,
        allow_cross_origin=not args.no_cors,
    )
    job = None
    if args.convert:
        job = BuildJob(args.convert, args.directory).start()
    service = PointService(cfg, job)
    print(f"serving {args.directory} on port {args.port}", file=sys.stderr)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        return EXIT_INTERRUPT
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        t0 = time.perf_counter()
        src = open_cloud(args.input)
        cfg = _build_config(args)
        dec = decimate(
            src, DecimationConfig(target_count=args.target_decimated, worker_count=cfg.worker_count)
        )
        t1 = time.perf_counter()
        result = build_octree(src, cfg, args.output, decimated=dec.points)
        total = time.perf_counter() - t0
    except (UnsupportedFormatError, MalformedHeaderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (OSError, PointLodError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    rows = [("decimation", t1 - t0)]
    rows += [(k, result.timings[k]) for k in ("chunking", "indexing", "stitching")]
    accounted = sum(s for _, s in rows)
    rows.append(("finalize", max(total - accounted, 1e-9)))
    print("phase,seconds")
    for phase, seconds in rows:
        print(f"{phase},{seconds:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pointlod", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convert", help="build an octree directory from a PLY/LAS cloud")
    conv.add_argument("input")
    conv.add_argument("-o", "--output", required=True)
    conv.add_argument("--target-decimated", type=int, default=1_000_000)
    conv.add_argument("--max-node-points", type=int, default=200_000)
    conv.add_argument("--max-chunk-points", type=int, default=4_000_000)
    conv.add_argument("--threads", type=int, default=0)
    conv.add_argument("--grid-size", type=int, default=128)
    conv.add_argument("--timings-json", default=None, help=argparse.SUPPRESS)
    conv.set_defaults(fn=cmd_convert)

    info = sub.add_parser("info", help="summarize a built octree directory")
    info.add_argument("directory")
    info.set_defaults(fn=cmd_info)

    rend = sub.add_parser("render", help="headless single-frame render to PPM")
    rend.add_argument("directory")
    rend.add_argument("-o", "--output", default=None)
    rend.add_argument("--pos", type=_parse_vec, default=None)
    rend.add_argument("--look-at", type=_parse_vec, default=None)
    rend.add_argument("--fov", type=float, default=60.0)
    rend.add_argument("--size", type=_parse_size, default=(640, 480))
    rend.add_argument("--budget", type=int, default=2_000_000)
    rend.add_argument("--plan-json", default=None, help="debug: dump the traversal plan")
    rend.set_defaults(fn=cmd_render)

    srv = sub.add_parser("serve", help="HTTP service over a built directory")
    srv.add_argument("directory")
    srv.add_argument("--port", type=int, default=8080)
    srv.add_argument("--convert", default=None, help="attach a live build of this input file")
    srv.add_argument("--no-cors", action="store_true")
    srv.set_defaults(fn=cmd_serve)

    bench = sub.add_parser("bench", help="per-phase wall times as CSV")
    bench.add_argument("input")
    bench.add_argument("-o", "--output", required=True)
    bench.add_argument("--target-decimated", type=int, default=1_000_000)
    bench.add_argument("--max-node-points", type=int, default=200_000)
    bench.add_argument("--max-chunk-points", type=int, default=4_000_000)
    bench.add_argument("--threads", type=int, default=0)
    bench.add_argument("--grid-size", type=int, default=128)
    bench.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
