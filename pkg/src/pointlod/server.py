"""HTTP service over a built (or building) octree directory.

Serves build status, the decimated preview, the hierarchy skeleton and
per-node payload slices. Status is published by snapshot replacement, so
request handlers never share a lock with build workers.

The preview is available as soon as decimation finishes, long before
the octree exists: /decimated answers 200 while /hierarchy is still 404.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .cloud_io import open_cloud
from .decimate import DecimationConfig, decimate
from .octree import BuildConfig, build_octree, load_octree

PHASES = ["Idle", "Decimating", "Chunking", "Indexing", "Stitching", "Done", "Failed"]


@dataclass(frozen=True)
class BuildStatus:
    phase: str = "Idle"
    progress: float = 0.0
    decimated_ready: bool = False
    message: Optional[str] = None
    started_at: float = 0.0
    updated_at: float = 0.0

    def to_json(self) -> dict:
        return {
            "phase": self.phase,
            "progress": self.progress,
            "decimatedReady": self.decimated_ready,
            "message": self.message,
            "startedAt": self.started_at,
            "updatedAt": self.updated_at,
        }


@dataclass
class ServeConfig:
    port: int = 8080
    served_directory: Path = Path(".")
    allow_cross_origin: bool = True
    max_concurrent_node_reads: int = 8

    def __post_init__(self) -> None:
        self.served_directory = Path(self.served_directory)
        if not (1 <= self.port <= 65535):
            raise ValueError("port must be in [1, 65535]")


class BuildJob:
    """One decimate-then-build run; publishes immutable status snapshots."""

    def __init__(
        self,
        input_path,
        out_dir,
        decimation: Optional[DecimationConfig] = None,
        build: Optional[BuildConfig] = None,
    ) -> None:
        self.input_path = Path(input_path)
        self.out_dir = Path(out_dir)
        self.decimation = decimation or DecimationConfig()
        self.build = build or BuildConfig()
        self.status = BuildStatus(started_at=time.time(), updated_at=time.time())
        self.decimated_bytes: Optional[bytes] = None
        self.timings: dict[str, float] = {}
        self.cancel = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _publish(self, **changes) -> None:
        self.status = replace(self.status, updated_at=time.time(), **changes)

    def start(self) -> "BuildJob":
        self._thread = threading.Thread(target=self.run, daemon=True)
        self._thread.start()
        return self

    def join(self, timeout: Optional[float] = None) -> None:
        if self._thread:
            self._thread.join(timeout)

    def run(self) -> None:
        try:
            t0 = time.perf_counter()
            src = open_cloud(self.input_path)
            self._publish(phase="Decimating", progress=0.0)
            dec = decimate(
                src,
                self.decimation,
                progress=lambda f: self._publish(phase="Decimating", progress=f),
                cancel=self.cancel,
            )
            self.decimated_bytes = dec.points.tobytes()
            self.timings["decimation"] = time.perf_counter() - t0
            self._publish(decimated_ready=True)

            def on_progress(phase: str, frac: float) -> None:
                if phase == "Done":
                    return  # published after the handle below is final
                self._publish(phase=phase, progress=frac)

            result = build_octree(
                src,
                self.build,
                self.out_dir,
                progress=on_progress,
                cancel=self.cancel,
                decimated=dec.points,
            )
            self.timings.update(result.timings)
            self._publish(phase="Done", progress=1.0)
        except Exception as exc:  # noqa: BLE001 - surface any failure in status
            self._publish(phase="Failed", message=f"{type(exc).__name__}: {exc}")


class PointService:
    """Threaded HTTP server exposing the endpoints around one directory."""

    def __init__(self, cfg: ServeConfig, job: Optional[BuildJob] = None) -> None:
        self.cfg = cfg
        self.job = job
        self._hierarchy = None
        self._hier_lock = threading.Lock()
        self._read_gate = threading.Semaphore(cfg.max_concurrent_node_reads)
        self._httpd: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None

    # ----- state ------------------------------------------------------

    def current_status(self) -> BuildStatus:
        if self.job is not None:
            return self.job.status
        if (self.cfg.served_directory / "metadata.json").is_file():
            return BuildStatus(phase="Done", progress=1.0, decimated_ready=True)
        return BuildStatus(phase="Idle")

    def is_done(self) -> bool:
        return self.current_status().phase == "Done"

    def hierarchy(self):
        with self._hier_lock:
            if self._hierarchy is None:
                self._hierarchy = load_octree(self.cfg.served_directory)
            return self._hierarchy

    def decimated_payload(self) -> Optional[bytes]:
        path = self.cfg.served_directory / "decimated.bin"
        if path.is_file():
            return path.read_bytes()
        if self.job is not None and self.job.decimated_bytes is not None:
            return self.job.decimated_bytes
        return None

    def node_payload_slice(self, name: str) -> Optional[bytes]:
        h = self.hierarchy()
        entry = h.nodes.get(name)
        if entry is None:
            return None
        with self._read_gate:
            with open(self.cfg.served_directory / "points.bin", "rb") as f:
                f.seek(entry.byte_offset)
                return f.read(entry.byte_size)

    # ----- lifecycle --------------------------------------------------

    def start(self) -> int:
        handler = _make_handler(self)
        self._httpd = ThreadingHTTPServer(("127.0.0.1", self.cfg.port), handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self._httpd.server_address[1]

    def stop(self) -> None:
        if self._httpd:
            self._httpd.shutdown()
            self._httpd.server_close()

    def serve_forever(self) -> None:
        handler = _make_handler(self)
        self._httpd = ThreadingHTTPServer(("0.0.0.0", self.cfg.port), handler)
        self._httpd.serve_forever()


def _make_handler(service: PointService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args) -> None:  # quiet by default
            pass

        def _headers(self, code: int, ctype: str, length: int) -> None:
            self.send_response(code)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(length))
            if service.cfg.allow_cross_origin:
                self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()

        def _send(self, code: int, body: bytes, ctype: str = "application/octet-stream"):
            self._headers(code, ctype, len(body))
            self.wfile.write(body)

        def _send_json(self, code: int, obj) -> None:
            self._send(code, json.dumps(obj).encode(), "application/json")

        def do_GET(self) -> None:  # noqa: N802 - http.server API
            try:
                self._route()
            except BrokenPipeError:
                pass
            except OSError as exc:
                try:
                    self._send_json(500, {"error": str(exc)})
                except OSError:
                    pass

        def _route(self) -> None:
            path = self.path.split("?", 1)[0]
            if path == "/healthz":
                self._send(200, b"ok", "text/plain")
            elif path == "/status":
                self._send_json(200, service.current_status().to_json())
            elif path == "/metadata":
                meta = service.cfg.served_directory / "metadata.json"
                if not service.is_done() or not meta.is_file():
                    self._send_json(404, {"error": "metadata not available"})
                else:
                    self._send(200, meta.read_bytes(), "application/json")
            elif path == "/hierarchy":
                hier = service.cfg.served_directory / "hierarchy.bin"
                if not service.is_done() or not hier.is_file():
                    self._send_json(404, {"error": "hierarchy not available"})
                else:
                    self._send(200, hier.read_bytes())
            elif path == "/decimated":
                status = service.current_status()
                payload = service.decimated_payload() if status.decimated_ready else None
                if payload is None:
                    self._send_json(404, {"error": "decimated preview not ready"})
                else:
                    self._send(200, payload)
            elif path.startswith("/nodes/"):
                name = path[len("/nodes/") :]
                if not service.is_done():
                    self._send_json(409, {"error": "octree not built yet"})
                    return
                payload = service.node_payload_slice(name)
                if payload is None:
                    self._send_json(404, {"error": f"unknown node {name!r}"})
                else:
                    self._send(200, payload)
            else:
                self._send_json(404, {"error": f"no route {path!r}"})

    return Handler
