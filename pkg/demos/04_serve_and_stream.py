"""Serve a cloud over HTTP while it is still being converted.

A build job runs in the background while the service answers requests.
The decimated preview endpoint goes live as soon as decimation
finishes — long before the octree exists — so a client can draw
something almost immediately (preview-before-tree).
"""
import socket
import tempfile
import time
from pathlib import Path

import numpy as np
import requests

from pointlod import write_ply_binary
from pointlod.core import make_records, quantize
from pointlod.decimate import DecimationConfig
from pointlod.server import BuildJob, PointService, ServeConfig

scale, offset = np.full(3, 0.001), np.zeros(3)
rng = np.random.default_rng(3)
records = make_records(quantize(rng.uniform(0, 10, (1_000_000, 3)), scale, offset))

workdir = Path(tempfile.mkdtemp(prefix="pointlod-demo-"))
ply = workdir / "cloud.ply"
write_ply_binary(ply, records, scale, offset)
out = workdir / "tree"

job = BuildJob(ply, out, decimation=DecimationConfig(target_count=100_000)).start()
with socket.socket() as s:
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
service = PointService(ServeConfig(port=port, served_directory=out), job=job)
service.start()
base = f"http://127.0.0.1:{port}"

saw_preview_before_tree = False
while True:
    status = requests.get(f"{base}/status").json()
    preview = requests.get(f"{base}/decimated").status_code
    tree = requests.get(f"{base}/hierarchy").status_code
    print(f"phase={status['phase']:10s} progress={status['progress']:5.0%} "
          f"/decimated={preview} /hierarchy={tree}")
    if preview == 200 and tree == 404:
        saw_preview_before_tree = True
    if status["phase"] in ("Done", "Failed"):
        break
    time.sleep(0.05)

assert saw_preview_before_tree, "preview should be served before the octree exists"
print("preview was live before the octree — streaming clients never wait for the build")

root = requests.get(f"{base}/nodes/r")
print(f"/nodes/r -> {root.status_code}, {len(root.content)} bytes "
      f"({len(root.content) // 16} points)")
service.stop()
