"""Open a point cloud file and build an instant preview by decimation.

Writes a small synthetic PLY, opens it through the format-sniffing
reader, and uniformly subsamples it down to a fixed preview budget.
The subsample is a pure function of (sourceCount, targetCount), so the
result is byte-identical no matter how many reader threads run.
"""
import tempfile
from pathlib import Path

import numpy as np

from pointlod import (
    DecimationConfig,
    cloud_bounds,
    decimate,
    open_cloud,
    write_ply_binary,
)
from pointlod.core import make_records, quantize

scale, offset = np.full(3, 0.001), np.zeros(3)
rng = np.random.default_rng(0)
positions = rng.uniform(0, 10, (200_000, 3))
records = make_records(quantize(positions, scale, offset), rng.integers(0, 256, (200_000, 3)))

workdir = Path(tempfile.mkdtemp(prefix="pointlod-demo-"))
ply = workdir / "cloud.ply"
write_ply_binary(ply, records, scale, offset)
print(f"wrote {ply} ({ply.stat().st_size / 1e6:.1f} MB)")

src = open_cloud(ply)
print(f"format={src.header.format.name} points={src.point_count}")
print(f"bounds min={cloud_bounds(src).min} max={cloud_bounds(src).max}")

preview = decimate(src, DecimationConfig(target_count=20_000, worker_count=4))
print(f"preview: {len(preview.points)} points from {preview.source_count}")

again = decimate(src, DecimationConfig(target_count=20_000, worker_count=1))
assert preview.points.tobytes() == again.points.tobytes()
print("identical bytes with 4 workers and 1 worker — decimation is deterministic")
