"""Generate viewer test fixtures from the backend.

Builds a one-million-point octree with the pointlod CLI, copies its
metadata.json and hierarchy.bin next to the tests, and exports the
server-side traversal plan for 20 fixed cameras via
``pointlod render --plan-json``. Run from this directory:

    python3 make_fixtures.py

The outputs under ../tests/fixtures/ are committed so `npm test` needs
no Python at runtime.
"""
import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))
from pointlod.cloud_io import write_ply_binary  # noqa: E402
from pointlod.core import make_records, quantize  # noqa: E402

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

CAMERAS = [
    # (pos, look_at, fov_deg, width, height, budget)
    ((5, 5, 40), (5, 5, 5), 60, 1280, 720, 2_000_000),
    ((5, 5, 40), (5, 5, 5), 60, 1280, 720, 300_000),
    ((5, 5, 40), (5, 5, 5), 60, 1280, 720, 120_000),
    ((5, 5, 40), (5, 5, 5), 60, 640, 480, 50_000),
    ((40, 5, 5), (5, 5, 5), 60, 1280, 720, 400_000),
    ((-30, 8, 5), (5, 5, 5), 75, 1920, 1080, 600_000),
    ((5, 45, 5), (5, 5, 5), 50, 800, 600, 250_000),
    ((20, 20, 20), (5, 5, 5), 60, 1280, 720, 800_000),
    ((12, 9, 12), (5, 5, 5), 60, 1280, 720, 1_000_000),
    ((8, 6, 9), (5, 5, 5), 90, 1280, 720, 500_000),
    ((6, 5.5, 7), (5, 5, 5), 90, 1280, 720, 2_000_000),
    ((5, 5, 5.8), (5, 5, 0), 70, 1024, 768, 900_000),
    ((2, 2, 2), (8, 8, 8), 60, 1280, 720, 700_000),
    ((0, 0, 30), (10, 10, 0), 45, 1280, 720, 350_000),
    ((-10, -10, -10), (5, 5, 5), 60, 1280, 720, 150_000),
    ((5, 5, 200), (5, 5, 5), 30, 1280, 720, 2_000_000),
    ((5, 5, 12), (5, 5, 5), 100, 320, 240, 80_000),
    ((30, 5, -20), (5, 5, 5), 60, 1600, 900, 1_500_000),
    ((5, 30, 30), (5, 0, 0), 55, 1280, 720, 450_000),
    ((100, 100, 100), (-5, -5, -5), 40, 1280, 720, 200_000),
]


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    plans_dir = FIXTURES / "plans"
    plans_dir.mkdir(exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix="pointlod-fixtures-"))

    rng = np.random.default_rng(2024)
    n = 1_000_000
    records = make_records(
        quantize(rng.uniform(0, 10, (n, 3)), np.full(3, 0.001), np.zeros(3)),
        rng.integers(0, 256, (n, 3)),
    )
    ply = work / "cloud.ply"
    write_ply_binary(ply, records, np.full(3, 0.001), np.zeros(3))

    tree = work / "tree"
    subprocess.run(
        [
            sys.executable, "-m", "pointlod.cli", "convert", str(ply), "-o", str(tree),
            "--max-node-points", "50000",
            "--max-chunk-points", "250000",
            "--grid-size", "32",
        ],
        check=True,
    )
    shutil.copy(tree / "metadata.json", FIXTURES / "metadata.json")
    shutil.copy(tree / "hierarchy.bin", FIXTURES / "hierarchy.bin")

    for i, (pos, look, fov, w, h, budget) in enumerate(CAMERAS):
        out = subprocess.run(
            [
                sys.executable, "-m", "pointlod.cli", "render", str(tree),
                "--pos=" + ",".join(map(str, pos)),
                "--look-at=" + ",".join(map(str, look)),
                f"--fov={fov}",
                f"--size={w}x{h}",
                f"--budget={budget}",
                "--plan-json", "-",
            ],
            check=True,
            capture_output=True,
            text=True,
        )
        doc = json.loads(out.stdout)
        (plans_dir / f"plan_{i:02d}.json").write_text(json.dumps(doc, indent=1))
        print(f"plan_{i:02d}: {len(doc['selected'])} nodes, budget {budget}")

    shutil.rmtree(work)
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
