import numpy as np
import pytest

from pointlod.cloud_io import write_las, write_ply_binary
from pointlod.core import make_records, quantize


def synthetic_positions(rng, n, dist="uniform", extent=10.0):
    """Point distributions used across the suite: uniform, clustered, planar."""
    if dist == "uniform":
        return rng.uniform(0, extent, (n, 3))
    if dist == "clustered":
        centers = rng.uniform(0, extent, (max(1, n // 1000 + 1), 3))
        which = rng.integers(0, len(centers), n)
        return centers[which] + rng.normal(0, extent / 50, (n, 3))
    if dist == "planar":
        p = rng.uniform(0, extent, (n, 3))
        p[:, 2] = extent / 2 + rng.normal(0, extent / 1000, n)
        return p
    raise ValueError(dist)


def make_cloud_records(rng, n, dist="uniform", extent=10.0, scale=0.001):
    pos = synthetic_positions(rng, n, dist, extent)
    q = quantize(pos, np.full(3, scale), np.zeros(3))
    colors = rng.integers(0, 256, (n, 3))
    return make_records(q, colors)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ply_cloud(tmp_path, rng):
    """50k-point binary PLY plus its records, opened lazily by tests."""
    recs = make_cloud_records(rng, 50_000)
    path = tmp_path / "cloud.ply"
    write_ply_binary(path, recs, np.full(3, 0.001), np.zeros(3))
    return path, recs


@pytest.fixture
def las_cloud(tmp_path, rng):
    recs = make_cloud_records(rng, 20_000)
    path = tmp_path / "cloud.las"
    write_las(path, recs, np.full(3, 0.001), np.zeros(3))
    return path, recs


def position_multiset(records):
    """Sortable bit view of quantized positions for multiset comparison."""
    q = np.stack([records["px"], records["py"], records["pz"]], axis=1)
    return np.sort(np.ascontiguousarray(q).view([("x", "i4"), ("y", "i4"), ("z", "i4")]).ravel())
