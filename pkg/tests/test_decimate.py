import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointlod.cloud_io import open_cloud, read_range, write_ply_binary
from pointlod.decimate import DecimationConfig, decimate, select_indices
from pointlod.errors import CancelledError

from conftest import make_cloud_records, position_multiset


def test_select_basic():
    assert select_indices(10, 5).tolist() == [0, 2, 4, 6, 8]


def test_select_identity():
    assert np.array_equal(select_indices(100, 100), np.arange(100))
    assert np.array_equal(select_indices(50, 100), np.arange(50))


def test_select_great_hall_sized():
    # 222,708,159-point cloud down to one million
    idx = select_indices(222_708_159, 1_000_000)
    assert len(idx) == 1_000_000
    assert idx[0] == 0
    assert idx[-1] == 222_707_936  # floor(999999 * N / 10^6)


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(min_value=0, max_value=10**9),
    target=st.integers(min_value=1, max_value=10**6),
)
def test_select_properties(n, target):
    idx = select_indices(n, target)
    assert len(idx) == min(n, target)
    if len(idx):
        assert idx[0] == 0
        assert np.all(np.diff(idx) >= 1)  # strictly increasing
        assert idx[-1] < n
    if n > target:
        stride = n // target
        diffs = np.diff(idx)
        assert set(np.unique(diffs)) <= {stride, stride + 1}  # uniform spread


@pytest.fixture(scope="module")
def big_ply(tmp_path_factory):
    rng = np.random.default_rng(7)
    recs = make_cloud_records(rng, 300_000)
    path = tmp_path_factory.mktemp("dec") / "big.ply"
    write_ply_binary(path, recs, np.full(3, 0.001), np.zeros(3))
    return path, recs


def test_worker_count_does_not_change_output(big_ply):
    path, _ = big_ply
    src = open_cloud(path)
    outputs = []
    for workers in (1, 2, 8):
        cfg = DecimationConfig(target_count=50_000, worker_count=workers)
        outputs.append(decimate(src, cfg).points.tobytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_batch_size_does_not_change_output(big_ply):
    path, _ = big_ply
    src = open_cloud(path)
    a = decimate(src, DecimationConfig(target_count=10_000, worker_count=3, batch_size=100))
    b = decimate(src, DecimationConfig(target_count=10_000, worker_count=3, batch_size=65_536))
    assert a.points.tobytes() == b.points.tobytes()


def test_matches_sequential_gather(big_ply):
    path, recs = big_ply
    src = open_cloud(path)
    cfg = DecimationConfig(target_count=42_000, worker_count=4)
    out = decimate(src, cfg)
    expect = read_range(src, 0, src.point_count)[select_indices(len(recs), 42_000)]
    assert np.array_equal(out.points, expect)
    assert out.source_count == len(recs)


def test_clustered_cloud_matches_oracle(tmp_path, rng):
    recs = make_cloud_records(rng, 100_000, "clustered")
    path = tmp_path / "cl.ply"
    write_ply_binary(path, recs, np.full(3, 0.001), np.zeros(3))
    src = open_cloud(path)
    out = decimate(src, DecimationConfig(target_count=10_000, worker_count=8))
    oracle = recs[select_indices(len(recs), 10_000)]
    assert np.array_equal(position_multiset(out.points), position_multiset(oracle))
    assert np.array_equal(out.points, oracle)


def test_source_smaller_than_target(big_ply):
    path, recs = big_ply
    src = open_cloud(path)
    out = decimate(src, DecimationConfig(target_count=10**7, worker_count=2))
    assert len(out.points) == len(recs)


def test_empty_source(tmp_path):
    from pointlod.core import make_records

    path = tmp_path / "e.ply"
    write_ply_binary(path, make_records(np.zeros((0, 3))), np.full(3, 0.001), np.zeros(3))
    out = decimate(open_cloud(path), DecimationConfig(target_count=100))
    assert len(out.points) == 0
    assert out.source_count == 0


def test_progress_monotone_and_complete(big_ply):
    path, _ = big_ply
    src = open_cloud(path)
    seen = []
    lock = threading.Lock()

    def progress(frac):
        with lock:
            seen.append(frac)

    decimate(src, DecimationConfig(target_count=20_000, worker_count=4), progress=progress)
    assert seen
    assert all(0.0 <= f <= 1.0 for f in seen)
    assert seen[-1] == 1.0
    assert all(b >= a for a, b in zip(seen, seen[1:]))


def test_cancellation(big_ply):
    path, _ = big_ply
    src = open_cloud(path)
    cancel = threading.Event()
    cancel.set()
    with pytest.raises(CancelledError):
        decimate(src, DecimationConfig(target_count=50_000, worker_count=1), cancel=cancel)
