import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from dualpop.parallel import RunningStats, chunk_bounds, replicate_seeds


def test_seeds_prefix_stable():
    a = replicate_seeds(7, 10)
    b = replicate_seeds(7, 25)
    assert np.array_equal(a, b[:10])


def test_seed_streams_differ_by_key():
    assert not np.array_equal(replicate_seeds(7, 5, key=0), replicate_seeds(7, 5, key=1))
    assert not np.array_equal(replicate_seeds(7, 5), replicate_seeds(8, 5))


def test_chunk_bounds_cover():
    bs = chunk_bounds(10, 3)
    assert bs[0][0] == 0 and bs[-1][1] == 10
    assert all(a[1] == b[0] for a, b in zip(bs, bs[1:]))


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.integers(1, 7))
def test_merge_matches_direct(xs, size):
    x = np.asarray(xs)
    acc = RunningStats()
    for a, b in chunk_bounds(x.size, size):
        acc = acc.merge(RunningStats.of(x[a:b]))
    assert acc.count == x.size
    assert np.isclose(acc.mean, x.mean(), atol=1e-9)
    assert np.isclose(acc.variance, x.var(ddof=1), rtol=1e-7, atol=1e-7)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20),
       st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_merge_order_independent(a, b):
    x = RunningStats.of(np.asarray(a)).merge(RunningStats.of(np.asarray(b)))
    y = RunningStats.of(np.asarray(b)).merge(RunningStats.of(np.asarray(a)))
    assert x.count == y.count
    assert np.isclose(x.mean, y.mean)
