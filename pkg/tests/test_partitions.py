import numpy as np
import pytest

from selrec import IntervalPartition, SiteConfig, WeightedPartition, decode, encode
from selrec import spawn_stream
from selrec.partitions import anchor_site


def cfg_n(n, i_star):
    rho = tuple(0.0 if i == i_star else 0.5 for i in range(1, n + 1))
    return SiteConfig(n=n, i_star=i_star, s=1.0, rho=rho)


def test_interval_partition_validation():
    IntervalPartition([{1, 2}, {3}])
    with pytest.raises(ValueError):
        IntervalPartition([{1, 3}, {2}])  # not an interval
    with pytest.raises(ValueError):
        IntervalPartition([{1, 2}, {2, 3}])  # overlap
    with pytest.raises(ValueError):
        IntervalPartition([{1}, {3}])  # gap


def test_block_of_and_trivial():
    p = IntervalPartition([{1, 2}, {3, 4}])
    assert p.block_of(2) == (1, 2)
    assert p.block_of(4) == (3, 4)
    assert IntervalPartition.trivial(4).blocks == ((1, 2, 3, 4),)


def test_from_cuts():
    p = IntervalPartition.from_cuts(5, [3, 5])
    assert p.blocks == ((1, 2), (3, 4), (5,))


def test_anchor_site():
    assert anchor_site(frozenset({1, 2, 3}), 5) == 3
    assert anchor_site(frozenset({6, 7, 8}), 5) == 6
    assert anchor_site(frozenset({4, 5}), 5) == 5


def test_weighted_partition_validation():
    p = IntervalPartition([{1, 2}, {3}])
    WeightedPartition(p, (2, 1))
    with pytest.raises(ValueError):
        WeightedPartition(p, (2,))
    with pytest.raises(ValueError):
        WeightedPartition(p, (0, 1))


def test_encoding_worked_example():
    """Ten sites, selected site 5, four blocks."""
    cfg = cfg_n(10, 5)
    part = IntervalPartition([{1, 2, 3}, {4, 5}, {6, 7, 8}, {9, 10}])
    wp = WeightedPartition(part, (3, 4, 1, 2))
    m = encode(wp, cfg)
    assert list(m) == [0, 0, 3, 0, 4, 1, 0, 0, 2, 0]
    back = decode(np.array(m), cfg)
    assert back == wp


def test_trivial_partition_encodes_to_unit_vector():
    for n, i_star in [(1, 1), (4, 2), (6, 6)]:
        cfg = cfg_n(n, i_star)
        wp = WeightedPartition.initial(n)
        m = encode(wp, cfg)
        expect = np.zeros(n, dtype=np.int64)
        expect[i_star - 1] = 1
        assert np.array_equal(m, expect)
        assert decode(m, cfg) == wp


def test_round_trip_random():
    rng = spawn_stream(17, 0)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        i_star = int(rng.integers(1, n + 1))
        cfg = cfg_n(n, i_star)
        m = rng.integers(0, 4, size=n)
        m[i_star - 1] = rng.integers(1, 6)
        wp = decode(m, cfg)
        assert np.array_equal(encode(wp, cfg), m)
        # every block is an interval and weights are positive
        assert sum(len(b) for b in wp.partition.blocks) == n
        assert all(v >= 1 for v in wp.weights)


def test_decode_rejects_bad_vectors():
    cfg = cfg_n(3, 2)
    with pytest.raises(ValueError):
        decode(np.array([0, 0, 0]), cfg)  # selected site must carry a line
    with pytest.raises(ValueError):
        decode(np.array([0, -1, 0]), cfg)
    with pytest.raises(ValueError):
        decode(np.array([0, 1]), cfg)
