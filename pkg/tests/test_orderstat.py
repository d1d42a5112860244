import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tautline._orderstat import RangeOrderStatistics


def test_kth_matches_sorting(rng):
    values = rng.integers(0, 50, size=200)
    ros = RangeOrderStatistics(values)
    for _ in range(500):
        a = int(rng.integers(0, 200))
        b = int(rng.integers(a + 1, 201))
        k = int(rng.integers(0, b - a))
        assert ros.kth(a, b, k) == np.sort(values[a:b])[k]


def test_sorted_range_merges_preserve_multiset():
    values = np.array([5, 1, 4, 2, 3, 7, 6])
    ros = RangeOrderStatistics(values)
    left = list(ros.sorted_range(0, 3))
    right = list(ros.sorted_range(3, 7))
    merged = list(ros.sorted_range(0, 7))
    assert merged == sorted(merged)
    assert sorted(left + right) == merged


def test_out_of_range_k():
    ros = RangeOrderStatistics([3, 1, 2])
    with pytest.raises(IndexError):
        ros.kth(0, 2, 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=1, max_size=60), st.data())
def test_property_kth(values, data):
    arr = np.array(values)
    ros = RangeOrderStatistics(arr)
    a = data.draw(st.integers(0, arr.size - 1))
    b = data.draw(st.integers(a + 1, arr.size))
    k = data.draw(st.integers(0, b - a - 1))
    assert ros.kth(a, b, k) == sorted(values[a:b])[k]
