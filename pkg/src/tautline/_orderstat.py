"""Range order statistics over a static integer array (wavelet matrix).

The rank-based quantile sweep needs the ``i``-th smallest rank inside the index range of a
segment every time a segment is created or merged.  Segments are always
contiguous index ranges of a fixed rank vector, so a wavelet matrix built
once in O(n log n) answers every such query in O(log n) without having to
carry sorted per-segment lists around.
"""

from __future__ import annotations

import numpy as np


class RangeOrderStatistics:
    """k-th smallest value of ``values[start:stop]`` in O(log max(values)).

    Parameters
    ----------
    values : array_like of non-negative int
    """

    def __init__(self, values):
        cur = np.asarray(values, dtype=np.int64)
        if cur.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if cur.size and cur.min() < 0:
            raise ValueError("values must be non-negative")
        self.n = int(cur.size)
        top = int(cur.max()) if cur.size else 0
        self.levels = max(1, top.bit_length())
        self._rank0 = []
        self._nzeros = []
        for bit in range(self.levels - 1, -1, -1):
            ones = ((cur >> bit) & 1).astype(bool)
            zeros_prefix = np.zeros(self.n + 1, dtype=np.int64)
            np.cumsum(~ones, out=zeros_prefix[1:])
            # plain lists: scalar indexing is several times faster than numpy
            self._rank0.append(zeros_prefix.tolist())
            self._nzeros.append(int(zeros_prefix[-1]))
            cur = np.concatenate([cur[~ones], cur[ones]])

    def kth(self, start: int, stop: int, k: int) -> int:
        """Return the ``k``-th smallest (0-based) of ``values[start:stop]``."""
        if not 0 <= start < stop <= self.n:
            raise IndexError(f"empty or invalid range [{start}, {stop})")
        if not 0 <= k < stop - start:
            raise IndexError(f"k={k} outside range of size {stop - start}")
        value = 0
        bit = self.levels - 1
        for rank0, nzeros in zip(self._rank0, self._nzeros):
            za = rank0[start]
            zb = rank0[stop]
            zeros = zb - za
            if k < zeros:
                start, stop = za, zb
            else:
                k -= zeros
                start = nzeros + start - za
                stop = nzeros + stop - zb
                value |= 1 << bit
            bit -= 1
        return value

    def sorted_range(self, start: int, stop: int) -> np.ndarray:
        """All values of the range in ascending order (test/diagnostic helper)."""
        return np.array([self.kth(start, stop, k) for k in range(stop - start)],
                        dtype=np.int64)
