"""Sampling helpers for simulating tabular chains and MDPs.

Rollouts are plain Python loops over pre-drawn uniforms. Each call owns its
``numpy.random.Generator``; nothing here keeps global state.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

_BLOCK = 65536


class RowSampler:
    """Inverse-CDF sampling from the rows of a stochastic matrix.

    ``rows`` may be dense ``(m, n)`` or sparse CSR ``(m, n)``. Dense inputs keep
    a cumulative table; sparse inputs keep per-row cumulative sums over the
    stored entries only.
    """

    def __init__(self, rows):
        if sp.issparse(rows):
            rows = sp.csr_array(rows)
            rows.sort_indices()
            self.sparse = True
            self.indptr = rows.indptr
            self.indices = rows.indices
            cum = np.empty_like(rows.data)
            for i in range(rows.shape[0]):
                lo, hi = rows.indptr[i], rows.indptr[i + 1]
                cum[lo:hi] = np.cumsum(rows.data[lo:hi])
                if hi > lo:
                    cum[hi - 1] = np.inf
            self.cum = cum
            # rows with a single successor are frequent; skip the search for them
            self.single = np.where(np.diff(rows.indptr) == 1, rows.indices[rows.indptr[:-1]], -1)
        else:
            rows = np.asarray(rows, dtype=float)
            self.sparse = False
            cum = np.cumsum(rows, axis=1)
            cum[:, -1] = np.inf
            self.cum = cum
            nz = rows > 0
            self.single = np.where(nz.sum(axis=1) == 1, np.argmax(nz, axis=1), -1)
        self.single = self.single.tolist()

    def sample(self, row, u):
        j = self.single[row]
        if j >= 0:
            return j
        if self.sparse:
            lo, hi = self.indptr[row], self.indptr[row + 1]
            return int(self.indices[lo + np.searchsorted(self.cum[lo:hi], u, side="right")])
        return int(np.searchsorted(self.cum[row], u, side="right"))


class Uniforms:
    """Block-buffered stream of U(0, 1) draws from one generator."""

    def __init__(self, rng):
        self.rng = rng
        self._buf = rng.random(_BLOCK).tolist()
        self._i = 0

    def __call__(self):
        if self._i == len(self._buf):
            self._buf = self.rng.random(_BLOCK).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u


def simulate_chain(kernel, steps, rng, start=None):
    """State sequence ``s_0, ..., s_{steps-1}`` of the chain with the given kernel."""
    n = kernel.shape[0]
    sampler = RowSampler(kernel)
    uni = Uniforms(rng)
    s = int(rng.integers(n)) if start is None else int(start)
    out = np.empty(steps, dtype=np.int64)
    for t in range(steps):
        out[t] = s
        s = sampler.sample(s, uni())
    return out
