"""Pure-numpy scan kernels (fallback backend).

All kernels operate on [L, D, N] arrays: L sequence steps, D channels,
N state entries per channel. Each (d, n) lane evolves independently.
"""

import numpy as np

BACKEND = "numpy"


def scan_fwd_seq(abar: np.ndarray, bu: np.ndarray) -> np.ndarray:
    """h[t] = abar[t] * h[t-1] + bu[t], h[-1] = 0, strictly in order."""
    length = abar.shape[0]
    h = np.empty_like(bu)
    state = np.zeros(bu.shape[1:], dtype=bu.dtype)
    for t in range(length):
        state = abar[t] * state + bu[t]
        h[t] = state
    return h


def scan_bwd_seq(abar: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Adjoint recurrence dh[t] = g[t] + abar[t+1] * dh[t+1], run in reverse."""
    length = abar.shape[0]
    dh = np.empty_like(g)
    state = np.zeros(g.shape[1:], dtype=g.dtype)
    for t in range(length - 1, -1, -1):
        if t == length - 1:
            state = g[t].copy()
        else:
            state = g[t] + abar[t + 1] * state
        dh[t] = state
    return dh


def chunk_local_scan(abar: np.ndarray, bu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Within-chunk scans from zero state, vectorized across chunks.

    Inputs are [n_chunks, K, D, N]; returns (local, aprod) of the same
    shape, where local is the zero-start scan of each chunk and aprod the
    running product of abar within each chunk.
    """
    n_chunks, k, d, n = abar.shape
    local = np.empty_like(bu)
    aprod = np.empty_like(abar)
    state = np.zeros((n_chunks, d, n), dtype=bu.dtype)
    prod = np.ones((n_chunks, d, n), dtype=abar.dtype)
    for t in range(k):
        state = abar[:, t] * state + bu[:, t]
        local[:, t] = state
        prod = prod * abar[:, t]
        aprod[:, t] = prod
    return local, aprod
