"""Pure-numpy enumeration used when the compiled kernel is unavailable.

States are processed in index order in chunks; bit ``i`` of the state index
is spin ``i`` (1 -> +1).  A running maximum keeps every weight <= 1.
"""

import numpy as np

CHUNK_BITS = 14


def enumerate_ising_numpy(J, B, pairs=True):
    J = np.asarray(J, dtype=float)
    B = np.asarray(B, dtype=float)
    n = len(B)
    total = 1 << n
    chunk = 1 << min(CHUNK_BITS, n)
    shifts = np.arange(n, dtype=np.int64)

    top = -np.inf
    z = 0.0
    m = np.zeros(n)
    p = np.zeros((n, n))
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        X = (((idx[:, None] >> shifts[None, :]) & 1) * 2 - 1).astype(float)
        E = 0.5 * np.einsum("si,ij,sj->s", X, J, X) + X @ B
        emax = E.max()
        if emax > top:
            scale = np.exp(top - emax) if np.isfinite(top) else 0.0
            z *= scale
            m *= scale
            p *= scale
            top = emax
        w = np.exp(E - top)
        z += w.sum()
        wX = w[:, None] * X
        m += wX.sum(axis=0)
        if pairs:
            p += X.T @ wX
    logZ = top + np.log(z)
    means = m / z
    if not pairs:
        return logZ, means, None
    second = p / z
    np.fill_diagonal(second, 1.0)
    return logZ, means, 0.5 * (second + second.T)
