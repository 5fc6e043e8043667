# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled enumeration kernel.

States are visited in Gray-code order so each step flips one spin and the
energy and local fields update in O(n).  Two passes: the first finds the
maximum log-weight, the second accumulates exp(E - Emax) weighted moments
in blocks (flushed every BLOCK states) to keep summation error small.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

cdef int BLOCK = 4096


cdef inline int _ctz(unsigned long long k) nogil:
    cdef int i = 0
    while (k & 1) == 0:
        k >>= 1
        i += 1
    return i


cdef void _reset(const double[:, ::1] J, const double[::1] B, double[::1] x,
                 double[::1] h, double* E, int n) noexcept nogil:
    # exact recomputation of local fields and energy for the current x
    cdef int i, k
    cdef double e = 0.0
    for i in range(n):
        h[i] = 0.0
        for k in range(n):
            h[i] += J[i, k] * x[k]
    for i in range(n):
        e += 0.5 * x[i] * h[i] + B[i] * x[i]
    E[0] = e


def enumerate_ising_gray(J_in, B_in, bint pairs=True):
    """Return (logZ, means, second_moments or None) by exhaustive enumeration."""
    cdef const double[:, ::1] J = np.ascontiguousarray(J_in, dtype=np.float64)
    cdef const double[::1] B = np.ascontiguousarray(B_in, dtype=np.float64)
    cdef int n = B.shape[0]
    cdef unsigned long long total = 1ULL << n
    cdef unsigned long long k
    cdef int i, j, f
    cdef double E, Emax, w, xi, d

    x_arr = -np.ones(n)
    h_arr = np.zeros(n)
    cdef double[::1] x = x_arr
    cdef double[::1] h = h_arr

    # pass 1: max log-weight
    _reset(J, B, x, h, &E, n)
    Emax = E
    with nogil:
        for k in range(1, total):
            f = _ctz(k)
            E -= 2.0 * x[f] * (h[f] + B[f])
            d = -2.0 * x[f]
            for i in range(n):
                h[i] += d * J[i, f]
            x[f] = -x[f]
            if (k % BLOCK) == 0:
                _reset(J, B, x, h, &E, n)
            if E > Emax:
                Emax = E

    # pass 2: weighted moments
    m_tot = np.zeros(n)
    m_blk = np.zeros(n)
    p_tot = np.zeros((n, n))
    p_blk = np.zeros((n, n))
    cdef double[::1] mt = m_tot
    cdef double[::1] mb = m_blk
    cdef double[:, ::1] pt = p_tot
    cdef double[:, ::1] pb = p_blk
    cdef double z_tot = 0.0, z_blk = 0.0

    for i in range(n):
        x[i] = -1.0
    _reset(J, B, x, h, &E, n)
    with nogil:
        for k in range(total):
            if k > 0:
                f = _ctz(k)
                E -= 2.0 * x[f] * (h[f] + B[f])
                d = -2.0 * x[f]
                for i in range(n):
                    h[i] += d * J[i, f]
                x[f] = -x[f]
                if (k % BLOCK) == 0:
                    _reset(J, B, x, h, &E, n)
                    z_tot += z_blk
                    z_blk = 0.0
                    for i in range(n):
                        mt[i] += mb[i]
                        mb[i] = 0.0
                        if pairs:
                            for j in range(i + 1, n):
                                pt[i, j] += pb[i, j]
                                pb[i, j] = 0.0
            w = exp(E - Emax)
            z_blk += w
            for i in range(n):
                xi = w * x[i]
                mb[i] += xi
                if pairs:
                    for j in range(i + 1, n):
                        pb[i, j] += xi * x[j]
        z_tot += z_blk
        for i in range(n):
            mt[i] += mb[i]
            if pairs:
                for j in range(i + 1, n):
                    pt[i, j] += pb[i, j]

    logZ = Emax + log(z_tot)
    means = m_tot / z_tot
    if not pairs:
        return logZ, means, None
    second = p_tot / z_tot
    second = second + second.T
    np.fill_diagonal(second, 1.0)
    return logZ, means, second
