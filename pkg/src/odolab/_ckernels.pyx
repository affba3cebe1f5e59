# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: synchronous toppling and direct lattice cosine sums."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, pow, exp, M_PI
from libc.stdlib cimport malloc, free

cnp.import_array()


def topple_sweep(s, const cnp.int64_t[:, ::1] nbr):
    cdef double[::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef Py_ssize_t size = sv.shape[0], x, k
    cdef int deg = nbr.shape[1]
    cdef double inv = 1.0 / deg, acc
    out = np.empty(size, dtype=np.float64)
    em = np.empty(size, dtype=np.float64)
    cdef double[::1] ov = out, ev = em
    for x in range(size):
        ev[x] = sv[x] - 1.0 if sv[x] > 1.0 else 0.0
    for x in range(size):
        acc = 0.0
        for k in range(deg):
            acc += ev[nbr[x, k]]
        ov[x] = (sv[x] if sv[x] < 1.0 else 1.0) + acc * inv
    return out, em


cdef double _run(double* s, double* odo, double* em, const cnp.int64_t* nbr,
                 Py_ssize_t size, int deg, double tol, long max_sweeps,
                 long* sweeps_out) noexcept nogil:
    cdef Py_ssize_t x
    cdef int k
    cdef long sweeps = 0
    cdef double inv = 1.0 / deg, acc, r, residual = -1e300
    for x in range(size):
        if s[x] - 1.0 > residual:
            residual = s[x] - 1.0
    while residual > tol and sweeps < max_sweeps:
        for x in range(size):
            em[x] = s[x] - 1.0 if s[x] > 1.0 else 0.0
        residual = -1e300
        for x in range(size):
            acc = 0.0
            for k in range(deg):
                acc += em[nbr[x * deg + k]]
            s[x] = (s[x] if s[x] < 1.0 else 1.0) + acc * inv
            odo[x] += em[x]
            r = s[x] - 1.0
            if r > residual:
                residual = r
        sweeps += 1
    sweeps_out[0] = sweeps
    return residual


def stabilize_run(double[::1] s, double[::1] odo, const cnp.int64_t[:, ::1] nbr,
                  double tol, long max_sweeps):
    cdef Py_ssize_t size = s.shape[0]
    cdef int deg = nbr.shape[1]
    cdef long sweeps = 0
    cdef double residual
    em = np.empty(size, dtype=np.float64)
    cdef double[::1] ev = em
    with nogil:
        residual = _run(&s[0], &odo[0], &ev[0], &nbr[0, 0], size, deg, tol,
                        max_sweeps, &sweeps)
    return int(sweeps), float(residual)


def stabilize_batch(double[:, ::1] S, double[:, ::1] ODO,
                    const cnp.int64_t[:, ::1] nbr, double tol, long max_sweeps):
    cdef Py_ssize_t batch = S.shape[0], size = S.shape[1], b
    cdef int deg = nbr.shape[1]
    sweeps = np.zeros(batch, dtype=np.int64)
    residual = np.zeros(batch, dtype=np.float64)
    cdef cnp.int64_t[::1] sw = sweeps
    cdef double[::1] rs = residual
    em = np.empty(size, dtype=np.float64)
    cdef double[::1] ev = em
    cdef long one
    with nogil:
        for b in range(batch):
            rs[b] = _run(&S[b, 0], &ODO[b, 0], &ev[0], &nbr[0, 0], size, deg,
                         tol, max_sweeps, &one)
            sw[b] = one
    return sweeps, residual


def lattice_cosine_sum(theta, long M, double power=4.0, double kappa=0.0):
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64).reshape(-1)
    cdef int d = th.shape[0]
    cdef long K = 2 * M + 1
    cdef long i, k
    cdef int ax, lvl
    cdef double[:, ::1] pre = np.zeros((d, K), dtype=np.float64)
    cdef double[:, ::1] pim = np.zeros((d, K), dtype=np.float64)
    cdef double[:, ::1] gg = np.zeros((d, K), dtype=np.float64)
    cdef double[::1] k2 = np.zeros(K, dtype=np.float64)
    for ax in range(d):
        for i in range(K):
            k = i - M
            pre[ax, i] = cos(2.0 * M_PI * th[ax] * k)
            pim[ax, i] = sin(2.0 * M_PI * th[ax] * k)
            gg[ax, i] = exp(-kappa * kappa * k * k)
    for i in range(K):
        k = i - M
        k2[i] = <double>(k * k)

    # prefix products for the outer d-1 axes, level 0 = empty product
    cdef double* pr = <double*> malloc((d + 1) * sizeof(double))
    cdef double* pi_ = <double*> malloc((d + 1) * sizeof(double))
    cdef double* pn = <double*> malloc((d + 1) * sizeof(double))
    cdef double* pg = <double*> malloc((d + 1) * sizeof(double))
    cdef long* idx = <long*> malloc((d + 1) * sizeof(long))
    cdef double total = 0.0, row, n2, w, re
    cdef bint four = power == 4.0
    cdef int last = d - 1
    try:
        for ax in range(d):
            idx[ax] = 0
        pr[0] = 1.0; pi_[0] = 0.0; pn[0] = 0.0; pg[0] = 1.0
        lvl = 0
        with nogil:
            while True:
                # refresh prefixes from level lvl up to the last outer axis
                for ax in range(lvl, last):
                    i = idx[ax]
                    pr[ax + 1] = pr[ax] * pre[ax, i] - pi_[ax] * pim[ax, i]
                    pi_[ax + 1] = pr[ax] * pim[ax, i] + pi_[ax] * pre[ax, i]
                    pn[ax + 1] = pn[ax] + k2[i]
                    pg[ax + 1] = pg[ax] * gg[ax, i]
                row = 0.0
                for i in range(K):
                    n2 = pn[last] + k2[i]
                    if n2 == 0.0:
                        continue
                    re = pr[last] * pre[last, i] - pi_[last] * pim[last, i]
                    if four:
                        w = 1.0 / (n2 * n2)
                    else:
                        w = pow(n2, -0.5 * power)
                    row += re * w * pg[last] * gg[last, i]
                total += row
                # advance the outer counter
                ax = last - 1
                while ax >= 0:
                    idx[ax] += 1
                    if idx[ax] < K:
                        break
                    idx[ax] = 0
                    ax -= 1
                if ax < 0:
                    break
                lvl = ax
    finally:
        free(pr); free(pi_); free(pn); free(pg); free(idx)
    return total
