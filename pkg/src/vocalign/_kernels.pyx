# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for co-occurrence counting and GloVe AdaGrad epochs."""
from libc.math cimport log, pow, sqrt, isfinite, fmin, fmax
from libc.stdint cimport int64_t


def cooc_dense(const int64_t[::1] ids, const int64_t[::1] seg, const int64_t[::1] steps,
               int64_t[:, ::1] out):
    """Add steps[d] to out[a, b] and out[b, a] for each pair d <= len(steps) - 1 apart."""
    cdef Py_ssize_t n = ids.shape[0]
    cdef Py_ssize_t window = steps.shape[0] - 1
    cdef Py_ssize_t p, d
    cdef int64_t a, b
    with nogil:
        for p in range(n):
            a = ids[p]
            for d in range(1, window + 1):
                if p + d >= n or seg[p + d] != seg[p]:
                    break
                b = ids[p + d]
                out[a, b] += steps[d]
                out[b, a] += steps[d]


def glove_epoch(double[:, ::1] W, double[:, ::1] C, double[::1] bw, double[::1] bc,
                double[:, ::1] gW, double[:, ::1] gC, double[::1] gbw, double[::1] gbc,
                const int64_t[::1] rows, const int64_t[::1] cols, const double[::1] vals,
                const int64_t[::1] order, double lr, double x_max, double alpha,
                double grad_clip):
    """One AdaGrad pass over ``order``; returns (0.5-weighted cost, failing index or -1)."""
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t dim = W.shape[1]
    cdef Py_ssize_t k, q
    cdef int64_t e, i, j
    cdef double x, diff, fdiff, t1, t2, cost = 0.0
    cdef Py_ssize_t bad = -1
    with nogil:
        for k in range(n):
            e = order[k]
            i = rows[e]
            j = cols[e]
            x = vals[e]
            diff = bw[i] + bc[j] - log(x)
            for q in range(dim):
                diff = diff + W[i, q] * C[j, q]
            if x > x_max:
                fdiff = diff
            else:
                fdiff = pow(x / x_max, alpha) * diff
            if not isfinite(diff) or not isfinite(fdiff):
                bad = k
                break
            cost += 0.5 * fdiff * diff
            for q in range(dim):
                t1 = fmin(fmax(fdiff * C[j, q], -grad_clip), grad_clip) * lr
                t2 = fmin(fmax(fdiff * W[i, q], -grad_clip), grad_clip) * lr
                W[i, q] -= t1 / sqrt(gW[i, q])
                C[j, q] -= t2 / sqrt(gC[j, q])
                gW[i, q] += t1 * t1
                gC[j, q] += t2 * t2
            fdiff = fdiff * lr
            bw[i] -= fdiff / sqrt(gbw[i])
            bc[j] -= fdiff / sqrt(gbc[j])
            gbw[i] += fdiff * fdiff
            gbc[j] += fdiff * fdiff
    return cost, bad
