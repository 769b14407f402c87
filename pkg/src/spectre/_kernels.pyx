# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for nearest-centroid search, centroid accumulation
and pairwise rotation.

Every loop accumulates in the same order as the numpy fallback in
``_kernels_py`` so the two backends agree bit for bit.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def nearest_centroid(const double[:, ::1] x, const double[:, ::1] centroids):
    """Return (labels, squared distances); ties go to the lowest index."""
    cdef Py_ssize_t m = x.shape[0], dim = x.shape[1], k = centroids.shape[0]
    cdef Py_ssize_t i, j, c
    cdef double acc, diff, best
    cdef Py_ssize_t best_k
    labels_arr = np.empty(m, dtype=np.int64)
    dist_arr = np.empty(m, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] dist = dist_arr
    with nogil:
        for i in range(m):
            best = 0.0
            best_k = -1
            for c in range(k):
                acc = 0.0
                for j in range(dim):
                    diff = x[i, j] - centroids[c, j]
                    acc = acc + diff * diff
                if best_k < 0 or acc < best:
                    best = acc
                    best_k = c
            labels[i] = best_k
            dist[i] = best
    return labels_arr, dist_arr


def accumulate_centroids(const double[:, ::1] x, const cnp.int64_t[::1] labels, Py_ssize_t k):
    """Per-cluster coordinate sums and member counts, summed in point order."""
    cdef Py_ssize_t m = x.shape[0], dim = x.shape[1]
    cdef Py_ssize_t i, j, lab
    sums_arr = np.zeros((k, dim), dtype=np.float64)
    counts_arr = np.zeros(k, dtype=np.int64)
    cdef double[:, ::1] sums = sums_arr
    cdef cnp.int64_t[::1] counts = counts_arr
    with nogil:
        for i in range(m):
            lab = labels[i]
            counts[lab] += 1
            for j in range(dim):
                sums[lab, j] = sums[lab, j] + x[i, j]
    return sums_arr, counts_arr


def rotate_pairs(const double[:, ::1] x, const double[:, ::1] cos, const double[:, ::1] sin):
    """Rotate adjacent pairs (2j, 2j+1) of each row by the given cos/sin."""
    cdef Py_ssize_t m = x.shape[0], npairs = cos.shape[1]
    cdef Py_ssize_t i, j
    cdef double a, b, co, si
    out_arr = np.empty((m, 2 * npairs), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(m):
            for j in range(npairs):
                a = x[i, 2 * j]
                b = x[i, 2 * j + 1]
                co = cos[i, j]
                si = sin[i, j]
                out[i, 2 * j] = a * co - b * si
                out[i, 2 * j + 1] = a * si + b * co
    return out_arr
