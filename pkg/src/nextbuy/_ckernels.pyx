# Compiled twins of the functions in _pykernels.py. Same signatures, same
# results; the fallback module is the readable reference.

import numpy as np
cimport numpy as cnp
from libc.math cimport NAN, floor, pow

cnp.import_array()

N_STATS = 7


cdef inline void _insertion_sort(double* buf, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double key
    for i in range(1, n):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] > key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key


cdef inline double _quantile(double* ordered, Py_ssize_t w, double q) noexcept nogil:
    cdef double pos = q * (w - 1)
    cdef Py_ssize_t lo = <Py_ssize_t>floor(pos)
    cdef Py_ssize_t hi = lo + 1
    if hi > w - 1:
        hi = w - 1
    return ordered[lo] + (pos - lo) * (ordered[hi] - ordered[lo])


def rolling_stats(values, Py_ssize_t window):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], m = v.shape[1]
    out_arr = np.full((n, m, N_STATS), np.nan)
    if window < 1 or m < window:
        return out_arr
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] buf = np.empty(window)
    cdef Py_ssize_t s, e, i
    cdef double total, mean, d, d2, m2, m3, m4, lo, hi
    with nogil:
        for s in range(n):
            for e in range(window - 1, m):
                total = 0.0
                lo = v[s, e - window + 1]
                hi = lo
                for i in range(e - window + 1, e + 1):
                    total = total + v[s, i]
                    buf[i - e + window - 1] = v[s, i]
                    if v[s, i] < lo:
                        lo = v[s, i]
                    if v[s, i] > hi:
                        hi = v[s, i]
                mean = total / window
                m2 = 0.0
                m3 = 0.0
                m4 = 0.0
                for i in range(e - window + 1, e + 1):
                    d = v[s, i] - mean
                    d2 = d * d
                    m2 = m2 + d2
                    m3 = m3 + d2 * d
                    m4 = m4 + d2 * d2
                m2 = m2 / window
                m3 = m3 / window
                m4 = m4 / window
                _insertion_sort(&buf[0], window)
                out[s, e, 0] = mean
                out[s, e, 1] = _quantile(&buf[0], window, 0.5)
                out[s, e, 2] = _quantile(&buf[0], window, 0.25)
                out[s, e, 3] = _quantile(&buf[0], window, 0.75)
                if hi == lo:
                    out[s, e, 4] = 0.0
                    out[s, e, 5] = 0.0
                    out[s, e, 6] = 0.0
                else:
                    out[s, e, 4] = m2
                    out[s, e, 5] = m3 / pow(m2, 1.5)
                    out[s, e, 6] = m4 / (m2 * m2) - 3.0
    return out_arr


def im2col(x, taps):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] tv = np.ascontiguousarray(taps, dtype=np.int64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[2]
    cdef Py_ssize_t s_out = tv.shape[0], k = tv.shape[1]
    cols_arr = np.zeros((n, s_out, k * c))
    cdef double[:, :, ::1] cols = cols_arr
    cdef Py_ssize_t r, s, j, ch, src
    with nogil:
        for r in range(n):
            for s in range(s_out):
                for j in range(k):
                    src = tv[s, j]
                    if src < 0:
                        continue
                    for ch in range(c):
                        cols[r, s, j * c + ch] = xv[r, src, ch]
    return cols_arr


def col2im(dcols, taps, Py_ssize_t n_in):
    cdef double[:, :, ::1] dc = np.ascontiguousarray(dcols, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] tv = np.ascontiguousarray(taps, dtype=np.int64)
    cdef Py_ssize_t n = dc.shape[0]
    cdef Py_ssize_t s_out = tv.shape[0], k = tv.shape[1]
    cdef Py_ssize_t c = dc.shape[2] // k
    dx_arr = np.zeros((n, n_in, c))
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t r, s, j, ch, src
    with nogil:
        for r in range(n):
            # tap block outermost, matching the accumulation order of the fallback
            for j in range(k):
                for s in range(s_out):
                    src = tv[s, j]
                    if src < 0:
                        continue
                    for ch in range(c):
                        dx[r, src, ch] += dc[r, s, j * c + ch]
    return dx_arr


def embedding_backward(Py_ssize_t n_rows, codes, dout):
    cdef cnp.int64_t[::1] cv = np.ascontiguousarray(codes, dtype=np.int64)
    cdef double[:, ::1] dv = np.ascontiguousarray(dout, dtype=np.float64)
    cdef Py_ssize_t n = dv.shape[0], dim = dv.shape[1]
    grad_arr = np.zeros((n_rows, dim))
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t i, j, row
    for i in range(n):
        row = cv[i]
        if row < 0 or row >= n_rows:
            raise IndexError(f"embedding code {row} out of range [0, {n_rows})")
    with nogil:
        for i in range(n):
            row = cv[i]
            for j in range(dim):
                grad[row, j] += dv[i, j]
    return grad_arr


def grouped_best_thresholds(probs, actual, offsets, double sentinel):
    cdef double[::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef cnp.int64_t[::1] a = np.ascontiguousarray(actual, dtype=np.int64)
    cdef cnp.int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t n_groups = off.shape[0] - 1
    thr_arr = np.empty(n_groups)
    f1_arr = np.empty(n_groups)
    k_arr = np.empty(n_groups, dtype=np.int64)
    v_arr = np.empty(n_groups, dtype=np.int64)
    b_arr = np.empty(n_groups, dtype=np.int64)
    cdef double[::1] thr = thr_arr
    cdef double[::1] f1 = f1_arr
    cdef cnp.int64_t[::1] k_out = k_arr
    cdef cnp.int64_t[::1] v_out = v_arr
    cdef cnp.int64_t[::1] b_out = b_arr
    cdef Py_ssize_t g, i, lo, hi, b, cum_v, k5, v5, best_k, best_v
    cdef double best_thr, best_f1, score
    with nogil:
        for g in range(n_groups):
            lo = off[g]
            hi = off[g + 1]
            b = 0
            for i in range(lo, hi):
                b += a[i]
            best_thr = sentinel
            best_f1 = 0.0
            best_k = 0
            best_v = 0
            if b > 0 and hi > lo:
                cum_v = 0
                k5 = 0
                v5 = 0
                for i in range(lo, hi):
                    cum_v += a[i]
                    if p[i] >= 0.5:
                        k5 += 1
                        v5 += a[i]
                    if i == hi - 1 or p[i + 1] != p[i]:
                        score = 2.0 * cum_v / (i - lo + 1 + b)
                        if score > best_f1:
                            best_f1 = score
                            best_thr = p[i]
                            best_k = i - lo + 1
                            best_v = cum_v
                score = 2.0 * v5 / (k5 + b)
                if score > best_f1 or (score == best_f1 and 0.5 > best_thr):
                    best_f1 = score
                    best_thr = 0.5
                    best_k = k5
                    best_v = v5
            thr[g] = best_thr
            f1[g] = best_f1
            k_out[g] = best_k
            v_out[g] = best_v
            b_out[g] = b
    return thr_arr, f1_arr, k_arr, v_arr, b_arr
