"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
The two must agree to the last bit on the integer-valued outputs and to
round-off on the floating ones; ``tests/test_kernels.py`` holds them to it.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

N_STATS = 7  # mean, median, q25, q75, variance, skewness, kurtosis


def rolling_stats(values, window):
    """Trailing-window statistics for every end position of every row.

    ``values`` is (n_series, n_steps). The result is (n_series, n_steps, 7);
    entry ``[s, e]`` summarises ``values[s, e - window + 1 : e + 1]`` and is
    NaN when fewer than ``window`` values exist.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    n, m = values.shape
    out = np.full((n, m, N_STATS), np.nan)
    if window < 1 or m < window:
        return out
    win = sliding_window_view(values, window, axis=1)  # (n, m - w + 1, w)
    mean = win.sum(axis=2) / window
    dev = win - mean[..., None]
    m2 = (dev * dev).sum(axis=2) / window
    m3 = (dev * dev * dev).sum(axis=2) / window
    m4 = (dev * dev * dev * dev).sum(axis=2) / window
    ordered = np.sort(win, axis=2)
    flat = win.max(axis=2) == win.min(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        skew = np.where(flat, 0.0, m3 / m2**1.5)
        kurt = np.where(flat, 0.0, m4 / (m2 * m2) - 3.0)
    res = out[:, window - 1 :, :]
    res[..., 0] = mean
    res[..., 1] = _sorted_quantile(ordered, 0.5)
    res[..., 2] = _sorted_quantile(ordered, 0.25)
    res[..., 3] = _sorted_quantile(ordered, 0.75)
    res[..., 4] = np.where(flat, 0.0, m2)
    res[..., 5] = skew
    res[..., 6] = kurt
    return out


def _sorted_quantile(ordered, q):
    w = ordered.shape[-1]
    pos = q * (w - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, w - 1)
    frac = pos - lo
    return ordered[..., lo] + frac * (ordered[..., hi] - ordered[..., lo])


def im2col(x, taps):
    """Gather convolution patches.

    ``x`` is (n, S_in, C); ``taps`` is (S_out, K) of indices into the S_in
    axis, -1 meaning a zero (padding) input. Returns (n, S_out, K * C) with
    tap ``j`` in column block ``j``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.int64)
    n, _, c = x.shape
    s_out, k = taps.shape
    cols = np.zeros((n, s_out, k * c))
    for j in range(k):
        valid = taps[:, j] >= 0
        cols[:, valid, j * c : (j + 1) * c] = x[:, taps[valid, j], :]
    return cols


def col2im(dcols, taps, n_in):
    """Adjoint of :func:`im2col`; each tap column must index distinct inputs."""
    dcols = np.ascontiguousarray(dcols, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.int64)
    n = dcols.shape[0]
    k = taps.shape[1]
    c = dcols.shape[2] // k
    dx = np.zeros((n, n_in, c))
    for j in range(k):
        valid = taps[:, j] >= 0
        dx[:, taps[valid, j], :] += dcols[:, valid, j * c : (j + 1) * c]
    return dx


def embedding_backward(n_rows, codes, dout):
    """Scatter-add ``dout`` rows into an (n_rows, dim) gradient table."""
    dout = np.ascontiguousarray(dout, dtype=np.float64)
    codes = np.asarray(codes, dtype=np.int64)
    grad = np.zeros((n_rows, dout.shape[1]))
    np.add.at(grad, codes, dout)
    return grad


def grouped_best_thresholds(probs, actual, offsets, sentinel):
    """Best F1 cutoff per group.

    Inputs are pre-sorted so that each group ``g`` occupies
    ``probs[offsets[g]:offsets[g + 1]]`` in descending probability order.
    Returns (thresholds, f1, k, v, b) arrays of length n_groups.
    """
    probs = np.asarray(probs, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    n_groups = len(offsets) - 1
    thr = np.empty(n_groups)
    f1 = np.empty(n_groups)
    k_out = np.empty(n_groups, dtype=np.int64)
    v_out = np.empty(n_groups, dtype=np.int64)
    b_out = np.empty(n_groups, dtype=np.int64)
    for g in range(n_groups):
        p = probs[offsets[g] : offsets[g + 1]]
        a = actual[offsets[g] : offsets[g + 1]]
        b = int(a.sum())
        best_thr, best_f1, best_k, best_v = sentinel, 0.0, 0, 0
        if b > 0 and len(p):
            cum_v = np.cumsum(a)
            # last index of each run of equal probabilities
            ends = np.flatnonzero(np.append(p[1:] != p[:-1], True))
            ks = ends + 1
            vs = cum_v[ends]
            scores = 2.0 * vs / (ks + b)
            i = int(np.argmax(scores))  # first max = largest threshold
            if scores[i] > best_f1:
                best_thr, best_f1 = float(p[ends[i]]), float(scores[i])
                best_k, best_v = int(ks[i]), int(vs[i])
            k5 = int(np.count_nonzero(p >= 0.5))
            v5 = int(a[:k5].sum())
            f5 = 2.0 * v5 / (k5 + b)
            if f5 > best_f1 or (f5 == best_f1 and 0.5 > best_thr):
                best_thr, best_f1, best_k, best_v = 0.5, f5, k5, v5
        thr[g], f1[g], k_out[g], v_out[g], b_out[g] = best_thr, best_f1, best_k, best_v, b
    return thr, f1, k_out, v_out, b_out
