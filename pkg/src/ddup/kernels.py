"""Hot numeric kernels, each with a numba-jitted and a pure-numpy variant.

Backend selection happens once at import time via the ``DDUP_BACKEND``
environment variable: ``numba`` (require numba), ``numpy`` (force the
fallback), or ``auto``/unset (numba when importable). The ``np_*``
implementations are always defined; ``nb_*`` exist only when numba is
available. ``ddup.bench.bench_kernels`` times both side by side.

Scan kernels (``ip_scores``, ``l2sq_scores``) compute every row's score
independently of the other rows, in both variants. This is load-bearing:
IVF search scans per-cluster row subsets while the brute-force oracle
scans the full matrix, and the two must agree bit-for-bit on shared rows.
Accumulation is float64 regardless of storage dtype.
"""

from __future__ import annotations

import os

import numpy as np


def _select_backend() -> str:
    choice = os.environ.get("DDUP_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"DDUP_BACKEND must be 'numba', 'numpy' or 'auto', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _select_backend()
HAVE_NUMBA = False

# ---------------------------------------------------------------------------
# pure-numpy variants
# ---------------------------------------------------------------------------


def np_ip_scores(mat: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Inner product of every row of `mat` with `q`, float64 accumulation.

    Uses an elementwise product reduced per row (not BLAS gemv): per-row
    results then depend only on the row itself, so scanning a subset of
    rows reproduces the full-scan values exactly.
    """
    return np.multiply(mat, q, dtype=np.float64).sum(axis=1)


def np_l2sq_scores(mat: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared L2 distance of every row of `mat` to `q`, float64 accumulation."""
    diff = np.subtract(mat, q, dtype=np.float64)
    return np.einsum("ij,ij->i", diff, diff)


def np_assign_nearest(mat: np.ndarray, cents: np.ndarray, chunk: int = 8192):
    """Nearest centroid per row: (indices int64, squared distances float64).

    Chunked ||x||^2 - 2 x.c + ||c||^2 expansion so the x@c^T gemm dominates.
    Ties resolve to the lowest centroid index.
    """
    n = mat.shape[0]
    c64 = np.ascontiguousarray(cents, dtype=np.float64)
    cnorm = np.einsum("ij,ij->i", c64, c64)
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        x = np.ascontiguousarray(mat[start : start + chunk], dtype=np.float64)
        xnorm = np.einsum("ij,ij->i", x, x)
        dist = xnorm[:, None] + cnorm[None, :] - 2.0 * (x @ c64.T)
        best = np.argmin(dist, axis=1)
        rows = np.arange(len(x))
        idx[start : start + len(x)] = best
        d2[start : start + len(x)] = np.maximum(dist[rows, best], 0.0)
    return idx, d2


def np_sep_conv_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 2-D valid correlation of a float64 image with a 1-D kernel."""
    t = len(kernel)
    h, w = img.shape
    tmp = np.zeros((h, w - t + 1), dtype=np.float64)
    for i in range(t):
        tmp += kernel[i] * img[:, i : i + w - t + 1]
    out = np.zeros((h - t + 1, w - t + 1), dtype=np.float64)
    for i in range(t):
        out += kernel[i] * tmp[i : i + h - t + 1, :]
    return out


def np_bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a float64 (H, W, C) image, pixel-center aligned."""
    in_h, in_w = img.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0, in_h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0, in_w - 1.0)
    y0 = np.minimum(ys.astype(np.int64), in_h - 1)
    x0 = np.minimum(xs.astype(np.int64), in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1.0 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1.0 - wx) + img[y1][:, x1] * wx
    return top * (1.0 - wy) + bot * wy


# ---------------------------------------------------------------------------
# numba variants
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import config as _numba_config
    from numba import njit, prange

    # workqueue is always available and keeps prange scheduling quiet
    _numba_config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True

    @njit(parallel=True, cache=True)
    def nb_ip_scores(mat, q):
        n, d = mat.shape
        out = np.empty(n, dtype=np.float64)
        for i in prange(n):
            s = 0.0
            for j in range(d):
                s += mat[i, j] * q[j]
            out[i] = s
        return out

    @njit(parallel=True, cache=True)
    def nb_l2sq_scores(mat, q):
        n, d = mat.shape
        out = np.empty(n, dtype=np.float64)
        for i in prange(n):
            s = 0.0
            for j in range(d):
                diff = mat[i, j] - q[j]
                s += diff * diff
            out[i] = s
        return out

    @njit(parallel=True, cache=True)
    def nb_assign_nearest(mat, cents):
        n, d = mat.shape
        k = cents.shape[0]
        idx = np.empty(n, dtype=np.int64)
        d2 = np.empty(n, dtype=np.float64)
        for i in prange(n):
            best = np.inf
            arg = 0
            for c in range(k):
                s = 0.0
                for j in range(d):
                    diff = mat[i, j] - cents[c, j]
                    s += diff * diff
                if s < best:
                    best = s
                    arg = c
            idx[i] = arg
            d2[i] = best
        return idx, d2

    @njit(parallel=True, cache=True)
    def nb_sep_conv_valid(img, kernel):
        t = kernel.shape[0]
        h, w = img.shape
        tmp = np.empty((h, w - t + 1), dtype=np.float64)
        for i in prange(h):
            for j in range(w - t + 1):
                s = 0.0
                for m in range(t):
                    s += kernel[m] * img[i, j + m]
                tmp[i, j] = s
        out = np.empty((h - t + 1, w - t + 1), dtype=np.float64)
        for i in prange(h - t + 1):
            for j in range(w - t + 1):
                s = 0.0
                for m in range(t):
                    s += kernel[m] * tmp[i + m, j]
                out[i, j] = s
        return out

    @njit(parallel=True, cache=True)
    def nb_bilinear_resize(img, out_h, out_w):
        in_h, in_w, ch = img.shape
        out = np.empty((out_h, out_w, ch), dtype=np.float64)
        sy = in_h / out_h
        sx = in_w / out_w
        for oy in prange(out_h):
            fy = (oy + 0.5) * sy - 0.5
            if fy < 0.0:
                fy = 0.0
            if fy > in_h - 1.0:
                fy = in_h - 1.0
            y0 = int(fy)
            if y0 > in_h - 1:
                y0 = in_h - 1
            y1 = min(y0 + 1, in_h - 1)
            wy = fy - y0
            for ox in range(out_w):
                fx = (ox + 0.5) * sx - 0.5
                if fx < 0.0:
                    fx = 0.0
                if fx > in_w - 1.0:
                    fx = in_w - 1.0
                x0 = int(fx)
                if x0 > in_w - 1:
                    x0 = in_w - 1
                x1 = min(x0 + 1, in_w - 1)
                wx = fx - x0
                for c in range(ch):
                    top = img[y0, x0, c] * (1.0 - wx) + img[y0, x1, c] * wx
                    bot = img[y1, x0, c] * (1.0 - wx) + img[y1, x1, c] * wx
                    out[oy, ox, c] = top * (1.0 - wy) + bot * wy
        return out

    ip_scores = nb_ip_scores
    l2sq_scores = nb_l2sq_scores
    assign_nearest = nb_assign_nearest
    sep_conv_valid = nb_sep_conv_valid
    bilinear_resize = nb_bilinear_resize
else:
    ip_scores = np_ip_scores
    l2sq_scores = np_l2sq_scores
    assign_nearest = np_assign_nearest
    sep_conv_valid = np_sep_conv_valid
    bilinear_resize = np_bilinear_resize
