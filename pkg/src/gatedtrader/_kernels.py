"""Numeric hot loops, compiled with numba when available.

Set ``GATEDTRADER_DISABLE_NUMBA=1`` to force the pure-numpy path. Both paths
are always importable (``*_numpy`` and ``*_numba`` names) so tests and the
benchmark can compare them directly; the unprefixed names dispatch on the flag.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None


def _flag_disabled() -> bool:
    return os.environ.get("GATEDTRADER_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}


USE_NUMBA = njit is not None and not _flag_disabled()


# ---------------------------------------------------------------------------
# rolling z-score scan
# ---------------------------------------------------------------------------


def rolling_zscores_numpy(returns, window, min_warmup, eps):
    """z of every sample against the ``window`` samples strictly before it.

    Returns NaN where z is undefined (fewer than ``min_warmup`` prior samples
    or sample std below ``eps``).
    """
    r = np.ascontiguousarray(returns, dtype=np.float64)
    n = r.shape[0]
    out = np.full(n, np.nan)
    lo_k = max(min_warmup, 2)
    # partially filled window at the start of the series
    for i in range(lo_k, min(n, window)):
        prev = r[:i]
        mu = prev.sum() / i
        sd = math.sqrt(((prev - mu) ** 2).sum() / (i - 1))
        if sd >= eps:
            out[i] = (r[i] - mu) / sd
    if window < lo_k:
        return out
    # full windows, chunked to bound the strided temporaries
    chunk = 65536
    for start in range(window, n, chunk):
        stop = min(n, start + chunk)
        win = np.lib.stride_tricks.sliding_window_view(r[start - window : stop - 1], window)
        mu = win.sum(axis=1) / window
        sd = np.sqrt(((win - mu[:, None]) ** 2).sum(axis=1) / (window - 1))
        ok = sd >= eps
        seg = out[start:stop]
        seg[ok] = (r[start:stop][ok] - mu[ok]) / sd[ok]
    return out


def _rolling_zscores_loop(r, window, min_warmup, eps):
    n = r.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = np.nan
        k = i if i < window else window
        if k < min_warmup or k < 2:
            continue
        s = 0.0
        for j in range(i - k, i):
            s += r[j]
        mu = s / k
        ss = 0.0
        for j in range(i - k, i):
            d = r[j] - mu
            ss += d * d
        sd = math.sqrt(ss / (k - 1))
        if sd >= eps:
            out[i] = (r[i] - mu) / sd
    return out


# ---------------------------------------------------------------------------
# binomial tails
# ---------------------------------------------------------------------------


def _log_pmf_numpy(n, p):
    """log P(X = i), i = 0..n, by recurrence outward from the mode.

    Anchoring at the mode keeps the accumulated rounding smallest where the
    probability mass is.
    """
    mode = min(n, max(0, int(math.floor((n + 1) * p))))
    lr = math.log(p) - math.log1p(-p)
    out = np.empty(n + 1)
    out[mode] = (math.lgamma(n + 1.0) - math.lgamma(mode + 1.0) - math.lgamma(n - mode + 1.0)
                 + mode * math.log(p) + (n - mode) * math.log1p(-p))
    if mode < n:
        i = np.arange(mode, n, dtype=np.float64)
        out[mode + 1:] = out[mode] + np.cumsum(np.log((n - i) / (i + 1.0)) + lr)
    if mode > 0:
        i = np.arange(mode, 0, -1, dtype=np.float64)
        out[mode - 1::-1] = out[mode] - np.cumsum(np.log((n - i + 1.0) / i) + lr)
    return out


def _tail_trivial(k, n, p, upper):
    """The edge cases both implementations share, or None."""
    if upper:
        if k <= 0:
            return 1.0
        if k > n:
            return 0.0
    else:
        if k < 0:
            return 0.0
        if k >= n:
            return 1.0
    if p <= 0.0:
        return 0.0 if upper else 1.0
    if p >= 1.0:
        return 1.0 if upper else 0.0
    return None


def binom_tail_numpy(k, n, p, upper):
    """P(X >= k) when ``upper`` else P(X <= k) for X ~ Binomial(n, p).

    Every pmf term is summed exactly once and the tail is divided by the total
    mass, so rounding drift in the log-pmf cancels and the two tails sum to 1.
    """
    v = _tail_trivial(k, n, p, upper)
    if v is not None:
        return v
    lp = _log_pmf_numpy(n, p)
    w = np.exp(lp - lp.max())
    total = math.fsum(w)
    part = math.fsum(w[k:]) if upper else math.fsum(w[: k + 1])
    return min(1.0, part / total)


def _binom_tail_loop(k, n, p, upper):
    if upper:
        if k <= 0:
            return 1.0
        if k > n:
            return 0.0
    else:
        if k < 0:
            return 0.0
        if k >= n:
            return 1.0
    if p <= 0.0:
        return 0.0 if upper else 1.0
    if p >= 1.0:
        return 1.0 if upper else 0.0
    lgn = math.lgamma(n + 1.0)
    lp = math.log(p)
    lq = math.log1p(-p)
    mode = min(n, max(0, int(math.floor((n + 1) * p))))
    m = lgn - math.lgamma(mode + 1.0) - math.lgamma(n - mode + 1.0) + mode * lp + (n - mode) * lq
    # two compensated sums: the tail and its complement
    s_in = 0.0
    c_in = 0.0
    s_out = 0.0
    c_out = 0.0
    for i in range(n + 1):
        t = math.exp(lgn - math.lgamma(i + 1.0) - math.lgamma(n - i + 1.0) + i * lp + (n - i) * lq - m)
        inside = i >= k if upper else i <= k
        if inside:
            y = t - c_in
            z = s_in + y
            c_in = (z - s_in) - y
            s_in = z
        else:
            y = t - c_out
            z = s_out + y
            c_out = (z - s_out) - y
            s_out = z
    v = s_in / (s_in + s_out)
    return v if v < 1.0 else 1.0


# ---------------------------------------------------------------------------
# Pearson correlation
# ---------------------------------------------------------------------------


def pearson_numpy(x, y):
    """Pearson correlation; NaN when either series is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    return float(dx @ dy) / math.sqrt(sxx * syy)


def _pearson_loop(x, y):
    n = x.shape[0]
    mx = 0.0
    my = 0.0
    for i in range(n):
        mx += x[i]
        my += y[i]
    mx /= n
    my /= n
    sxy = 0.0
    sxx = 0.0
    syy = 0.0
    for i in range(n):
        a = x[i] - mx
        b = y[i] - my
        sxy += a * b
        sxx += a * a
        syy += b * b
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    return sxy / math.sqrt(sxx * syy)


if njit is not None:
    _rolling_zscores_jit = njit(cache=True)(_rolling_zscores_loop)
    _binom_tail_jit = njit(cache=True)(_binom_tail_loop)
    _pearson_jit = njit(cache=True)(_pearson_loop)
else:  # pragma: no cover
    _rolling_zscores_jit = _rolling_zscores_loop
    _binom_tail_jit = _binom_tail_loop
    _pearson_jit = _pearson_loop


def rolling_zscores_numba(returns, window, min_warmup, eps):
    r = np.ascontiguousarray(returns, dtype=np.float64)
    return _rolling_zscores_jit(r, int(window), int(min_warmup), float(eps))


def binom_tail_numba(k, n, p, upper):
    return float(_binom_tail_jit(int(k), int(n), float(p), bool(upper)))


def pearson_numba(x, y):
    return float(
        _pearson_jit(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64),
        )
    )


def rolling_zscores(returns, window, min_warmup, eps):
    if USE_NUMBA:
        return rolling_zscores_numba(returns, window, min_warmup, eps)
    return rolling_zscores_numpy(returns, window, min_warmup, eps)


def binom_tail(k, n, p, upper=True):
    if USE_NUMBA:
        return binom_tail_numba(k, n, p, upper)
    return binom_tail_numpy(k, n, p, upper)


def pearson(x, y):
    if USE_NUMBA:
        return pearson_numba(x, y)
    return pearson_numpy(x, y)
