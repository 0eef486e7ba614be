"""Hot numeric kernels, each in a numba and a pure-numpy variant.

Public entry points dispatch on :mod:`trustlens.backend`.  Both variants
implement the same documented algorithms:

* modified Bessel I0: power series for x <= 15, asymptotic expansion
  e^x/sqrt(2*pi*x) * (1 + 1/(8x) + 9/(128x^2) + 225/(3072x^3)) beyond,
  evaluated in the log domain for log_i0;
* I1/I0 ratio via the Gauss continued fraction (modified Lentz);
* erf: confluent power series for |x| <= 3, erfc continued fraction beyond;
* centered von-Mises interval mass via composite Simpson integration of
  exp(kappa*(cos t - 1)) with the exponentially-scaled normalizer;
* streaming add/max used by the saliency fusion reducers.
"""

from __future__ import annotations

import math

import numpy as np

from . import backend

_SERIES_CUTOFF = 15.0
_ERF_CUTOFF = 3.0
_SQRT_PI = math.sqrt(math.pi)
_PANELS = 512  # composite-Simpson panels per interval-mass evaluation


# ---------------------------------------------------------------------------
# scalar reference algorithms (shared by both variants through duplication;
# the numba versions below are compiled copies of the same recurrences)
# ---------------------------------------------------------------------------

def _i0_series_scalar(x: float) -> float:
    q = 0.25 * x * x
    term = 1.0
    total = 1.0
    for k in range(1, 80):
        term *= q / (k * k)
        total += term
        if term < total * 1e-17:
            break
    return total


def _log_i0_scalar(x: float) -> float:
    if x <= _SERIES_CUTOFF:
        return math.log(_i0_series_scalar(x))
    corr = 1.0 / (8.0 * x) + 9.0 / (128.0 * x * x) + 225.0 / (3072.0 * x**3)
    return x - 0.5 * math.log(2.0 * math.pi * x) + math.log1p(corr)


def _i1_i0_ratio_scalar(x: float) -> float:
    if x == 0.0:
        return 0.0
    # modified Lentz on 1/(2/x + 1/(4/x + 1/(6/x + ...)))
    tiny = 1e-300
    f = tiny
    c = f
    d = 0.0
    for k in range(1, 200):
        b = 2.0 * k / x
        d = b + d
        if d == 0.0:
            d = tiny
        c = b + 1.0 / c
        if c == 0.0:
            c = tiny
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return f


def _erf_series_scalar(x: float) -> float:
    # erf(x) = 2x/sqrt(pi) * exp(-x^2) * sum (2x^2)^k / (1*3*...*(2k+1))
    q = 2.0 * x * x
    term = 1.0
    total = 1.0
    for k in range(1, 200):
        term *= q / (2.0 * k + 1.0)
        total += term
        if term < total * 1e-17:
            break
    return 2.0 * x / _SQRT_PI * math.exp(-x * x) * total


def _erfc_cf_scalar(x: float) -> float:
    # sqrt(pi)*exp(x^2)*erfc(x) = 1/(x+ (1/2)/(x+ 1/(x+ (3/2)/(x+ ...))))
    tiny = 1e-300
    f = tiny
    c = f
    d = 0.0
    for k in range(1, 120):
        a = 1.0 if k == 1 else (k - 1) / 2.0
        d = x + a * d
        if d == 0.0:
            d = tiny
        c = x + a / c
        if c == 0.0:
            c = tiny
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return f * math.exp(-x * x) / _SQRT_PI


def _erf_scalar(x: float) -> float:
    ax = abs(x)
    if ax <= _ERF_CUTOFF:
        v = _erf_series_scalar(ax)
    else:
        v = 1.0 - _erfc_cf_scalar(ax)
    return v if x >= 0.0 else -v


def _vm_mass_scalar(kappa: float, half: float, i0e: float) -> float:
    if half <= 0.0:
        return 0.0
    # sharp densities: integrate only where exp(kappa*(cos t - 1)) is alive
    upper = half
    if kappa > 50.0:
        upper = min(half, 12.0 / math.sqrt(kappa))
    n = _PANELS
    h = upper / n
    total = 1.0 + math.exp(kappa * (math.cos(upper) - 1.0))
    for i in range(1, n):
        w = 4.0 if i % 2 == 1 else 2.0
        total += w * math.exp(kappa * (math.cos(i * h) - 1.0))
    integral = total * h / 3.0
    mass = integral / (math.pi * i0e)
    return min(max(mass, 0.0), 1.0)


# ---------------------------------------------------------------------------
# numpy variants (vectorized; fixed-iteration recurrences with masks)
# ---------------------------------------------------------------------------

def _i0_numpy(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    small = x <= _SERIES_CUTOFF
    if small.any():
        xs = x[small]
        q = 0.25 * xs * xs
        term = np.ones_like(xs)
        total = np.ones_like(xs)
        for k in range(1, 80):
            term = term * q / (k * k)
            total += term
            if float(term.max(initial=0.0)) < 1e-17:
                break
        out[small] = total
    if (~small).any():
        out[~small] = np.exp(_log_i0_numpy(x[~small]))
    return out


def _log_i0_numpy(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    small = x <= _SERIES_CUTOFF
    if small.any():
        out[small] = np.log(_i0_numpy(x[small]))
    big = ~small
    if big.any():
        xb = x[big]
        corr = 1.0 / (8.0 * xb) + 9.0 / (128.0 * xb * xb) + 225.0 / (3072.0 * xb**3)
        out[big] = xb - 0.5 * np.log(2.0 * np.pi * xb) + np.log1p(corr)
    return out


def _i1_i0_ratio_numpy(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(x > 0.0, x, 1.0)
    tiny = 1e-300
    f = np.full_like(safe, tiny)
    c = f.copy()
    d = np.zeros_like(safe)
    for k in range(1, 200):
        b = 2.0 * k / safe
        d = b + d
        np.copyto(d, tiny, where=d == 0.0)
        c = b + 1.0 / c
        np.copyto(c, tiny, where=c == 0.0)
        d = 1.0 / d
        delta = c * d
        f = f * delta
        if float(np.abs(delta - 1.0).max(initial=0.0)) < 1e-16:
            break
    return np.where(x > 0.0, f, 0.0)


def _erf_numpy(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    out = np.empty_like(ax)
    small = ax <= _ERF_CUTOFF
    if small.any():
        xs = ax[small]
        q = 2.0 * xs * xs
        term = np.ones_like(xs)
        total = np.ones_like(xs)
        for k in range(1, 200):
            term = term * q / (2.0 * k + 1.0)
            total += term
            if float(term.max(initial=0.0)) < 1e-17:
                break
        out[small] = 2.0 * xs / _SQRT_PI * np.exp(-xs * xs) * total
    big = ~small
    if big.any():
        xb = ax[big]
        tiny = 1e-300
        f = np.full_like(xb, tiny)
        c = f.copy()
        d = np.zeros_like(xb)
        for k in range(1, 120):
            a = 1.0 if k == 1 else (k - 1) / 2.0
            d = xb + a * d
            np.copyto(d, tiny, where=d == 0.0)
            c = xb + a / c
            np.copyto(c, tiny, where=c == 0.0)
            d = 1.0 / d
            delta = c * d
            f = f * delta
            if float(np.abs(delta - 1.0).max(initial=0.0)) < 1e-16:
                break
        out[big] = 1.0 - f * np.exp(-xb * xb) / _SQRT_PI
    return np.where(x >= 0.0, out, -out)


def _vm_mass_numpy(kappa: np.ndarray, half: np.ndarray, i0e: np.ndarray) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=np.float64)
    half = np.asarray(half, dtype=np.float64)
    i0e = np.asarray(i0e, dtype=np.float64)
    n = _PANELS
    upper = half.copy()
    sharp = kappa > 50.0
    if sharp.any():
        upper[sharp] = np.minimum(half[sharp], 12.0 / np.sqrt(kappa[sharp]))
    weights = np.full(n + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = 1.0
    weights[n] = 1.0
    out = np.empty_like(upper)
    chunk = 2048
    nodes_unit = np.arange(n + 1, dtype=np.float64) / n
    for start in range(0, upper.size, chunk):
        sl = slice(start, min(start + chunk, upper.size))
        t = upper[sl, None] * nodes_unit[None, :]
        integrand = np.exp(kappa[sl, None] * (np.cos(t) - 1.0))
        integral = (integrand @ weights) * (upper[sl] / n) / 3.0
        out[sl] = integral / (np.pi * i0e[sl])
    out[half <= 0.0] = 0.0
    return np.clip(out, 0.0, 1.0)


def _accumulate_numpy(acc: np.ndarray, sl: np.ndarray) -> None:
    np.add(acc, sl, out=acc)


def _maximum_numpy(acc: np.ndarray, sl: np.ndarray) -> None:
    np.maximum(acc, sl, out=acc)


# ---------------------------------------------------------------------------
# numba variants
# ---------------------------------------------------------------------------

if backend.HAVE_NUMBA:
    from numba import njit

    _i0_series_nb = njit(cache=True)(_i0_series_scalar)

    @njit(cache=True)
    def _log_i0_nb_scalar(x):
        if x <= 15.0:
            return math.log(_i0_series_nb(x))
        corr = 1.0 / (8.0 * x) + 9.0 / (128.0 * x * x) + 225.0 / (3072.0 * x**3)
        return x - 0.5 * math.log(2.0 * math.pi * x) + math.log1p(corr)

    _ratio_nb_scalar = njit(cache=True)(_i1_i0_ratio_scalar)
    _erf_series_nb = njit(cache=True)(_erf_series_scalar)
    _erfc_cf_nb = njit(cache=True)(_erfc_cf_scalar)

    @njit(cache=True)
    def _i0_numba(x):
        out = np.empty_like(x)
        for i in range(x.size):
            v = x.flat[i]
            if v <= 15.0:
                out.flat[i] = _i0_series_nb(v)
            else:
                out.flat[i] = math.exp(_log_i0_nb_scalar(v))
        return out

    @njit(cache=True)
    def _log_i0_numba(x):
        out = np.empty_like(x)
        for i in range(x.size):
            out.flat[i] = _log_i0_nb_scalar(x.flat[i])
        return out

    @njit(cache=True)
    def _ratio_numba(x):
        out = np.empty_like(x)
        for i in range(x.size):
            out.flat[i] = _ratio_nb_scalar(x.flat[i])
        return out

    @njit(cache=True)
    def _erf_numba(x):
        out = np.empty_like(x)
        for i in range(x.size):
            v = x.flat[i]
            av = abs(v)
            if av <= 3.0:
                r = _erf_series_nb(av)
            else:
                r = 1.0 - _erfc_cf_nb(av)
            out.flat[i] = r if v >= 0.0 else -r
        return out

    @njit(cache=True)
    def _vm_mass_numba(kappa, half, i0e):
        n = _PANELS
        out = np.empty_like(half)
        for i in range(half.size):
            k = kappa.flat[i]
            hw = half.flat[i]
            if hw <= 0.0:
                out.flat[i] = 0.0
                continue
            upper = hw
            if k > 50.0:
                upper = min(hw, 12.0 / math.sqrt(k))
            h = upper / n
            total = 1.0 + math.exp(k * (math.cos(upper) - 1.0))
            for j in range(1, n):
                w = 4.0 if j % 2 == 1 else 2.0
                total += w * math.exp(k * (math.cos(j * h) - 1.0))
            mass = total * h / 3.0 / (math.pi * i0e.flat[i])
            out.flat[i] = min(max(mass, 0.0), 1.0)
        return out

    @njit(cache=True)
    def _accumulate_numba(acc, sl):
        a = acc.ravel()
        s = sl.ravel()
        for i in range(a.size):
            a[i] += s[i]

    @njit(cache=True)
    def _maximum_numba(acc, sl):
        a = acc.ravel()
        s = sl.ravel()
        for i in range(a.size):
            if s[i] > a[i]:
                a[i] = s[i]


# ---------------------------------------------------------------------------
# dispatching wrappers
# ---------------------------------------------------------------------------

def _dispatch_elementwise(x, numpy_fn, numba_fn):
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if backend.active_backend() == "numba":
        out = numba_fn(arr)
    else:
        out = numpy_fn(arr)
    return float(out[0]) if np.isscalar(x) or np.ndim(x) == 0 else out


def i0(x):
    """Modified Bessel function of the first kind, order zero."""
    return _dispatch_elementwise(
        x, _i0_numpy, _i0_numba if backend.HAVE_NUMBA else None
    )


def log_i0(x):
    """log I0(x), overflow-safe for large x."""
    return _dispatch_elementwise(
        x, _log_i0_numpy, _log_i0_numba if backend.HAVE_NUMBA else None
    )


def i1_i0_ratio(x):
    """I1(x)/I0(x) via continued fraction."""
    return _dispatch_elementwise(
        x, _i1_i0_ratio_numpy, _ratio_numba if backend.HAVE_NUMBA else None
    )


def erf(x):
    """Error function."""
    return _dispatch_elementwise(
        x, _erf_numpy, _erf_numba if backend.HAVE_NUMBA else None
    )


def vm_interval_mass(kappa, half_width):
    """Probability mass of a centered von-Mises interval [-h, h].

    kappa and half_width broadcast elementwise; half widths outside [0, pi]
    are clipped to that range.
    """
    kappa_a, half_a = np.broadcast_arrays(
        np.atleast_1d(np.asarray(kappa, dtype=np.float64)),
        np.atleast_1d(np.asarray(half_width, dtype=np.float64)),
    )
    half_a = np.clip(half_a, 0.0, np.pi)
    kappa_a = np.ascontiguousarray(kappa_a)
    half_a = np.ascontiguousarray(half_a)
    if backend.active_backend() == "numba":
        i0e = np.exp(_log_i0_numba(kappa_a) - kappa_a)
        out = _vm_mass_numba(kappa_a, half_a, i0e)
    else:
        i0e = np.exp(_log_i0_numpy(kappa_a) - kappa_a)
        out = _vm_mass_numpy(kappa_a, half_a, i0e)
    scalar = np.ndim(kappa) == 0 and np.ndim(half_width) == 0
    return float(out[0]) if scalar else out


def accumulate_inplace(acc: np.ndarray, sl: np.ndarray) -> None:
    """acc += sl, elementwise (streaming fusion primitive)."""
    if backend.active_backend() == "numba":
        _accumulate_numba(acc, sl)
    else:
        _accumulate_numpy(acc, sl)


def maximum_inplace(acc: np.ndarray, sl: np.ndarray) -> None:
    """acc = max(acc, sl), elementwise (streaming fusion primitive)."""
    if backend.active_backend() == "numba":
        _maximum_numba(acc, sl)
    else:
        _maximum_numpy(acc, sl)
