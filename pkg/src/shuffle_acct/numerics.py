"""Special functions, root finding, quadrature and a radix-2 FFT.

Everything here is a pure function of its inputs. Array arguments are
accepted wherever the docstring says so; scalars come back as ``float``.
"""

from __future__ import annotations

import dataclasses
import functools
import heapq
import math
from typing import Callable

import numpy as np
from scipy import special

from shuffle_acct.errors import BracketError, ConvergenceError, DomainError

_INV_E = math.exp(-1.0)
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Lambert W


def lambert_w0(z: float) -> float:
    """Principal branch of the Lambert W function.

    Solves ``w * exp(w) = z`` for ``w >= -1`` with a damped Halley iteration.
    The starting point is ``log z - log log z`` above ``e``, a branch-point
    series near ``-1/e`` and a Taylor series about zero elsewhere.
    """
    z = float(z)
    if math.isnan(z) or z < -_INV_E - 1e-15:
        raise DomainError(f"lambert_w0 needs z >= -1/e, got {z!r}")
    if z == 0.0:
        return 0.0
    if math.isinf(z):
        return math.inf
    if z <= -_INV_E:
        return -1.0

    if z > math.e:
        lz = math.log(z)
        w = lz - math.log(lz)
    elif z < -0.25:
        p = math.sqrt(2.0 * (math.e * z + 1.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif z < 0.5:
        w = z - z * z + 1.5 * z ** 3
    else:
        w = math.log1p(z) * (1.0 - math.log1p(math.log1p(z)) / (2.0 + math.log1p(z)))

    for _ in range(64):
        ew = math.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom
        # damping keeps the iterate on the principal branch
        if w - step < -1.0:
            step = 0.5 * (w + 1.0)
        w -= step
        if abs(step) <= 4e-16 * (1.0 + abs(w)):
            break
    return w


# ---------------------------------------------------------------------------
# Normal distribution


def std_normal_cdf(x):
    """Standard normal CDF through ``erfc``; accepts scalars or arrays."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / _SQRT2)
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)


def std_normal_sf(x):
    """Upper tail ``1 - Phi(x)`` without cancellation."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(float(x) / _SQRT2)
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / _SQRT2)


def std_normal_pdf(x):
    if np.ndim(x) == 0:
        return _INV_SQRT_2PI * math.exp(-0.5 * float(x) ** 2)
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


# ---------------------------------------------------------------------------
# Incomplete gamma

_GAMMA_MAX_ITER = 2000
_GAMMA_EPS = 1e-16


def _lower_series(s: float, x: np.ndarray) -> np.ndarray:
    """Regularized lower incomplete gamma P(s, x) by its power series."""
    out = np.zeros_like(x)
    pos = np.flatnonzero(x > 0)
    if pos.size == 0:
        return out
    xp = x[pos]
    total = np.empty_like(xp)
    # working arrays stay contiguous; converged entries are dropped
    where = np.arange(xp.size)
    xw = xp.copy()
    term = np.full_like(xw, 1.0 / s)
    acc = term.copy()
    ap = s
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= xw / ap
        acc += term
        done = np.abs(term) <= np.abs(acc) * _GAMMA_EPS
        if done.any():
            total[where[done]] = acc[done]
            keep = ~done
            where, xw, term, acc = where[keep], xw[keep], term[keep], acc[keep]
            if where.size == 0:
                break
    else:
        raise ConvergenceError("incomplete gamma series did not converge")
    out[pos] = total * np.exp(s * np.log(xp) - xp - math.lgamma(s))
    return out


def _upper_fraction(s: float, x: np.ndarray) -> np.ndarray:
    """Regularized upper incomplete gamma Q(s, x) by Lentz's continued fraction."""
    tiny = 1e-300
    log_pref = s * np.log(x) - x - math.lgamma(s)
    out = np.zeros_like(x)
    # the prefactor underflows and the fraction is below 1, so Q is 0 there
    live = np.flatnonzero(log_pref > -760.0)
    if live.size == 0:
        return out
    frac = np.empty(live.size)
    where = np.arange(live.size)
    b = x[live] + 1.0 - s
    c = np.full_like(b, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        d[np.abs(d) < tiny] = tiny
        c = b + an / c
        c[np.abs(c) < tiny] = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        done = np.abs(delta - 1.0) <= _GAMMA_EPS
        if done.any():
            frac[where[done]] = h[done]
            keep = ~done
            where, b, c, d, h = where[keep], b[keep], c[keep], d[keep], h[keep]
            if where.size == 0:
                break
    else:
        raise ConvergenceError("incomplete gamma continued fraction did not converge")
    out[live] = np.exp(log_pref[live]) * frac
    return out


def regularized_gamma_pq(s: float, x):
    """Return ``(P(s, x), Q(s, x))``, each computed without cancellation.

    ``P`` is the regularized lower and ``Q`` the regularized upper
    incomplete gamma function. ``x`` may be an array.
    """
    s = float(s)
    if not s > 0:
        raise DomainError(f"incomplete gamma needs s > 0, got {s!r}")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise DomainError("incomplete gamma needs x >= 0")
    flat = np.atleast_1d(xa).ravel()
    if s == 0.5 or s == 1.0:
        # closed forms: Q(1/2, x) = erfc(sqrt x), Q(1, x) = exp(-x)
        if s == 1.0:
            p, q = -np.expm1(-flat), np.exp(-flat)
        else:
            r = np.sqrt(flat)
            p, q = special.erf(r), special.erfc(r)
        p = p.reshape(np.shape(xa))
        q = q.reshape(np.shape(xa))
        if np.ndim(x) == 0:
            return float(p), float(q)
        return p, q
    p = np.empty_like(flat)
    q = np.empty_like(flat)
    small = flat < s + 1.0
    if small.any():
        p[small] = _lower_series(s, flat[small])
        q[small] = 1.0 - p[small]
    big = ~small
    if big.any():
        finite = big & np.isfinite(flat)
        if finite.any():
            q[finite] = _upper_fraction(s, flat[finite])
        q[big & ~np.isfinite(flat)] = 0.0
        p[big] = 1.0 - q[big]
    p = p.reshape(np.shape(xa))
    q = q.reshape(np.shape(xa))
    if np.ndim(x) == 0:
        return float(p), float(q)
    return p, q


def upper_incomplete_gamma(s: float, x):
    """Non-regularized upper incomplete gamma ``Gamma(s, x)``.

    Series for ``x < s + 1``, continued fraction otherwise. ``x`` may be an
    array.
    """
    _, q = regularized_gamma_pq(s, x)
    return q * math.gamma(s) if np.ndim(q) == 0 else q * math.gamma(float(s))


# ---------------------------------------------------------------------------
# FFT


def _check_pow2(n: int) -> None:
    if n < 2 or n & (n - 1):
        raise DomainError(f"FFT length must be a power of two >= 2, got {n}")


@functools.lru_cache(maxsize=4)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    dtype = np.int32 if n < 2 ** 31 else np.int64
    idx = np.arange(n, dtype=dtype)
    rev = np.zeros(n, dtype=dtype)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    rev.setflags(write=False)
    return rev


@functools.lru_cache(maxsize=4)
def _twiddles(n: int) -> np.ndarray:
    tw = np.exp(-2j * np.pi * np.arange(n // 2) / n)
    tw.setflags(write=False)
    return tw


def _radix2(v: np.ndarray, inverse: bool) -> np.ndarray:
    # the inverse transform is conj(FFT(conj(v))), which avoids a second table
    n = v.shape[0]
    _check_pow2(n)
    tw_full = _twiddles(n)
    a = np.empty(n, dtype=complex)
    a[:] = np.asarray(v)[_bit_reversal(n)]
    if inverse:
        np.conjugate(a, out=a)
    b = np.empty_like(a)
    scratch = np.empty(n // 2, dtype=complex)
    m = 1
    while m < n:
        tw = tw_full[:: n // (2 * m)]
        src = a.reshape(-1, 2, m)
        dst = b.reshape(-1, 2, m)
        t = scratch.reshape(-1, m)
        np.multiply(src[:, 1, :], tw, out=t)
        np.add(src[:, 0, :], t, out=dst[:, 0, :])
        np.subtract(src[:, 0, :], t, out=dst[:, 1, :])
        a, b = b, a
        m *= 2
    del b, scratch
    if inverse:
        np.conjugate(a, out=a)
    return a


def fft_forward(v) -> np.ndarray:
    """Unnormalized forward DFT ``X_k = sum_j v_j exp(-2 pi i jk/N)``."""
    return _radix2(np.asarray(v), inverse=False)


def fft_inverse(v) -> np.ndarray:
    """Inverse DFT, including the ``1/N`` factor."""
    v = np.asarray(v)
    out = _radix2(v, inverse=True)
    out /= v.shape[0]
    return out


def fft_shift(v) -> np.ndarray:
    """Rotate so that index 0 moves to the middle (``N/2``)."""
    v = np.asarray(v)
    _check_pow2(v.shape[0])
    half = v.shape[0] // 2
    return np.concatenate((v[half:], v[:half]))


def ifft_shift(v) -> np.ndarray:
    """Exact inverse of :func:`fft_shift`."""
    v = np.asarray(v)
    _check_pow2(v.shape[0])
    half = v.shape[0] - v.shape[0] // 2
    return np.concatenate((v[half:], v[:half]))


# ---------------------------------------------------------------------------
# Root finding


def find_root_bisect(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-12, max_iter: int = 400) -> float:
    """Bisection for a sign change of ``f`` on ``[a, b]``.

    Stops when ``|f(x)| <= tol`` or the bracket is narrower than
    ``tol * max(1, |x|)``.
    """
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if np.sign(fa) == np.sign(fb):
        raise BracketError(
            f"no sign change on [{a}, {b}]: f(a)={fa}, f(b)={fb}", a, b, fa, fb)
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0.0 or abs(fm) <= tol or abs(b - a) <= tol * max(1.0, abs(mid)):
            return mid
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b, fb = mid, fm
    return 0.5 * (a + b)


def bisect_array(f: Callable[[np.ndarray], np.ndarray], lo, hi,
                 iterations: int = 80) -> np.ndarray:
    """Vectorized bisection; ``f(lo)`` and ``f(hi)`` must differ in sign elementwise.

    Runs a fixed number of halvings, which for double precision brackets is
    enough to reach adjacent floats.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    f_lo_pos = f(lo) > 0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        same = (f(mid) > 0) == f_lo_pos
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def golden_section_min(f: Callable[[float], float], a: float, b: float,
                       tol: float = 1e-8, max_iter: int = 200):
    """Minimize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(c) + abs(d)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    cands = [(fc, c), (fd, d), (f(a), a), (f(b), b)]
    fx, x = min(cands)
    return x, fx


# ---------------------------------------------------------------------------
# Quadrature

# Gauss-Kronrod 7-15 nodes and weights on [-1, 1].
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate((-_XGK[:-1], _XGK[::-1]))
_KWEIGHTS = np.concatenate((_WGK[:-1], _WGK[::-1]))
# Gauss nodes are the odd-indexed Kronrod abscissae.
_GWEIGHTS = np.zeros(15)
_GWEIGHTS[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate((_WG[:-1], _WG[::-1]))


@dataclasses.dataclass(frozen=True)
class QuadratureResult:
    value: float
    abs_error_estimate: float
    evaluations: int


def _transform(f, a, b):
    """Map infinite ranges to a finite interval with x = t / (1 - t^2)."""
    if math.isfinite(a) and math.isfinite(b):
        return f, a, b

    def x_of(t):
        return t / (1.0 - t * t)

    def jac(t):
        tt = t * t
        return (1.0 + tt) / (1.0 - tt) ** 2

    if math.isinf(a) and math.isinf(b):
        if a > 0 or b < 0:
            raise DomainError("integration range must run from -inf to +inf")
        return (lambda t: f(x_of(t)) * jac(t)), -1.0, 1.0
    if math.isinf(b):
        return (lambda t: f(a + x_of(t)) * jac(t)), 0.0, 1.0
    return (lambda t: f(b - x_of(t)) * jac(t)), 0.0, 1.0


def _gk15(f, a, b):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    fx = np.asarray(f(mid + half * _NODES), dtype=float)
    if fx.shape != (15,):
        fx = np.broadcast_to(fx, (15,))
    k = half * float(np.dot(_KWEIGHTS, fx))
    g = half * float(np.dot(_GWEIGHTS, fx))
    return k, abs(k - g)


def integrate_adaptive(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                       rel_tol: float = 1e-10, abs_tol: float = 1e-14,
                       max_evaluations: int = 2 ** 20,
                       breakpoints=()) -> QuadratureResult:
    """Globally adaptive Gauss-Kronrod (7, 15) quadrature.

    ``f`` receives a numpy array of abscissae and must return an array of the
    same shape. Infinite endpoints are handled by a rational substitution.
    ``breakpoints`` (finite, inside the range) are used as initial
    subdivision points, which helps with kinks.
    """
    if a == b:
        return QuadratureResult(0.0, 0.0, 0)
    sign = 1.0
    if a > b:
        a, b, sign = b, a, -1.0

    pieces = []
    pts = sorted(p for p in breakpoints if a < p < b)
    edges = [a] + pts + [b]
    for lo, hi in zip(edges[:-1], edges[1:]):
        g, lo_t, hi_t = _transform(f, lo, hi)
        pieces.append((g, lo_t, hi_t))

    heap = []
    total = 0.0
    err = 0.0
    evals = 0
    for idx, (g, lo, hi) in enumerate(pieces):
        val, e = _gk15(g, lo, hi)
        evals += 15
        total += val
        err += e
        heapq.heappush(heap, (-e, lo, hi, val, idx))

    while err > max(rel_tol * abs(total), abs_tol):
        if evals + 30 > max_evaluations:
            raise ConvergenceError(
                f"quadrature did not converge on [{a}, {b}] "
                f"(estimate {total}, error {err})",
                best=QuadratureResult(sign * total, err, evals))
        neg_e, lo, hi, val, idx = heapq.heappop(heap)
        g = pieces[idx][0]
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            # interval cannot be split further in floating point
            heapq.heappush(heap, (0.0, lo, hi, val, idx))
            if all(item[0] == 0.0 for item in heap):
                break
            continue
        v1, e1 = _gk15(g, lo, mid)
        v2, e2 = _gk15(g, mid, hi)
        evals += 30
        total += v1 + v2 - val
        err += e1 + e2 + neg_e
        heapq.heappush(heap, (-e1, lo, mid, v1, idx))
        heapq.heappush(heap, (-e2, mid, hi, v2, idx))

    # recompute from the leaves to shed accumulated rounding in the running sums
    total = math.fsum(item[3] for item in heap)
    err = math.fsum(-item[0] for item in heap)
    return QuadratureResult(sign * total, err, evals)
