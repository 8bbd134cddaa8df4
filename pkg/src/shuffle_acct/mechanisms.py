"""Local randomizers, blanket distributions and the privacy amplification variable.

Two families ship: k-ary randomized response (:class:`KRR`, inputs and
outputs are the symbols ``1..k``) and the generalized Gaussian additive
mechanism (:class:`GenGaussian`, inputs in a closed interval, outputs on the
real line). The scale of the generalized Gaussian is called ``scale`` here;
it is the ``c`` (or ``alpha``) of the density ``exp(-|y-x|^beta / c^beta)``.

The privacy amplification variable is

    l_eps(y) = (R_x1(y) - e^eps R_x1'(y)) / R_ref(y)

and :func:`par_distribution` returns its law when ``Y`` is drawn from the
reference, from ``R_x1`` or from ``R_x1'``.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import functools
import math
from typing import Callable, Optional, Union

import numpy as np
from scipy import special

from shuffle_acct import numerics
from shuffle_acct.errors import DomainError, PieceDetectionError


# ---------------------------------------------------------------------------
# Descriptors


@dataclasses.dataclass(frozen=True)
class KRR:
    """k-ary randomized response with local privacy level ``eps0``."""

    k: int
    eps0: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise DomainError(f"k-RR needs an integer k >= 2, got {self.k!r}")
        if not (self.eps0 >= 0 and math.isfinite(self.eps0)):
            raise DomainError(f"k-RR needs finite eps0 >= 0, got {self.eps0!r}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "eps0", float(self.eps0))

    @property
    def p(self) -> float:
        return 1.0 / (1.0 + (self.k - 1) * math.exp(-self.eps0))

    @property
    def q(self) -> float:
        return 1.0 / (math.exp(self.eps0) + self.k - 1)

    @property
    def inputs(self) -> tuple:
        return tuple(range(1, self.k + 1))


@dataclasses.dataclass(frozen=True)
class GenGaussian:
    """Additive generalized Gaussian noise, ``beta`` in [1, 2].

    ``beta = 1`` is Laplace, ``beta = 2`` Gaussian with standard deviation
    ``scale / sqrt(2)``.
    """

    beta: float
    scale: float
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not 1.0 <= self.beta <= 2.0:
            raise DomainError(f"beta must lie in [1, 2], got {self.beta!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DomainError(f"scale must be positive, got {self.scale!r}")
        lo, hi = (float(v) for v in self.domain)
        if not lo < hi:
            raise DomainError(f"domain must be a proper interval, got {self.domain!r}")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "domain", (lo, hi))

    @classmethod
    def from_std(cls, sigma: float, beta: float, domain=(0.0, 1.0)) -> "GenGaussian":
        """Build the mechanism whose noise has standard deviation ``sigma``.

        The variance of the density is ``c^2 Gamma(3/beta)/Gamma(1/beta)``,
        so for ``beta = 2`` this gives ``c = sigma * sqrt(2)``.
        """
        c = sigma * math.sqrt(math.gamma(1.0 / beta) / math.gamma(3.0 / beta))
        return cls(beta, c, domain)

    @property
    def log_norm(self) -> float:
        b = self.beta
        return math.log(b / (2.0 * self.scale)) - math.lgamma(1.0 / b)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.domain[0] + self.domain[1])


LocalRandomizer = Union[KRR, GenGaussian]


@dataclasses.dataclass(frozen=True)
class Blanket:
    """Use the blanket distribution as the reference."""


@dataclasses.dataclass(frozen=True)
class Local:
    """Use the output distribution ``R_x`` of input ``x`` as the reference."""

    x: float


ReferenceDistribution = Union[Blanket, Local]


class Law(enum.Enum):
    """Sampling law of ``Y`` inside ``l_eps(Y)``."""

    REFERENCE = "reference"
    HYPOTHESIS_X1 = "x1"
    HYPOTHESIS_X1_PRIME = "x1_prime"


def mechanism_to_json(mech: LocalRandomizer) -> str:
    if isinstance(mech, KRR):
        return json.dumps({"kind": "krr", "k": mech.k, "eps0": mech.eps0})
    return json.dumps({"kind": "gen_gaussian", "beta": mech.beta,
                       "scale": mech.scale, "domain": list(mech.domain)})


def mechanism_from_json(text) -> LocalRandomizer:
    obj = json.loads(text) if isinstance(text, str) else dict(text)
    kind = obj.get("kind")
    if kind == "krr":
        return KRR(obj["k"], obj["eps0"])
    if kind == "gen_gaussian":
        return GenGaussian(obj["beta"], obj["scale"], tuple(obj.get("domain", (0.0, 1.0))))
    raise DomainError(f"unknown mechanism kind {kind!r}")


# ---------------------------------------------------------------------------
# Validation helpers


def _check_input(mech: LocalRandomizer, x) -> None:
    if isinstance(mech, KRR):
        if x not in mech.inputs:
            raise DomainError(f"k-RR input must be one of 1..{mech.k}, got {x!r}")
    else:
        lo, hi = mech.domain
        if not lo <= x <= hi:
            raise DomainError(f"input {x!r} outside domain [{lo}, {hi}]")


def _check_pair(mech, x1, x1p, ref=None) -> None:
    _check_input(mech, x1)
    _check_input(mech, x1p)
    if x1 == x1p:
        raise DomainError("the neighbouring inputs x1 and x1' must differ")
    if isinstance(ref, Local):
        _check_input(mech, ref.x)
    elif ref is not None and not isinstance(ref, Blanket):
        raise DomainError(f"unknown reference {ref!r}")


# ---------------------------------------------------------------------------
# Densities


def blanket_mass(mech: LocalRandomizer) -> float:
    """Total mass ``gamma`` of the pointwise infimum of the output densities."""
    if isinstance(mech, KRR):
        return mech.k * mech.q
    return _gg_blanket_mass(mech.beta, mech.scale, *mech.domain)


@functools.lru_cache(maxsize=256)
def _gg_blanket_mass(beta, scale, lo, hi):
    t = (0.5 * (hi - lo) / scale) ** beta
    return float(numerics.regularized_gamma_pq(1.0 / beta, t)[1])


def _gg_log_density(mech: GenGaussian, x, y):
    y = np.asarray(y, dtype=float)
    return mech.log_norm - (np.abs(y - x) / mech.scale) ** mech.beta


def _gg_log_ref(mech: GenGaussian, ref, y):
    if isinstance(ref, Local):
        return _gg_log_density(mech, ref.x, y)
    lo, hi = mech.domain
    y = np.asarray(y, dtype=float)
    far = np.where(y < mech.midpoint, hi, lo)
    return _gg_log_density(mech, far, y) - math.log(blanket_mass(mech))


def density(mech: LocalRandomizer, x, y):
    """Output density (or pmf for k-RR) ``R_x(y)``."""
    if isinstance(mech, KRR):
        y_arr = np.asarray(y)
        out = np.where(y_arr == x, mech.p, mech.q).astype(float)
        out = np.where((y_arr >= 1) & (y_arr <= mech.k) & (y_arr == np.round(y_arr)), out, 0.0)
        return float(out) if out.ndim == 0 else out
    out = np.exp(_gg_log_density(mech, x, y))
    return float(out) if out.ndim == 0 else out


def blanket_density(mech: LocalRandomizer, y):
    """Density of the blanket distribution, ``inf_x R_x(y) / gamma``."""
    if isinstance(mech, KRR):
        y_arr = np.asarray(y)
        ok = (y_arr >= 1) & (y_arr <= mech.k) & (y_arr == np.round(y_arr))
        out = np.where(ok, 1.0 / mech.k, 0.0)
        return float(out) if out.ndim == 0 else out
    out = np.exp(_gg_log_ref(mech, Blanket(), y))
    return float(out) if out.ndim == 0 else out


def ref_density(mech: LocalRandomizer, ref: ReferenceDistribution, y):
    if isinstance(ref, Local):
        return density(mech, ref.x, y)
    return blanket_density(mech, y)


def par_value(mech: LocalRandomizer, x1, x1p, ref: ReferenceDistribution,
              eps: float, y):
    """Pointwise value of the privacy amplification variable ``l_eps(y)``."""
    _check_pair(mech, x1, x1p, ref)
    if isinstance(mech, KRR):
        r = np.asarray(ref_density(mech, ref, y), dtype=float)
        if np.any(r <= 0):
            raise DomainError("reference density vanishes at y")
        out = (np.asarray(density(mech, x1, y)) - math.exp(eps) * np.asarray(density(mech, x1p, y))) / r
        return float(out) if out.ndim == 0 else out
    out = _gg_par(mech, x1, x1p, ref, eps, y)
    return float(out) if np.ndim(out) == 0 else out


def _gg_par(mech, x1, x1p, ref, eps, y):
    lr = _gg_log_ref(mech, ref, y)
    a = np.minimum(_gg_log_density(mech, x1, y) - lr, 700.0)
    b = np.minimum(_gg_log_density(mech, x1p, y) - lr + eps, 700.0)
    return np.exp(a) - np.exp(b)


# ---------------------------------------------------------------------------
# Sampling laws on the output space (generalized Gaussian)


class _ContinuousLaw:
    """CDF, survival function and density of Y on the real line."""

    def __init__(self, mech: GenGaussian, center=None):
        self.mech = mech
        self.center = center  # None means the blanket
        self.median = mech.midpoint if center is None else center
        self._s = 1.0 / mech.beta
        self._gamma = blanket_mass(mech)

    def _half_tail(self, x, y):
        # P(Y_x beyond y on the far side of x), i.e. 0.5 Q(1/beta, (|y-x|/c)^beta)
        z = np.abs(y - x) / self.mech.scale
        if self.mech.beta == 2.0:
            return 0.5 * special.erfc(z)
        if self.mech.beta == 1.0:
            return 0.5 * np.exp(-z)
        return 0.5 * special.gammaincc(self._s, z ** self.mech.beta)

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.center is not None:
            tail = self._half_tail(self.center, y)
            return np.where(y < self.center, tail, 1.0 - tail)
        lo, hi = self.mech.domain
        left = y < self.median
        return np.where(left, self._half_tail(hi, y) / self._gamma,
                        1.0 - self._half_tail(lo, y) / self._gamma)

    def sf(self, y):
        y = np.asarray(y, dtype=float)
        if self.center is not None:
            tail = self._half_tail(self.center, y)
            return np.where(y < self.center, 1.0 - tail, tail)
        lo, hi = self.mech.domain
        left = y < self.median
        return np.where(left, 1.0 - self._half_tail(hi, y) / self._gamma,
                        self._half_tail(lo, y) / self._gamma)

    def log_pdf(self, y):
        if self.center is not None:
            return _gg_log_density(self.mech, self.center, y)
        return _gg_log_ref(self.mech, Blanket(), y)

    def measure(self, a, b):
        """P(a < Y <= b) for arrays with a <= b, accurate in both tails."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        lower = self.cdf(b) - self.cdf(a)
        upper = self.sf(a) - self.sf(b)
        middle = 1.0 - self.cdf(a) - self.sf(b)
        out = np.where(b <= self.median, lower, np.where(a >= self.median, upper, middle))
        return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# Distribution of the privacy amplification variable


@dataclasses.dataclass(frozen=True)
class ParDistribution:
    """Law of ``X = l_eps(Y)`` under one sampling law.

    ``cdf`` and ``sf`` accept scalars or arrays. ``interval_probs(edges)``
    returns ``P(edges[j] < X <= edges[j+1])`` for sorted edges and is more
    accurate in the tails than differencing ``cdf``. ``pmf`` is a pair of
    arrays ``(values, probs)`` for discrete laws.
    """

    cdf: Callable
    sf: Callable
    interval_probs: Callable
    mean: float
    variance: float
    support: tuple
    law: Law
    pmf: Optional[tuple] = None
    second_moment: float = float("nan")
    third_moment: float = float("nan")
    breakpoints: tuple = ()
    atoms: tuple = ()


def _law_weights_krr(mech: KRR, x1, x1p, ref, law):
    ys = np.arange(1, mech.k + 1)
    if law is Law.REFERENCE:
        return np.asarray(ref_density(mech, ref, ys), dtype=float)
    centre = x1 if law is Law.HYPOTHESIS_X1 else x1p
    return np.asarray(density(mech, centre, ys), dtype=float)


def _discrete_distribution(values, probs, law) -> ParDistribution:
    order = np.argsort(values, kind="stable")
    values = np.asarray(values, dtype=float)[order]
    probs = np.asarray(probs, dtype=float)[order]
    # merge equal atoms
    uniq, inv = np.unique(values, return_inverse=True)
    merged = np.zeros(uniq.shape)
    np.add.at(merged, inv, probs)
    keep = merged > 0
    uniq, merged = uniq[keep], merged[keep]
    cum = np.cumsum(merged)
    rcum = np.cumsum(merged[::-1])[::-1]

    def cdf(u):
        idx = np.searchsorted(uniq, np.asarray(u, dtype=float), side="right")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        out = np.minimum(out, 1.0)
        return float(out) if np.ndim(out) == 0 else out

    def sf(u):
        idx = np.searchsorted(uniq, np.asarray(u, dtype=float), side="right")
        out = np.where(idx < uniq.size, rcum[np.minimum(idx, uniq.size - 1)], 0.0)
        out = np.minimum(out, 1.0)
        return float(out) if np.ndim(out) == 0 else out

    def interval_probs(edges):
        edges = np.asarray(edges, dtype=float)
        idx = np.searchsorted(edges, uniq, side="left") - 1
        out = np.zeros(edges.size - 1)
        ok = (idx >= 0) & (idx < out.size)
        np.add.at(out, idx[ok], merged[ok])
        return out

    mean = math.fsum(uniq * merged)
    m2 = math.fsum(uniq ** 2 * merged)
    m3 = math.fsum(uniq ** 3 * merged)
    var = math.fsum((uniq - mean) ** 2 * merged)
    return ParDistribution(cdf=cdf, sf=sf, interval_probs=interval_probs, mean=mean,
                           variance=var, support=(float(uniq[0]), float(uniq[-1])),
                           law=law, pmf=(uniq, merged), second_moment=m2, third_moment=m3,
                           atoms=tuple(float(v) for v in uniq))


@dataclasses.dataclass(frozen=True)
class _Piece:
    ya: float
    yb: float
    direction: int  # +1 increasing, -1 decreasing, 0 constant
    ys: np.ndarray  # table used to bracket inversions
    ls: np.ndarray


def _kinks(mech: GenGaussian, x1, x1p, ref):
    lo, hi = mech.domain
    pts = {x1, x1p, lo, hi}
    if isinstance(ref, Local):
        pts.add(ref.x)
    else:
        pts.add(mech.midpoint)
    return sorted(pts)


def _output_window(mech: GenGaussian, x1, x1p):
    # where both hypothesis densities exceed 1e-300
    radius = mech.scale * max(690.0 + mech.log_norm, 1.0) ** (1.0 / mech.beta)
    return max(x1, x1p) - radius, min(x1, x1p) + radius


def _sign_runs(l_vals, rel_flat=1e-12):
    d = np.diff(l_vals)
    scale = np.maximum(np.maximum(np.abs(l_vals[:-1]), np.abs(l_vals[1:])), 1e-300)
    sgn = np.sign(d).astype(int)
    sgn[np.abs(d) <= rel_flat * scale] = 0
    runs = []
    start = 0
    for i in range(1, sgn.size + 1):
        if i == sgn.size or sgn[i] != sgn[start]:
            runs.append((start, i, int(sgn[start])))  # intervals start..i-1
            start = i
    return runs


def _detect_pieces(f, kinks, window, local_window, per_region):
    ya, yb = window
    grid = np.concatenate((np.linspace(ya, yb, per_region),
                           np.linspace(local_window[0], local_window[1], per_region),
                           [k for k in kinks if ya < k < yb]))
    grid = np.unique(grid[(grid >= ya) & (grid <= yb)])
    vals = f(grid)
    runs = _sign_runs(vals)
    # boundaries between runs; turning points between +/- runs are refined
    bounds = [grid[0]]
    kinds = []
    for idx, (i0, i1, s) in enumerate(runs):
        kinds.append(s)
        if idx == len(runs) - 1:
            break
        s_next = runs[idx + 1][2]
        j = i1  # shared grid point
        if s != 0 and s_next != 0 and s != s_next:
            lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
            sign = -1.0 if s > 0 else 1.0  # maximize after increase
            y_star, _ = numerics.golden_section_min(lambda t: sign * float(f(np.array([t]))[0]),
                                                    lo, hi, tol=1e-13)
            bounds.append(y_star)
        else:
            bounds.append(grid[j])
    bounds.append(grid[-1])
    # merge consecutive runs with the same direction (can happen after flats vanish)
    pieces = []
    for a, b, s in zip(bounds[:-1], bounds[1:], kinds):
        if b <= a:
            continue
        if pieces and pieces[-1][2] == s:
            pieces[-1] = (pieces[-1][0], b, s)
        else:
            pieces.append((a, b, s))
    return pieces, grid


def _build_pieces(mech, x1, x1p, ref, eps, base_grid=4096, max_grid=2 ** 16):
    f = lambda y: _gg_par(mech, x1, x1p, ref, eps, y)  # noqa: E731
    kinks = _kinks(mech, x1, x1p, ref)
    window = _output_window(mech, x1, x1p)
    lo, hi = mech.domain
    local = (lo - 2.0 * mech.scale, hi + 2.0 * mech.scale)
    grid = base_grid
    prev, _ = _detect_pieces(f, kinks, window, local, grid)
    while True:
        grid *= 2
        if grid > max_grid:
            raise PieceDetectionError(
                "monotone pieces of l_eps did not stabilise under grid refinement",
                suggested_grid=grid)
        cur, ys_all = _detect_pieces(f, kinks, window, local, grid)
        if [p[2] for p in cur] == [p[2] for p in prev]:
            break
        prev = cur
    pieces = []
    for a, b, s in cur:
        # bracketing table: the detection grid inside the piece plus its ends
        inner = ys_all[(ys_all > a) & (ys_all < b)]
        ys = np.concatenate(([a], inner, [b]))
        ls = f(ys)
        if s > 0:
            ls = np.maximum.accumulate(ls)
        elif s < 0:
            ls = np.minimum.accumulate(ls)
        pieces.append(_Piece(a, b, s, ys, ls))
    return f, pieces


def _illinois(f, target, a, b, max_iter=60):
    """Vectorized Illinois iteration for ``f(y) = target`` on brackets ``[a, b]``."""
    x = 0.5 * (a + b)
    where = np.arange(a.size)  # converged entries are dropped from the work arrays
    fa = f(a) - target
    fb = f(b) - target
    for _ in range(max_iter):
        denom = fb - fa
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = b - fb * (b - a) / denom
        bad = ~np.isfinite(xi) | (xi <= np.minimum(a, b)) | (xi >= np.maximum(a, b))
        xi[bad] = 0.5 * (a[bad] + b[bad])
        fxi = f(xi) - target
        same = np.signbit(fxi) == np.signbit(fb)
        # Illinois step: halve the retained endpoint's value on a repeated side
        a = np.where(same, a, b)
        fa = np.where(same, 0.5 * fa, fb)
        b, fb = xi, fxi
        done = (fxi == 0) | (np.abs(b - a) <= 4e-16 * np.abs(xi))
        x[where] = xi
        if done.any():
            keep = ~done
            where, a, b, fa, fb, target = where[keep], a[keep], b[keep], fa[keep], fb[keep], target[keep]
            if where.size == 0:
                break
    return x


def _invert_piece(f, piece: _Piece, u):
    """For each u, the boundary y where l crosses u inside the piece.

    Returns ``y`` with ``{l <= u}`` equal to ``(-inf, y]`` on an increasing
    piece and ``[y, inf)`` on a decreasing one. Values beyond the tabulated
    range map to the piece ends, or to +-inf on the outermost pieces.
    """
    u = np.asarray(u, dtype=float)
    if piece.direction > 0:
        ls, ys = piece.ls, piece.ys
    else:
        ls, ys = piece.ls[::-1], piece.ys[::-1]
    idx = np.searchsorted(ls, u, side="right")
    inside = (idx > 0) & (idx < ls.size)
    y = np.where(idx == 0, ys[0], ys[-1]).astype(float)
    if inside.any():
        i = idx[inside]
        y[inside] = _illinois(f, u[inside], ys[i - 1].copy(), ys[i].copy())
    return y


class _PieceSet:
    """Monotone pieces of ``y -> l_eps(y)`` shared by all sampling laws.

    The crossing points depend only on the thresholds, so the most recent
    inversions are cached and reused across laws.
    """

    def __init__(self, mech, x1, x1p, ref, eps):
        self.f, self.pieces = _build_pieces(mech, x1, x1p, ref, eps)
        self.first, self.last = 0, len(self.pieces) - 1
        self._cache = {}

    def extent(self, i):
        p = self.pieces[i]
        a = -math.inf if i == self.first else p.ya
        b = math.inf if i == self.last else p.yb
        return a, b

    def boundaries(self, u):
        key = (u.shape, hash(u.tobytes()))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        out = []
        for i, p in enumerate(self.pieces):
            if p.direction == 0:
                out.append(None)
                continue
            y = _invert_piece(self.f, p, u)
            a, b = self.extent(i)
            if p.direction > 0:
                y = np.where(u < p.ls[0], a, np.where(u >= p.ls[-1], b, y))
            else:
                y = np.where(u < p.ls[-1], b, np.where(u >= p.ls[0], a, y))
            out.append(y)
        if len(self._cache) >= 4:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = out
        return out


@functools.lru_cache(maxsize=16)
def _piece_set(mech, x1, x1p, ref, eps) -> _PieceSet:
    return _PieceSet(mech, x1, x1p, ref, eps)


class _ContinuousPar:
    """l_eps(Y) for a generalized Gaussian, via monotone pieces."""

    def __init__(self, mech, x1, x1p, ref, eps, law_obj: _ContinuousLaw):
        self.set = _piece_set(mech, x1, x1p, ref, float(eps))
        self.pieces = self.set.pieces
        self.law = law_obj

    def _side_mass(self, u, upper):
        u_arr = np.atleast_1d(np.asarray(u, dtype=float))
        total = np.zeros(u_arr.shape)
        for i, (p, y) in enumerate(zip(self.pieces, self.set.boundaries(u_arr))):
            a, b = self.set.extent(i)
            if p.direction == 0:
                hit = (p.ls[0] > u_arr) if upper else (p.ls[0] <= u_arr)
                total += np.where(hit, self.law.measure(a, b), 0.0)
            elif (p.direction > 0) == upper:
                total += self.law.measure(y, np.full_like(y, b))
            else:
                total += self.law.measure(np.full_like(y, a), y)
        total = np.clip(total, 0.0, 1.0)
        return float(total[0]) if np.ndim(u) == 0 else total.reshape(np.shape(u))

    def cdf(self, u):
        return self._side_mass(u, upper=False)

    def sf(self, u):
        return self._side_mass(u, upper=True)

    def interval_probs(self, edges):
        edges = np.asarray(edges, dtype=float)
        out = np.zeros(edges.size - 1)
        for i, (p, y) in enumerate(zip(self.pieces, self.set.boundaries(edges))):
            a, b = self.set.extent(i)
            if p.direction == 0:
                j = np.searchsorted(edges, p.ls[0], side="left") - 1
                if 0 <= j < out.size:
                    out[j] += float(self.law.measure(a, b))
                continue
            if p.direction > 0:
                out += self.law.measure(y[:-1], y[1:])
            else:
                out += self.law.measure(y[1:], y[:-1])
        return out


def _gg_moment(mech, x1, x1p, ref, eps, law_obj, power, kinks):
    log_pdf = law_obj.log_pdf

    def integrand(y):
        lr = _gg_log_ref(mech, ref, y)
        lw = log_pdf(y)
        a = _gg_log_density(mech, x1, y) - lr
        b = _gg_log_density(mech, x1p, y) - lr + eps
        # l(y)^power * w(y) evaluated in the log domain where possible
        lval = np.exp(a + lw / power) - np.exp(b + lw / power)
        return lval ** power

    res = numerics.integrate_adaptive(integrand, -math.inf, math.inf,
                                      rel_tol=1e-11, abs_tol=1e-15, breakpoints=kinks)
    return res.value


def par_moments(mech: LocalRandomizer, x1, x1p, ref: ReferenceDistribution,
                eps: float, law: Law = Law.REFERENCE) -> tuple:
    """Raw moments ``(E X, E X^2, E X^3)`` of ``X = l_eps(Y)`` under ``law``.

    Exact sums for k-RR, quadrature for the generalized Gaussian.
    """
    _check_pair(mech, x1, x1p, ref)
    law = Law(law)
    if isinstance(mech, KRR):
        ys = np.arange(1, mech.k + 1)
        v = np.asarray(par_value(mech, x1, x1p, ref, eps, ys), dtype=float)
        w = _law_weights_krr(mech, x1, x1p, ref, law)
        return tuple(math.fsum(w * v ** j) for j in (1, 2, 3))
    if law is Law.REFERENCE:
        law_obj = _ContinuousLaw(mech, ref.x if isinstance(ref, Local) else None)
    else:
        law_obj = _ContinuousLaw(mech, x1 if law is Law.HYPOTHESIS_X1 else x1p)
    kinks = tuple(_kinks(mech, x1, x1p, ref))
    return tuple(_gg_moment(mech, x1, x1p, ref, eps, law_obj, j, kinks) for j in (1, 2, 3))


def par_distribution(mech: LocalRandomizer, x1, x1p, ref: ReferenceDistribution,
                     eps: float, law: Law = Law.REFERENCE) -> ParDistribution:
    """Distribution of ``l_eps(Y)`` with ``Y`` drawn from ``law``.

    For k-RR the result is an exact finite pmf. For the generalized Gaussian
    the CDF is assembled from the monotone pieces of ``y -> l_eps(y)``:
    each piece is inverted by bisection and the law's mass over the
    solution intervals is summed.
    """
    _check_pair(mech, x1, x1p, ref)
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps!r}")
    law = Law(law)
    if isinstance(mech, KRR):
        ys = np.arange(1, mech.k + 1)
        values = np.asarray(par_value(mech, x1, x1p, ref, eps, ys), dtype=float)
        return _discrete_distribution(values, _law_weights_krr(mech, x1, x1p, ref, law), law)

    if law is Law.REFERENCE:
        law_obj = _ContinuousLaw(mech, ref.x if isinstance(ref, Local) else None)
    elif law is Law.HYPOTHESIS_X1:
        law_obj = _ContinuousLaw(mech, x1)
    else:
        law_obj = _ContinuousLaw(mech, x1p)
    par = _ContinuousPar(mech, x1, x1p, ref, eps, law_obj)
    kinks = tuple(_kinks(mech, x1, x1p, ref))
    m1, m2, m3 = par_moments(mech, x1, x1p, ref, eps, law)
    lows = [p.ls.min() for p in par.pieces]
    highs = [p.ls.max() for p in par.pieces]
    lo_sup = -math.inf if par.pieces[0].direction > 0 or par.pieces[-1].direction < 0 else min(lows)
    hi_sup = math.inf if par.pieces[-1].direction > 0 or par.pieces[0].direction < 0 else max(highs)
    return ParDistribution(cdf=par.cdf, sf=par.sf, interval_probs=par.interval_probs,
                           mean=m1, variance=max(m2 - m1 * m1, 0.0),
                           support=(lo_sup, hi_sup), law=law, pmf=None,
                           second_moment=m2, third_moment=m3, breakpoints=kinks,
                           atoms=tuple(float(p.ls[0]) for p in par.pieces if p.direction == 0))


def variance_l0(mech: LocalRandomizer, x1, x1p, ref: ReferenceDistribution) -> float:
    """Variance of ``l_0(Y)`` under the reference, ``int (R_x1 - R_x1')^2 / R_ref``."""
    _check_pair(mech, x1, x1p, ref)
    if isinstance(mech, KRR):
        ys = np.arange(1, mech.k + 1)
        diff = np.asarray(density(mech, x1, ys)) - np.asarray(density(mech, x1p, ys))
        r = np.asarray(ref_density(mech, ref, ys))
        return math.fsum(diff * diff / r)

    def integrand(y):
        lr = _gg_log_ref(mech, ref, y)
        a = np.exp(_gg_log_density(mech, x1, y) - 0.5 * lr)
        b = np.exp(_gg_log_density(mech, x1p, y) - 0.5 * lr)
        return (a - b) ** 2

    res = numerics.integrate_adaptive(integrand, -math.inf, math.inf, rel_tol=1e-10,
                                      abs_tol=1e-15, breakpoints=tuple(_kinks(mech, x1, x1p, ref)))
    return res.value
