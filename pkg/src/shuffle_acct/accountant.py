"""Certified finite-n bounds on the blanket divergence via FFT.

The blanket divergence is written as

    D = P[l(Y_1) + S > 0 | Y_1 ~ R_x1] - e^eps P[l(Y_1) + S > 0 | Y_1 ~ R_x1']

with ``S`` the sum of ``Bin(n-1, gamma)`` independent copies of ``l(Y)``,
``Y`` drawn from the reference. The law of ``S`` is computed on a grid by
FFT after truncating and discretizing the summands; the truncation,
discretization and aliasing errors are bounded explicitly so the returned
interval ``[L, U]`` contains ``D`` (up to floating-point round-off).
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import itertools
import math
import os
import time
import warnings
from typing import Optional, Sequence

import numpy as np

from shuffle_acct import numerics
from shuffle_acct.asymptotics import (
    epsilon_curve_refined, gamma_for_reference, refined_divergence,
)
from shuffle_acct.errors import DomainError, InfeasibleBudgetError, NumericalError
from shuffle_acct.mechanisms import (
    KRR, Blanket, GenGaussian, Law, Local, LocalRandomizer, ParDistribution,
    ReferenceDistribution, _check_pair, blanket_mass, par_distribution, par_value,
    variance_l0,
)
from shuffle_acct.shuffle_index import worst_case_indices

DEFAULT_GRID_CAP = 2 ** 28


# measured peak working set of one accountant call, in bytes per grid point
_BYTES_PER_POINT = 80


def _available_memory() -> Optional[int]:
    try:
        with open("/proc/meminfo") as fh:
            for line in fh:
                if line.startswith("MemAvailable:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    return None


def _check_memory(grid_size: int) -> None:
    """Refuse grids whose working set exceeds the memory currently available."""
    need = _BYTES_PER_POINT * grid_size
    have = _available_memory()
    if have is not None and need > have:
        raise InfeasibleBudgetError(
            f"a grid of {grid_size} points needs about {need / 2 ** 30:.1f} GiB, "
            f"only {have / 2 ** 30:.1f} GiB available; relax the budget",
            required_grid=grid_size)


@dataclasses.dataclass(frozen=True)
class ErrorBudget:
    eta_main: float = 1e-1
    eta_trunc: float = 1e-1
    eta_disc: float = 1e-1
    eta_alias: float = 1e-1

    def __post_init__(self):
        for name in ("eta_main", "eta_trunc", "eta_disc", "eta_alias"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be positive, got {v!r}")

    @classmethod
    def uniform(cls, eta: float) -> "ErrorBudget":
        return cls(eta, eta, eta, eta)

    def scaled(self, factor: float) -> "ErrorBudget":
        return ErrorBudget(self.eta_main * factor, self.eta_trunc * factor,
                           self.eta_disc * factor, self.eta_alias * factor)


@dataclasses.dataclass(frozen=True)
class FftParams:
    """Numerical knobs of the FFT accountant.

    The truncation window is ``(s, s + w_in]``; its edges are bin edges, so
    ``s`` is a half-integer multiple of ``h``. The grid covers
    ``z_j = j h`` for ``j`` in ``[-N/2, N/2)`` with ``w_out = N h``.
    """

    n: int
    gamma: float
    c: float
    s: float
    w_in: float
    h: float
    w_out: float
    grid_size: int
    budget: Optional[ErrorBudget] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"n must be an integer >= 2, got {self.n!r}")
        if not 0 < self.gamma <= 1:
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma!r}")
        if not (self.h > 0 and self.w_in > 0 and self.c >= 0):
            raise DomainError("need h > 0, w_in > 0 and c >= 0")
        g = self.grid_size
        if g < 2 or g & (g - 1):
            raise DomainError(f"grid_size must be a power of two, got {g}")
        if self.w_out < self.w_in or g * self.h < self.w_out - 1e-12:
            raise DomainError("need w_out >= w_in and grid_size * h >= w_out")

    @property
    def bin_range(self) -> tuple:
        """First and last bin index covering the truncation window."""
        j0 = int(round(self.s / self.h + 0.5))
        j1 = int(round((self.s + self.w_in) / self.h - 0.5))
        return j0, j1


@dataclasses.dataclass(frozen=True)
class TruncatedMoments:
    """Summaries of one truncated summand before and after discretization."""

    q: float  # mass outside the truncation window
    mu_tr: float  # mean of the truncated variable
    mu_di: float  # mean of the discretized truncated variable
    m2_di: float  # second moment of the discretized truncated variable


@dataclasses.dataclass(frozen=True)
class CenteredPmf:
    """PMF of the (n-1)-fold thinned sum on the grid ``z_j = j h``.

    Entry ``i`` holds grid point ``j = i - N/2``; ``z_j - offset`` equals
    ``S_di - mu_s_di``.
    """

    probs: np.ndarray
    h: float
    mu_s_tr: float
    mu_s_di: float
    offset: float
    moments: TruncatedMoments
    negative_mass: float = 0.0

    @property
    def grid(self) -> np.ndarray:
        n = self.probs.size
        return (np.arange(n) - n // 2) * self.h


@dataclasses.dataclass(frozen=True)
class ErrorTerms:
    e_trunc: float
    e_disc: float
    e_alias: float


@dataclasses.dataclass(frozen=True)
class DivergenceBounds:
    lower: float
    upper: float
    midpoint: float
    e_trunc: float
    e_disc: float
    e_alias: float
    p_plus_x1: float
    p_minus_x1: float
    p_plus_x1p: float
    p_minus_x1p: float
    mean_gap_ok: bool
    delta_err: float = 0.0
    eps: float = float("nan")
    n: int = 0
    grid_size: int = 0
    negative_mass: float = 0.0


# ---------------------------------------------------------------------------
# PMF of the thinned sum


def _bin_edges(params: FftParams) -> tuple:
    j0, j1 = params.bin_range
    js = np.arange(j0, j1 + 1)
    edges = (np.arange(j0, j1 + 2) - 0.5) * params.h
    return js, edges


def truncated_moments(params: FftParams, f_ref: ParDistribution,
                      bins: Optional[np.ndarray] = None) -> TruncatedMoments:
    """Truncation mass and means of the truncated and discretized summand.

    The truncated mean uses ``((s+w) F(s+w) - s F(s) - int_s^{s+w} F) /
    (F(s+w) - F(s))``, with the integral summed exactly for discrete laws.
    """
    js, edges = _bin_edges(params)
    a, b = edges[0], edges[-1]
    q = float(f_ref.cdf(a)) + float(f_ref.sf(b))
    inside = 1.0 - q
    if not inside > 0:
        raise DomainError("truncation window carries no probability mass")
    if f_ref.pmf is not None:
        vals, probs = f_ref.pmf
        keep = (vals > a) & (vals <= b)
        mu_tr = math.fsum(vals[keep] * probs[keep]) / math.fsum(probs[keep])
    else:
        atoms = [u for u in getattr(f_ref, "atoms", ()) if a < u < b]
        integral = numerics.integrate_adaptive(
            lambda u: np.asarray(f_ref.cdf(u)), a, b, rel_tol=1e-12, abs_tol=1e-15,
            breakpoints=tuple(atoms)).value
        fa, fb = float(f_ref.cdf(a)), float(f_ref.cdf(b))
        mu_tr = (b * fb - a * fa - integral) / (fb - fa)
    if bins is None:
        bins = f_ref.interval_probs(edges) / inside
    xs = js * params.h
    mu_di = math.fsum(xs * bins)
    m2_di = math.fsum(xs * xs * bins)
    return TruncatedMoments(q, mu_tr, mu_di, m2_di)


def calculate_pmf(params: FftParams, f_ref: ParDistribution) -> CenteredPmf:
    """PMF of the mean-centred sum of ``n-1`` thinned, discretized summands.

    Bins ``p_j = F_tr(x_j + h/2) - F_tr(x_j - h/2)`` are placed on the
    periodic grid, transformed, raised to the compound-binomial power
    ``((1-gamma) + gamma psi_Z)^(n-1)``, transformed back and rotated so the
    mean of the sum sits at the centre of the window. The rotation is by a
    whole number of bins; the fractional remainder is kept in ``offset``.
    """
    n_grid = params.grid_size
    js, edges = _bin_edges(params)
    if js.size > n_grid:
        raise DomainError("truncation window wider than the FFT window")
    q = float(f_ref.cdf(edges[0])) + float(f_ref.sf(edges[-1]))
    bins = f_ref.interval_probs(edges) / (1.0 - q)
    mom = truncated_moments(params, f_ref, bins)

    _check_memory(n_grid)
    buf = np.zeros(n_grid)
    np.add.at(buf, js % n_grid, bins)
    psi = numerics.fft_forward(buf)
    del buf
    gamma = params.gamma
    m = params.n - 1
    # psi_S = ((1 - gamma) + gamma psi_Z)^(n-1), formed in place
    psi *= gamma
    psi += 1.0 - gamma
    np.power(psi, m, out=psi)
    raw = numerics.fft_inverse(psi).real.copy()
    del psi

    mu_s_tr = m * gamma * mom.mu_tr
    mu_s_di = m * gamma * mom.mu_di
    shift = int(round(mu_s_di / params.h))
    probs = np.roll(raw, n_grid // 2 - shift)
    offset = mu_s_di - shift * params.h

    neg = probs < 0
    negative_mass = 0.0
    if neg.any():
        worst = float(probs[neg].min())
        if worst < -1e-12 * n_grid:
            raise NumericalError(
                f"inverse FFT produced negative mass {worst:.3e}; "
                "enlarge w_out or reduce n")
        negative_mass = float(-probs[neg].sum())
        probs = np.where(neg, 0.0, probs)
    return CenteredPmf(probs, params.h, mu_s_tr, mu_s_di, offset, mom, negative_mass)


_CHUNK = 2 ** 20


def _main_terms(pmf: CenteredPmf, laws: Sequence, signed_cs: Sequence) -> list:
    """``P(c; x)`` for every (law, c) pair, evaluated in grid chunks.

    Chunking bounds the memory of the tail evaluations, and evaluating all
    laws on one chunk lets them share threshold work.
    """
    n_grid = pmf.probs.size
    parts = [[] for _ in laws for _ in signed_cs]
    for lo in range(0, n_grid, _CHUNK):
        probs = pmf.probs[lo:lo + _CHUNK]
        live = probs > 0
        if not live.any():
            continue
        probs = probs[live]
        dev = (np.arange(lo, lo + live.size)[live] - n_grid // 2) * pmf.h - pmf.offset
        k = 0
        for c in signed_cs:
            thresholds = -c - dev - pmf.mu_s_tr
            for f_x in laws:
                tail = np.asarray(f_x.sf(thresholds), dtype=float)
                parts[k].append(float(np.dot(probs, tail)))
                k += 1
    out = []
    k = 0
    for c in signed_cs:
        for _ in laws:
            out.append(min(max(math.fsum(parts[k]), 0.0), 1.0))
            k += 1
    return out


def calculate_main_term(pmf: CenteredPmf, f_x: ParDistribution, c: float) -> float:
    """``sum_j p_j (1 - F_x(-c - (S_di - mu_s_di) - mu_s_tr))``.

    The sign of ``c`` selects P(+c) or P(-c).
    """
    return _main_terms(pmf, [f_x], [c])[0]


# ---------------------------------------------------------------------------
# Error bounds


def _bernstein(a, n_terms, var, bound):
    """Two-sided Bernstein tail ``2 exp(-a^2 / (2 m v^2 + 2/3 K a))``."""
    if a <= 0:
        return 1.0
    denom = 2.0 * n_terms * var + (2.0 / 3.0) * bound * a
    if denom <= 0:
        return 0.0
    return min(1.0, 2.0 * math.exp(-a * a / denom))


def truncation_error(n: int, gamma: float, q: float) -> float:
    """Exact ``1 - (1 - gamma q)^(n-1)``."""
    if q <= 0:
        return 0.0
    return -math.expm1((n - 1) * math.log1p(-gamma * q))


def error_bounds(params: FftParams, moments: TruncatedMoments) -> ErrorTerms:
    """Truncation, discretization and aliasing bounds.

    The discretization bound uses ``K = h/2 + gamma |mu_tr - mu_di|``, which
    bounds the centred per-summand rounding error. The aliasing threshold is
    ``w_out/2 - 3h/2``, the largest deviation of the sum from its mean that
    still lands inside the grid after the whole-bin centring.
    """
    n, g, h = params.n, params.gamma, params.h
    e_trunc = truncation_error(n, g, moments.q)
    k_disc = h / 2.0 + g * abs(moments.mu_tr - moments.mu_di)
    e_disc = _bernstein(params.c, n - 1, g * h * h / 4.0, k_disc)
    v_alias = max(g * moments.m2_di - (g * moments.mu_di) ** 2, 0.0)
    k_alias = max(abs(params.s), abs(params.s + params.w_in)) + g * abs(moments.mu_di)
    a = params.w_out / 2.0 - 1.5 * h
    e_alias = _bernstein(a, n - 1, v_alias, k_alias)
    return ErrorTerms(e_trunc, e_disc, e_alias)


# ---------------------------------------------------------------------------
# Bounds


def _par_laws(mech, x1, x1p, ref, eps):
    return (par_distribution(mech, x1, x1p, ref, eps, Law.REFERENCE),
            par_distribution(mech, x1, x1p, ref, eps, Law.HYPOTHESIS_X1),
            par_distribution(mech, x1, x1p, ref, eps, Law.HYPOTHESIS_X1_PRIME))


def divergence_bounds(mech: LocalRandomizer, x1, x1p, ref: ReferenceDistribution,
                      eps: float, n: int, params: FftParams,
                      laws: Optional[tuple] = None) -> DivergenceBounds:
    """Certified interval for the blanket divergence.

    ``L = P(-c; x1) - e^eps P(c; x1') - delta_err`` and
    ``U = P(c; x1) - e^eps P(-c; x1') + delta_err`` with
    ``delta_err = (1 + e^eps)(e_alias + e_disc + 2 e_trunc)``; ``L`` and ``U``
    are clipped to [0, 1]. Zeroed negative round-off mass after the inverse
    FFT is added to ``delta_err``.
    """
    _check_pair(mech, x1, x1p, ref)
    if params.n != n:
        raise DomainError(f"params were tuned for n={params.n}, not n={n}")
    f_ref, f_x1, f_x1p = laws if laws is not None else _par_laws(mech, x1, x1p, ref, eps)
    pmf = calculate_pmf(params, f_ref)
    err = error_bounds(params, pmf.moments)
    keep = 1.0 - err.e_trunc
    c = params.c
    pp1, pp2, pm1, pm2 = (keep * v for v in _main_terms(pmf, [f_x1, f_x1p], [c, -c]))
    e_eps = math.exp(eps)
    delta = (1.0 + e_eps) * (err.e_alias + err.e_disc + 2.0 * err.e_trunc + pmf.negative_mass)
    lower = min(max(pm1 - e_eps * pp2 - delta, 0.0), 1.0)
    upper = min(max(pp1 - e_eps * pm2 + delta, 0.0), 1.0)
    gap_ok = bool(abs(pmf.mu_s_di - pmf.mu_s_tr) <= c)
    if not gap_ok:
        warnings.warn("|mu_S_di - mu_S_tr| exceeds c; bounds remain valid but may be wide",
                      RuntimeWarning, stacklevel=2)
    return DivergenceBounds(lower, upper, 0.5 * (lower + upper), err.e_trunc, err.e_disc,
                            err.e_alias, pp1, pm1, pp2, pm2, gap_ok, delta, eps, n,
                            params.grid_size, pmf.negative_mass)


# ---------------------------------------------------------------------------
# Parameter tuning


def _bisect_decreasing(func, target, lo, hi, iters=200):
    """Largest x in [lo, hi] with func(x) <= target for func increasing in x."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if func(mid) <= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return lo


def _quantile(dist: ParDistribution, tail: float, upper: bool) -> float:
    """A point beyond which ``dist`` has at most ``tail`` mass."""
    centre = dist.mean
    spread = math.sqrt(dist.variance) if dist.variance > 0 else 1.0
    fn = (lambda u: float(dist.sf(u))) if upper else (lambda u: float(dist.cdf(u)))
    sign = 1.0 if upper else -1.0
    step = spread
    far = centre + sign * step
    for _ in range(200):
        if fn(far) <= tail:
            break
        step *= 2.0
        far = centre + sign * step
    else:
        raise DomainError("could not bracket the truncation quantile")
    near = centre
    for _ in range(200):
        mid = 0.5 * (near + far)
        if fn(mid) <= tail:
            far = mid
        else:
            near = mid
        if abs(far - near) <= 1e-12 * max(1.0, abs(far)):
            break
    return far


def tune_params(mech: LocalRandomizer, x1, x1p, ref: ReferenceDistribution, eps: float,
                n: int, budget: ErrorBudget, alpha: float = 1.0,
                chi: Optional[float] = None, grid_cap: int = DEFAULT_GRID_CAP,
                f_ref: Optional[ParDistribution] = None) -> FftParams:
    """Pick ``(c, s, w_in, h, w_out, N)`` for a relative error budget.

    The target scale is ``D_n = refined_divergence(eps, n)``. The band
    half-width is ``c = sigma^2 eta_main / (4 alpha^2 log n)`` with
    ``sigma^2 = gamma / chi^2`` (the un-thinned variance of ``l_0``). The
    truncation window is the exact support hull when it is bounded and
    otherwise a window with equal tail mass on both sides; ``h`` and
    ``w_out`` solve the Bernstein inequalities for ``eta_disc D_n`` and
    ``eta_alias D_n``.
    """
    _check_pair(mech, x1, x1p, ref)
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps!r}")
    n = int(n)
    gamma = gamma_for_reference(mech, ref)
    d_n = refined_divergence(mech, x1, x1p, ref, eps, n)
    if not d_n > 0:
        raise DomainError(f"target divergence must be positive, got {d_n!r}")
    sigma2 = gamma / chi ** 2 if chi is not None else variance_l0(mech, x1, x1p, ref)
    c = sigma2 * budget.eta_main / (4.0 * alpha ** 2 * math.log(n))
    if f_ref is None:
        f_ref = par_distribution(mech, x1, x1p, ref, eps, Law.REFERENCE)

    # truncation window (before grid snapping, which only widens it)
    lo_sup, hi_sup = f_ref.support
    if math.isfinite(lo_sup) and math.isfinite(hi_sup):
        lo_u, hi_u = lo_sup, hi_sup
    else:
        budget_t = budget.eta_trunc * d_n
        tau = -math.expm1(math.log1p(-min(budget_t, 0.5)) / (n - 1)) / gamma
        lo_u = lo_sup if math.isfinite(lo_sup) else _quantile(f_ref, tau / 2.0, upper=False)
        hi_u = hi_sup if math.isfinite(hi_sup) else _quantile(f_ref, tau / 2.0, upper=True)
    span = max(hi_u - lo_u, 1e-300)

    # discretization step; K is bounded by h (1 + gamma)/2 before the bins exist
    lam_disc = budget.eta_disc * d_n

    def e_disc(h):
        return _bernstein(c, n - 1, gamma * h * h / 4.0, h * (1.0 + gamma) / 2.0)

    h = _bisect_decreasing(lambda t: e_disc(t), lam_disc, 0.0, max(c, span))
    if not h > 0:
        raise InfeasibleBudgetError("no positive bin width meets the discretization budget",
                                    minimal_eta=None)

    def snapped(h_):
        j0 = math.floor(lo_u / h_ + 0.5)
        if (j0 - 0.5) * h_ >= lo_u:
            j0 -= 1
        j1 = math.floor(hi_u / h_ + 0.5)
        if (j1 + 0.5) * h_ < hi_u:
            j1 += 1
        return (j0 - 0.5) * h_, (j1 - j0 + 1) * h_

    s, w_in = snapped(h)

    # aliasing window from moment bounds of the truncated discretized summand
    q_now = float(f_ref.cdf(s)) + float(f_ref.sf(s + w_in))
    m2_bound = (math.sqrt(f_ref.second_moment / max(1.0 - q_now, 1e-300)) + h / 2.0) ** 2
    edge = max(abs(s), abs(s + w_in))
    v_alias = gamma * m2_bound
    k_alias = edge * (1.0 + gamma)
    lam = math.log(2.0 / (budget.eta_alias * d_n)) if budget.eta_alias * d_n < 2.0 else 0.0
    a = k_alias * lam / 3.0 + math.sqrt((k_alias * lam / 3.0) ** 2 + 2.0 * (n - 1) * v_alias * lam)
    w_out = max(2.0 * (a + 1.5 * h), w_in)
    need = w_out / h
    if not math.isfinite(need) or need > grid_cap:
        required = 1 << max(1, math.ceil(math.log2(need))) if math.isfinite(need) else None
        scale = need / grid_cap if math.isfinite(need) else math.inf
        raise InfeasibleBudgetError(
            f"budget needs a grid of about {need:.3g} points, above the cap {grid_cap}; "
            f"eta_main of about {budget.eta_main * scale:.3g} would fit",
            required_grid=required, minimal_eta=budget.eta_main * scale)
    grid = 1 << max(1, math.ceil(math.log2(need)))
    return FftParams(n, gamma, c, s, w_in, h, grid * h, grid, budget)


# ---------------------------------------------------------------------------
# Oracles


def exact_small_n(mech: KRR, x1, x1p, ref: ReferenceDistribution, eps: float, n: int) -> float:
    """Exact ``(1/(n gamma)) E[max(sum_{i<=M} l(Y_i), 0)]``, ``M ~ Bin(n, gamma)``.

    Sums over ``M`` and over the multinomial counts of the distinct values
    of ``l_eps`` under the reference.
    """
    if not isinstance(mech, KRR):
        raise DomainError("exact_small_n supports k-RR only")
    if int(n) != n or not 1 <= n <= 20:
        raise DomainError(f"exact_small_n needs 1 <= n <= 20, got {n!r}")
    _check_pair(mech, x1, x1p, ref)
    n = int(n)
    f_ref = par_distribution(mech, x1, x1p, ref, eps, Law.REFERENCE)
    vals, probs = f_ref.pmf
    gamma = gamma_for_reference(mech, ref)
    cats = len(vals)
    total = []
    for m in range(1, n + 1):
        w_m = math.comb(n, m) * gamma ** m * (1.0 - gamma) ** (n - m)
        if w_m == 0.0:
            continue
        inner = []
        for counts in _compositions(m, cats):
            s = math.fsum(c * v for c, v in zip(counts, vals))
            if s <= 0:
                continue
            coef = math.factorial(m)
            pr = 1.0
            for c, p in zip(counts, probs):
                coef //= math.factorial(c)
                pr *= p ** c
            inner.append(coef * pr * s)
        total.append(w_m * math.fsum(inner))
    return math.fsum(total) / (n * gamma)


def _compositions(m, parts):
    """All tuples of ``parts`` non-negative integers summing to ``m``."""
    for bars in itertools.combinations(range(m + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(m + parts - 1 - prev - 1)
        yield tuple(out)


def _gg_noise(beta, size, rng):
    """Standard generalized Gaussian noise, density proportional to exp(-|z|^beta)."""
    if beta == 2.0:
        return rng.standard_normal(size) * math.sqrt(0.5)
    if beta == 1.0:
        return rng.laplace(size=size)
    s = 1.0 / beta
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * rng.gamma(s, size=size) ** s


def _sample_outputs(mech, centre, size, rng):
    """Draw outputs of ``R_centre`` (``centre=None`` means the blanket)."""
    if isinstance(mech, KRR):
        if centre is None:
            return rng.integers(1, mech.k + 1, size=size)
        other = rng.integers(1, mech.k, size=size)
        other = other + (other >= centre)
        keep = rng.random(size) < mech.p
        return np.where(keep, centre, other)
    if centre is not None:
        return centre + mech.scale * _gg_noise(mech.beta, size, rng)
    lo, hi = mech.domain
    mid = mech.midpoint
    out = np.empty(size)
    filled = 0
    while filled < size:
        k = max(2 * (size - filled), 1024)
        d = mech.scale * np.abs(_gg_noise(mech.beta, k, rng))
        ok = d >= mid - lo  # right half: distance from lo beyond the midpoint
        d = d[ok][: size - filled]
        sign = rng.random(d.size) < 0.5
        out[filled:filled + d.size] = np.where(sign, lo + d, hi - d)
        filled += d.size
    return out


def monte_carlo_divergence(mech: LocalRandomizer, x1, x1p, ref: ReferenceDistribution,
                           eps: float, n: int, samples: int = 10 ** 7,
                           seed: int = 20240101, chunk: int = 200_000) -> tuple:
    """Monte-Carlo estimate of the probability-difference form and its std error.

    Both hypotheses share the same draw of ``S`` (common random numbers) so
    the paired difference has small variance.
    """
    _check_pair(mech, x1, x1p, ref)
    rng = np.random.default_rng(seed)
    gamma = gamma_for_reference(mech, ref)
    e_eps = math.exp(eps)
    ref_centre = ref.x if isinstance(ref, Local) else None
    total = 0.0
    total_sq = 0.0
    done = 0
    if isinstance(mech, KRR):
        f_ref = par_distribution(mech, x1, x1p, ref, eps, Law.REFERENCE)
        vals, probs = f_ref.pmf
    while done < samples:
        b = min(chunk, samples - done)
        m = rng.binomial(n - 1, gamma, size=b)
        if isinstance(mech, KRR):
            counts = rng.multinomial(m, probs)
            s = counts @ vals
        else:
            ys = _sample_outputs(mech, ref_centre, int(m.sum()), rng)
            ls = par_value(mech, x1, x1p, ref, eps, ys)
            owner = np.repeat(np.arange(b), m)
            s = np.bincount(owner, weights=ls, minlength=b)
        l1 = np.asarray(par_value(mech, x1, x1p, ref, eps, _sample_outputs(mech, x1, b, rng)))
        l2 = np.asarray(par_value(mech, x1, x1p, ref, eps, _sample_outputs(mech, x1p, b, rng)))
        diff = (l1 + s > 0).astype(float) - e_eps * (l2 + s > 0).astype(float)
        total += math.fsum(diff)
        total_sq += math.fsum(diff * diff)
        done += b
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return mean, math.sqrt(var / samples)


# ---------------------------------------------------------------------------
# Band over n


@dataclasses.dataclass(frozen=True)
class BandRecord:
    n: int
    eps: float
    upper: DivergenceBounds
    lower: DivergenceBounds
    alpha_over_n: float
    wall_ms: float


def _band_one(mech, alpha, n, budget, idx, grid_cap):
    t0 = time.perf_counter()
    eps = epsilon_curve_refined(mech, alpha, n, pair=idx.pair_lo, ref=Blanket(), chi=idx.chi_lo)
    x1, x1p = idx.pair_lo
    p_up = tune_params(mech, x1, x1p, Blanket(), eps, n, budget, alpha, idx.chi_lo, grid_cap)
    upper = divergence_bounds(mech, x1, x1p, Blanket(), eps, n, p_up)
    y1, y1p = idx.pair_up
    ref_low = Local(idx.ref_up)
    p_lo = tune_params(mech, y1, y1p, ref_low, eps, n, budget, alpha, idx.chi_up, grid_cap)
    lower = divergence_bounds(mech, y1, y1p, ref_low, eps, n, p_lo)
    return BandRecord(n, eps, upper, lower, alpha / n, 1e3 * (time.perf_counter() - t0))


def certified_band(mech: LocalRandomizer, alpha: float, n_grid: Sequence[int],
                   budget: ErrorBudget, threads: Optional[int] = None,
                   grid_cap: int = DEFAULT_GRID_CAP) -> list:
    """Certified upper (blanket reference) and lower (worst local reference) deltas.

    For each ``n`` the privacy level is the refined curve at the lower
    shuffle index. Results come back in the order of ``n_grid``.
    """
    n_grid = [int(v) for v in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise DomainError("n_grid must be strictly increasing")
    idx = worst_case_indices(mech)
    if threads is None:
        threads = int(os.environ.get("SHUFFLE_ACCT_THREADS", "1"))
    if threads <= 1 or len(n_grid) <= 1:
        return [_band_one(mech, alpha, n, budget, idx, grid_cap) for n in n_grid]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda n: _band_one(mech, alpha, n, budget, idx, grid_cap), n_grid))
