"""Shuffle indices and the tightness check.

For a pair of neighbouring inputs the lower index is

    chi_lo(x1, x1') = sqrt(gamma / Var_BG(l_0))

and the upper index is ``inf_x sqrt(1 / Var_{R_x}(l_0))`` with the local
output distribution ``R_x`` as reference. Worst-case versions minimize over
pairs.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
import math

import numpy as np

from shuffle_acct import numerics
from shuffle_acct.errors import ConvergenceError, DomainError
from shuffle_acct.mechanisms import (
    KRR, Blanket, GenGaussian, Local, LocalRandomizer, _check_pair, blanket_density,
    blanket_mass, density, variance_l0,
)


@dataclasses.dataclass(frozen=True)
class ShuffleIndices:
    chi_lo: float
    chi_up: float
    pair_lo: tuple
    pair_up: tuple
    ref_up: float
    tight: bool

    @property
    def ratio(self) -> float:
        return self.chi_lo / self.chi_up


def chi_lo_pair(mech: LocalRandomizer, x1, x1p) -> float:
    _check_pair(mech, x1, x1p)
    return math.sqrt(blanket_mass(mech) / variance_l0(mech, x1, x1p, Blanket()))


def _local_variance(mech, x1, x1p, x) -> float:
    return variance_l0(mech, x1, x1p, Local(x))


def _golden_refine(func, centre, lo, hi, radius, tol):
    a, b = max(lo, centre - radius), min(hi, centre + radius)
    if b - a <= tol:
        return centre, func(centre)
    x, fx = numerics.golden_section_min(func, a, b, tol=tol)
    fc = func(centre)
    return (x, fx) if fx <= fc else (centre, fc)


def chi_up_pair(mech: LocalRandomizer, x1, x1p, grid: int = 21, tol: float = 1e-6):
    """Upper index of a pair and the input ``x`` attaining the infimum.

    For k-RR the closed forms are used. For the generalized Gaussian the
    variance depends on ``x`` only through the offsets ``(x1-x)/c`` and
    ``(x1'-x)/c``; the supremum of the variance over ``x`` in the domain is
    located on a grid and refined by golden section.
    """
    _check_pair(mech, x1, x1p)
    if isinstance(mech, KRR):
        p, q = mech.p, mech.q
        if mech.k >= 3:
            x_star = next(x for x in mech.inputs if x not in (x1, x1p))
            return math.sqrt(q / (2.0 * (p - q) ** 2)), x_star
        return 1.0 / ((p - q) * math.sqrt(1.0 / p + 1.0 / q)), x1

    lo, hi = mech.domain
    xs = np.linspace(lo, hi, grid)
    neg_var = lambda x: -_local_variance(mech, x1, x1p, min(max(x, lo), hi))  # noqa: E731
    vals = [neg_var(x) for x in xs]
    i = int(np.argmin(vals))
    x_star, best = _golden_refine(neg_var, xs[i], lo, hi, xs[1] - xs[0], tol)
    if not best < 0:
        raise ConvergenceError("local variance of l_0 is not positive", best=(x_star, -best))
    return 1.0 / math.sqrt(-best), float(x_star)


def _tight_gg(mech: GenGaussian, pair, x_star, points: int = 1000, rtol: float = 1e-6) -> bool:
    x1, x1p = pair
    lo, hi = mech.domain
    span = 6.0 * mech.scale
    ys = np.linspace(lo - span, hi + span, points)
    disagree = np.abs(density(mech, x1, ys) - density(mech, x1p, ys)) > 0
    ys = ys[disagree]
    if ys.size == 0:
        return True
    lhs = density(mech, x_star, ys)
    rhs = blanket_mass(mech) * blanket_density(mech, ys)
    return bool(np.all(np.abs(lhs - rhs) <= rtol * np.maximum(np.abs(rhs), 1e-300)))


def _refine_pair(func, pair, lo, hi, step, tol, rounds=4):
    """Coordinate-wise golden section on a two-input objective."""
    a, b = pair
    best = func(a, b)
    for _ in range(rounds):
        prev = best
        a, fa = _golden_refine(lambda t: func(t, b), a, lo, hi, step, tol)
        b, fb = _golden_refine(lambda t: func(a, t), b, lo, hi, step, tol)
        best = min(fa, fb)
        if prev - best <= tol * max(1.0, abs(best)):
            break
    return (a, b), best


def worst_case_indices(mech: LocalRandomizer, grid: int = 21, tol: float = 1e-6) -> ShuffleIndices:
    """Worst-case (over pairs) lower and upper shuffle indices.

    k-RR indices do not depend on the pair and use closed forms; tightness
    holds exactly when ``k >= 3``. For the generalized Gaussian, the pair
    search runs on a ``grid x grid`` lattice of the domain (which contains the
    endpoint pair) followed by coordinate-wise golden-section refinement.
    Results are memoized per (mechanism, grid, tol).
    """
    return _worst_case_cached(mech, int(grid), float(tol))


@functools.lru_cache(maxsize=64)
def _worst_case_cached(mech, grid, tol) -> ShuffleIndices:
    if isinstance(mech, KRR):
        pair = (1, 2)
        chi_lo = chi_lo_pair(mech, *pair)
        chi_up, x_star = chi_up_pair(mech, *pair)
        return ShuffleIndices(chi_lo, chi_up, pair, pair, x_star, mech.k >= 3)
    if not isinstance(mech, GenGaussian):
        raise DomainError(f"unsupported mechanism {mech!r}")

    lo, hi = mech.domain
    xs = np.linspace(lo, hi, grid)
    step = xs[1] - xs[0]
    sep = 1e-9 * (hi - lo)

    # the variance is symmetric in (x1, x1'), so x1 < x1' suffices
    pairs = list(itertools.combinations(range(grid), 2))

    def chi_lo_fn(a, b):
        if abs(a - b) <= sep:
            return math.inf
        return chi_lo_pair(mech, min(max(a, lo), hi), min(max(b, lo), hi))

    lo_vals = [chi_lo_fn(xs[i], xs[j]) for i, j in pairs]
    i, j = pairs[int(np.argmin(lo_vals))]
    pair_lo, chi_lo = _refine_pair(chi_lo_fn, (xs[i], xs[j]), lo, hi, step, tol)

    # chi_up: maximize the local variance over (x1, x1', x) on the lattice
    var_grid = {}
    for i, j in pairs:
        for m, x in enumerate(xs):
            var_grid[(i, j, m)] = _local_variance(mech, xs[i], xs[j], x)
    (i, j, m) = max(var_grid, key=var_grid.get)

    # joint coordinate-wise refinement of the triple (x1, x1', x)
    point = [xs[i], xs[j], xs[m]]

    def neg_var(v):
        a, b, x = (min(max(t, lo), hi) for t in v)
        if abs(a - b) <= sep:
            return math.inf
        return -_local_variance(mech, a, b, x)

    best = neg_var(point)
    for _ in range(6):
        prev = best
        for axis in range(3):
            def along(t, axis=axis):
                trial = list(point)
                trial[axis] = t
                return neg_var(trial)
            point[axis], best = _golden_refine(along, point[axis], lo, hi, step, tol)
        if prev - best <= tol * abs(best):
            break
    pair_up = (point[0], point[1])
    x_star = point[2]
    chi_up = 1.0 / math.sqrt(-best)
    pair_lo = tuple(float(v) for v in sorted(pair_lo))
    pair_up = tuple(float(v) for v in sorted(pair_up))
    tight = _tight_gg(mech, pair_up, x_star)
    if chi_up < chi_lo - 1e-9:
        # chi_up >= chi_lo always holds; a violation means the search failed
        raise ConvergenceError(
            f"index search violated chi_up >= chi_lo ({chi_up} < {chi_lo}); "
            f"try a finer grid than {grid}",
            best=ShuffleIndices(chi_lo, chi_up, pair_lo, pair_up, x_star, tight))
    return ShuffleIndices(float(chi_lo), float(chi_up), pair_lo, pair_up, float(x_star), tight)
