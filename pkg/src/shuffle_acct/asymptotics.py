"""Asymptotic blanket divergence and the (eps_n, delta_n = alpha/n) curves."""

from __future__ import annotations

import dataclasses
import math
import warnings
from typing import Optional

from shuffle_acct import numerics
from shuffle_acct.errors import BracketError, DomainError
from shuffle_acct.mechanisms import (
    Blanket, Law, Local, LocalRandomizer, ReferenceDistribution, _check_pair,
    blanket_mass, par_moments,
)
from shuffle_acct.shuffle_index import worst_case_indices

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclasses.dataclass(frozen=True)
class AsymptoticParams:
    n: int
    alpha: float
    chi: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"n must be an integer >= 2, got {self.n!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainError(f"alpha must be positive, got {self.alpha!r}")
        if not (self.chi > 0 and math.isfinite(self.chi)):
            raise DomainError(f"chi must be positive, got {self.chi!r}")


@dataclasses.dataclass(frozen=True)
class MomentSummary:
    """Moments of the thinned variable ``Z = B * l_eps(Y)``, ``B ~ Bernoulli(gamma)``."""

    mu_eps: float
    sigma_eps: float
    gamma: float
    kappa3: Optional[float] = None


def leading_divergence(eps: float, n: int, chi: float) -> float:
    """Leading term ``phi(chi u sqrt n) / (chi^3 u^2 n^{3/2})`` with ``u = e^eps - 1``."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps!r}")
    u = math.expm1(eps)
    return numerics.std_normal_pdf(chi * u * math.sqrt(n)) / (chi ** 3 * u * u * n ** 1.5)


def epsilon_curve_closed_form(params: AsymptoticParams) -> float:
    """Closed-form root of ``leading_divergence(eps; n, chi) = alpha / n``."""
    n, alpha, chi = params.n, params.alpha, params.chi
    z = math.sqrt(n) / (2.0 * alpha * chi * _SQRT_2PI)
    w = numerics.lambert_w0(z)
    return math.log1p(math.sqrt(2.0 * w / (chi * chi * n)))


def gamma_for_reference(mech: LocalRandomizer, ref: ReferenceDistribution) -> float:
    """Blanket mass for the blanket reference; 1 for a local reference."""
    return blanket_mass(mech) if isinstance(ref, Blanket) else 1.0


def moment_summary(mech: LocalRandomizer, x1, x1p, ref: ReferenceDistribution,
                   eps: float, with_kappa3: bool = False) -> MomentSummary:
    _check_pair(mech, x1, x1p, ref)
    gamma = gamma_for_reference(mech, ref)
    m1_exact = -math.expm1(eps)
    _, m2, m3 = par_moments(mech, x1, x1p, ref, eps, Law.REFERENCE)
    mu = gamma * m1_exact
    var = gamma * m2 - mu * mu
    if not var > 0:
        raise DomainError("thinned privacy amplification variable has zero variance")
    kappa3 = None
    if with_kappa3:
        ez2 = gamma * m2
        ez3 = gamma * m3
        kappa3 = ez3 - 3.0 * mu * ez2 + 2.0 * mu ** 3
    return MomentSummary(mu, math.sqrt(var), gamma, kappa3)


def _refined_from_moments(ms: MomentSummary, n: int, with_kappa3: bool) -> float:
    mu, sigma, gamma = ms.mu_eps, ms.sigma_eps, ms.gamma
    root = math.sqrt(n - 1)
    t = -mu * root / sigma
    pdf = numerics.std_normal_pdf(t)
    val = mu * numerics.std_normal_sf(t) + (sigma * sigma + mu * mu) / (sigma * root) * pdf
    if with_kappa3:
        val -= ms.kappa3 * mu / (6.0 * sigma ** 3 * root) * pdf * (t * t - 1.0)
    return val / gamma


def refined_divergence(mech: LocalRandomizer, x1, x1p, ref: ReferenceDistribution,
                       eps: float, n: int, with_kappa3: bool = False) -> float:
    """Two-term expansion of the blanket divergence at finite ``n``.

    ``(1/gamma) [mu (1 - Phi(t)) + (sigma^2 + mu^2) / (sigma sqrt(n-1)) phi(t)]``
    with ``t = -mu sqrt(n-1) / sigma``. The third-cumulant correction is
    added when ``with_kappa3`` is set.
    """
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps!r}")
    if int(n) != n or n < 2:
        raise DomainError(f"n must be an integer >= 2, got {n!r}")
    ms = moment_summary(mech, x1, x1p, ref, eps, with_kappa3)
    return _refined_from_moments(ms, int(n), with_kappa3)


def _default_target(mech, pair, ref):
    idx = worst_case_indices(mech)
    if ref is None:
        ref = Blanket()
    if pair is None:
        if isinstance(ref, Blanket):
            pair = idx.pair_lo
        else:
            pair = idx.pair_up
    chi = idx.chi_lo if isinstance(ref, Blanket) else idx.chi_up
    return pair, ref, chi


def epsilon_curve_refined(mech: LocalRandomizer, alpha: float, n: int, pair=None,
                          ref: Optional[ReferenceDistribution] = None,
                          with_kappa3: bool = False, chi: Optional[float] = None) -> float:
    """Solve ``refined_divergence(eps, n) = alpha / n`` by bisection.

    Defaults to the worst-case pair with the blanket reference. The bracket
    is ``[eps_cf / 10, 10 eps_cf]`` around the closed-form value for the
    matching shuffle index. Bisection runs on ``log eps``.
    """
    if pair is None or chi is None:
        dpair, ref, dchi = _default_target(mech, pair, ref)
        pair = pair if pair is not None else dpair
        chi = chi if chi is not None else dchi
    elif ref is None:
        ref = Blanket()
    x1, x1p = pair
    eps_cf = epsilon_curve_closed_form(AsymptoticParams(int(n), alpha, chi))
    target = alpha / n

    def g(log_eps):
        return refined_divergence(mech, x1, x1p, ref, math.exp(log_eps), n, with_kappa3) / target - 1.0

    a, b = math.log(eps_cf / 10.0), math.log(eps_cf * 10.0)
    ga, gb = g(a), g(b)
    if ga * gb > 0:
        raise BracketError(
            f"refined divergence minus alpha/n has no sign change on "
            f"[{math.exp(a)}, {math.exp(b)}]: values {ga * target}, {gb * target}",
            math.exp(a), math.exp(b), ga * target, gb * target)
    log_eps = numerics.find_root_bisect(g, a, b, tol=1e-12)
    eps = math.exp(log_eps)
    ms = moment_summary(mech, x1, x1p, ref, eps)
    t = -ms.mu_eps * math.sqrt(n - 1) / ms.sigma_eps
    if t < 1.0:
        warnings.warn(f"refined expansion used outside its regime (t_n = {t:.3g} < 1)",
                      RuntimeWarning, stacklevel=2)
    return eps


def delta_band(mech: LocalRandomizer, alpha: float, n: int,
               with_kappa3: bool = False) -> tuple:
    """``(eps_n(alpha, chi_up), eps_n(alpha, chi_lo))`` from the refined solver.

    The lower curve uses the worst local reference (gamma = 1), the upper
    curve the blanket reference at the worst blanket pair.
    """
    idx = worst_case_indices(mech)
    upper = epsilon_curve_refined(mech, alpha, n, pair=idx.pair_lo, ref=Blanket(),
                                  with_kappa3=with_kappa3, chi=idx.chi_lo)
    lower = epsilon_curve_refined(mech, alpha, n, pair=idx.pair_up, ref=Local(idx.ref_up),
                                  with_kappa3=with_kappa3, chi=idx.chi_up)
    return min(lower, upper), max(lower, upper)
