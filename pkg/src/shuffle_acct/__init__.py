"""Shuffle-model differential privacy accountant.

Shuffle indices, asymptotic (eps_n, alpha/n) curves and certified FFT
bounds on the blanket divergence for k-ary randomized response and the
generalized Gaussian local randomizer.
"""

from shuffle_acct.accountant import (
    BandRecord, CenteredPmf, DivergenceBounds, ErrorBudget, ErrorTerms, FftParams,
    TruncatedMoments, calculate_main_term, calculate_pmf, certified_band,
    divergence_bounds, error_bounds, exact_small_n, monte_carlo_divergence,
    truncated_moments, truncation_error, tune_params,
)
from shuffle_acct.asymptotics import (
    AsymptoticParams, MomentSummary, delta_band, epsilon_curve_closed_form,
    epsilon_curve_refined, leading_divergence, moment_summary, refined_divergence,
)
from shuffle_acct.errors import (
    AccountantError, BracketError, ConvergenceError, DomainError, InfeasibleBudgetError,
    NumericalError, PieceDetectionError,
)
from shuffle_acct.mechanisms import (
    KRR, Blanket, GenGaussian, Law, Local, ParDistribution, blanket_density, blanket_mass,
    density, mechanism_from_json, mechanism_to_json, par_distribution, par_moments,
    par_value, variance_l0,
)
from shuffle_acct.shuffle_index import (
    ShuffleIndices, chi_lo_pair, chi_up_pair, worst_case_indices,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
