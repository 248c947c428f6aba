"""Simulation and comparison engine for dynamically allocated emission allowances.

A regulator hands out tradable allowances to N firms over a horizon T;
firms abate, trade, and face a quadratic terminal penalty on their bank.
This package provides the closed-form firm best responses, the clearing
equilibrium price (with finite market depth or frictionless), the
regulator's optimal dynamic allocation policy, three benchmark policies
(static lump-sum, pure tax, MSR-like mean reversion), Monte Carlo
simulation of every trajectory quantity, and cost comparisons across
policies on shared shocks.

Units throughout: tons, years, euros.
"""

from .errors import (
    ClearingError,
    ConfigError,
    DiagnosticError,
    DomainError,
    InfeasibleObservationError,
    NonMartingalePriceError,
    PermitSimError,
    SingularityError,
    UnsupportedConfigurationError,
    UnsupportedInputError,
)
from .params import (
    FRICTIONLESS,
    Aggregates,
    FirmParams,
    MarketParams,
    compute_aggregates,
    ell,
    f_coeff,
    g_coeff,
    msr_F,
    msr_z,
    pi_coeff,
)
from .stochastic import (
    NoisePaths,
    PathEnsemble,
    TimeGrid,
    closing_martingale,
    coarsen_noise,
    generate_noise,
    left_integral,
    martingale_drift_stat,
    realized_qv,
)
from .firm import (
    AllocationView,
    FirmControls,
    best_response_frictionless,
    best_response_frictions,
    cost_functional,
    expected_terminal_bank,
    foc_residuals,
)
from .equilibrium import (
    CLEARING_TOL,
    EquilibriumPath,
    equilibrium_frictionless,
    equilibrium_frictions,
    feedback_price_frictionless,
)
from .policies import (
    DEFAULT_MSR_DELTA,
    ComparisonResult,
    CostReport,
    PolicyKind,
    PolicySpec,
    build_policy,
    check_gamma_optimality,
    compare_policies,
    custom_martingale_policy,
    estimate_eta_from_qv,
    large_n_limit_delta,
    msr_policy,
    optimal_dynamic_policy,
    simulate_policy_paths,
    static_policy,
    static_price_paths,
    tax_policy,
    tracking_gamma,
)

__all__ = [
    "AllocationView",
    "Aggregates",
    "CLEARING_TOL",
    "ClearingError",
    "ComparisonResult",
    "ConfigError",
    "CostReport",
    "DEFAULT_MSR_DELTA",
    "DiagnosticError",
    "DomainError",
    "EquilibriumPath",
    "FRICTIONLESS",
    "FirmControls",
    "FirmParams",
    "InfeasibleObservationError",
    "MarketParams",
    "NoisePaths",
    "NonMartingalePriceError",
    "PathEnsemble",
    "PermitSimError",
    "PolicyKind",
    "PolicySpec",
    "SingularityError",
    "TimeGrid",
    "UnsupportedConfigurationError",
    "UnsupportedInputError",
    "best_response_frictionless",
    "best_response_frictions",
    "build_policy",
    "check_gamma_optimality",
    "closing_martingale",
    "coarsen_noise",
    "compare_policies",
    "compute_aggregates",
    "cost_functional",
    "custom_martingale_policy",
    "ell",
    "equilibrium_frictionless",
    "equilibrium_frictions",
    "estimate_eta_from_qv",
    "expected_terminal_bank",
    "f_coeff",
    "feedback_price_frictionless",
    "foc_residuals",
    "g_coeff",
    "generate_noise",
    "large_n_limit_delta",
    "left_integral",
    "martingale_drift_stat",
    "msr_F",
    "msr_policy",
    "msr_z",
    "optimal_dynamic_policy",
    "pi_coeff",
    "realized_qv",
    "simulate_policy_paths",
    "static_policy",
    "static_price_paths",
    "tax_policy",
    "tracking_gamma",
]

__version__ = "0.1.0"
