"""Collaborative analysis of paired and partially paired A/B tests."""

from .core import (
    BalanceDiagnostics,
    PairedDataset,
    UnitRecord,
    balance_diagnostics,
    validate_dataset,
)
from .estimators import (
    EfficiencyReport,
    EstimateReport,
    analyze,
    blue_combine,
    collaborative_estimate,
    confidence_interval,
    paired_estimate,
    relative_efficiency,
    single_estimate,
)
from .gls import GlsSolution, brute_force_gls, gls_asymptotic_variance, gls_partial
from .varcomp import (
    GroupVariances,
    VarianceComponents,
    estimate_components,
    group_sample_variances,
    pooled_moments,
    solve_components,
)

__version__ = "0.1.0"
