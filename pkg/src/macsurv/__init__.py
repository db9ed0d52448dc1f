"""Bayesian borrowing of historical control data for time-to-event endpoints.

Hierarchical piecewise-exponential meta-analysis (MAP/MAC) with robust
EX/NEX mixture priors, a built-in adaptive MCMC sampler, prior
effective-number-of-events computation, and a frequentist operating
characteristics simulator for trial design.
"""

from .survival import (
    IntervalGrid,
    KmIntervalRecord,
    PiecewiseHazard,
    ObservationRow,
    exposure_from_counts,
    survival_at,
    median_survival,
    aggregate_dataset,
)
from .data import (
    Dataset,
    DataFormatError,
    read_km_counts,
    read_observations,
    write_observations,
    grid_from_json,
    grid_to_json,
)
from .model import MacModel, ParameterState, PriorConfig
from .mcmc import PosteriorSample, SamplerConfig, SamplerError, run, update_z
from .diagnostics import QuantityDiagnostics, bulk_ess, diagnose, split_rhat
from .summaries import (
    QuantitySummary,
    SummaryTable,
    map_prior_draws,
    map_prior_from_sample,
    median_survival_draws,
    success_probability,
    survival_curve_points,
    survival_summary,
)
from .ene import MixtureFitError, NormalMixture, ess_elir, fit_mixture, total_ene

__version__ = "0.1.0"

__all__ = [
    "IntervalGrid", "KmIntervalRecord", "PiecewiseHazard", "ObservationRow",
    "exposure_from_counts", "survival_at", "median_survival", "aggregate_dataset",
    "Dataset", "DataFormatError", "read_km_counts", "read_observations",
    "write_observations", "grid_from_json", "grid_to_json",
    "MacModel", "ParameterState", "PriorConfig",
    "PosteriorSample", "SamplerConfig", "SamplerError", "run", "update_z",
    "QuantityDiagnostics", "bulk_ess", "diagnose", "split_rhat",
    "QuantitySummary", "SummaryTable", "map_prior_draws", "map_prior_from_sample",
    "median_survival_draws", "success_probability", "survival_curve_points",
    "survival_summary",
    "MixtureFitError", "NormalMixture", "ess_elir", "fit_mixture", "total_ene",
    "__version__",
]
