"""Posterior deliverables: predictive log-hazard draws for a new study,
survival-rate and median-survival summaries, and Bayesian success probabilities.

Quantiles throughout are type-7 (linear interpolation on sorted draws, the
numpy default), so reimplementations can match digit for digit. Summaries of
nonlinear functionals (survival rates, median survival) are computed per
retained draw and then summarized, never from summaries of the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .mcmc import PosteriorSample
from .survival import IntervalGrid

__all__ = [
    "QuantitySummary",
    "SummaryTable",
    "map_prior_draws",
    "map_prior_from_sample",
    "survival_summary",
    "survival_curve_points",
    "median_survival_draws",
    "success_probability",
]


@dataclass(frozen=True)
class QuantitySummary:
    median: float
    lower: float
    upper: float
    mean: float
    sd: float


@dataclass(frozen=True)
class SummaryTable:
    """Per-quantity posterior summaries at a symmetric interval level."""

    rows: dict[str, QuantitySummary]
    prob_level: float = 0.95

    def __post_init__(self):
        for name, q in self.rows.items():
            if not q.lower <= q.median <= q.upper:
                raise ValueError(
                    f"{name}: quantile ordering violated "
                    f"({q.lower}, {q.median}, {q.upper})"
                )

    def __getitem__(self, name: str) -> QuantitySummary:
        return self.rows[name]

    def to_json_dict(self) -> dict:
        return {
            "prob_level": self.prob_level,
            "quantities": {
                name: {
                    "median": q.median,
                    "lower": q.lower,
                    "upper": q.upper,
                    "mean": q.mean,
                    "sd": q.sd,
                }
                for name, q in self.rows.items()
            },
        }

    def to_csv_rows(self) -> list[list]:
        out = [["quantity", "median", "lower", "upper", "mean", "sd"]]
        for name, q in self.rows.items():
            out.append([name, q.median, q.lower, q.upper, q.mean, q.sd])
        return out


def _summarize(draws: np.ndarray, prob_level: float) -> QuantitySummary:
    a = (1.0 - prob_level) / 2.0
    lo, med, hi = np.quantile(draws, [a, 0.5, 1.0 - a])
    return QuantitySummary(
        median=float(med),
        lower=float(lo),
        upper=float(hi),
        mean=float(draws.mean()),
        sd=float(draws.std(ddof=1)) if draws.size > 1 else 0.0,
    )


def map_prior_draws(
    mu_draws: np.ndarray,
    tau_draws: np.ndarray,
    seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Predictive log-hazard draws for a new exchangeable study.

    Per retained hyperparameter draw, theta_star[k] = mu[k] + eps[k] with
    eps[k] ~ N(0, tau[k]^2) drawn fresh, so theta_star is exchangeable with
    the study-level parameters by construction. Inputs are (n_draws, K)
    matrices of interval-level means and between-study sds.
    """
    mu = np.asarray(mu_draws, dtype=float)
    tau = np.asarray(tau_draws, dtype=float)
    if mu.shape != tau.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape} vs tau {tau.shape}")
    if np.any(tau < 0):
        raise ValueError("between-study sds must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return mu + tau * rng.standard_normal(mu.shape)


def map_prior_from_sample(sample: PosteriorSample, seed: int = 0) -> np.ndarray:
    """Predictive draws from a fitted posterior of historical studies."""
    _, mu = sample.group("mu_ex")
    _, tau = sample.group("tau_study")
    return map_prior_draws(mu, tau, seed)


def _cumulative_hazard_at(
    lam: np.ndarray, grid: IntervalGrid, t: float
) -> np.ndarray:
    bounds = np.asarray(grid.boundaries)
    overlap = np.clip(np.minimum(bounds[1:], t) - bounds[:-1], 0.0, None)
    cum = lam @ overlap
    if t > bounds[-1]:
        cum = cum + (t - bounds[-1]) * lam[:, -1]
    return cum


def median_survival_draws(theta_draws: np.ndarray, grid: IntervalGrid) -> np.ndarray:
    """Per-draw median survival time (constant-hazard tail beyond the grid)."""
    lam = np.exp(np.asarray(theta_draws, dtype=float))
    bounds = np.asarray(grid.boundaries)
    target = math.log(2.0)
    cum = np.cumsum(lam * grid.lengths, axis=1)
    exceeds = cum >= target
    first = exceeds.argmax(axis=1)
    inside = exceeds.any(axis=1)
    prev = np.where(first > 0, np.take_along_axis(
        cum, np.maximum(first - 1, 0)[:, None], axis=1
    )[:, 0], 0.0)
    lam_at = np.take_along_axis(lam, first[:, None], axis=1)[:, 0]
    med = bounds[first] + (target - prev) / lam_at
    tail = bounds[-1] + (target - cum[:, -1]) / lam[:, -1]
    return np.where(inside, med, tail)


def survival_summary(
    theta_draws: np.ndarray,
    grid: IntervalGrid,
    times: Sequence[float],
    prob_level: float = 0.95,
) -> SummaryTable:
    """Summaries of survival probabilities at given times and of the
    per-draw median survival, across log-hazard draws (n_draws, K)."""
    theta = np.atleast_2d(np.asarray(theta_draws, dtype=float))
    if theta.shape[1] != grid.n_intervals:
        raise ValueError(
            f"draw matrix has {theta.shape[1]} columns, grid has "
            f"{grid.n_intervals} intervals"
        )
    lam = np.exp(theta)
    rows: dict[str, QuantitySummary] = {}
    for t in times:
        if t < 0:
            raise ValueError(f"time must be nonnegative, got {t}")
        surv = np.exp(-_cumulative_hazard_at(lam, grid, float(t)))
        rows[f"survival[{t:g}]"] = _summarize(surv, prob_level)
    rows["median_survival"] = _summarize(
        median_survival_draws(theta, grid), prob_level
    )
    return SummaryTable(rows=rows, prob_level=prob_level)


def survival_curve_points(
    theta_draws: np.ndarray,
    grid: IntervalGrid,
    times: Sequence[float],
    prob_level: float = 0.95,
) -> dict[str, np.ndarray]:
    """Plot-data arrays: pointwise survival median and interval over a time grid."""
    lam = np.exp(np.atleast_2d(np.asarray(theta_draws, dtype=float)))
    a = (1.0 - prob_level) / 2.0
    med, lo, hi = [], [], []
    for t in times:
        surv = np.exp(-_cumulative_hazard_at(lam, grid, float(t)))
        ql, qm, qh = np.quantile(surv, [a, 0.5, 1.0 - a])
        med.append(qm)
        lo.append(ql)
        hi.append(qh)
    return {
        "time": np.asarray(times, dtype=float),
        "median": np.array(med),
        "lower": np.array(lo),
        "upper": np.array(hi),
    }


def success_probability(beta_draws: np.ndarray, cutoff: float = 0.0) -> float:
    """Posterior mass below the cutoff, P(beta < cutoff | data)."""
    draws = np.asarray(beta_draws, dtype=float).reshape(-1)
    if draws.size == 0:
        raise ValueError("need at least one draw")
    return float(np.mean(draws < cutoff))
