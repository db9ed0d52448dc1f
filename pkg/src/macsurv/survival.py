"""Piecewise-exponential time axis and hazard math.

The time axis is split into contiguous intervals (I_{k-1}, I_k] with I_0 = 0.
A hazard curve is constant within each interval; beyond the last boundary the
final interval's hazard is carried forward (constant-hazard tail), so survival
quantities such as the median are always finite when all rates are positive.

Also provides the reconstruction of per-interval event/exposure tables from
published at-risk/death/censored counts (the standard actuarial convention:
constant censoring within an interval, deaths at mid-interval).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "IntervalGrid",
    "KmIntervalRecord",
    "PiecewiseHazard",
    "ObservationRow",
    "exposure_from_counts",
    "survival_at",
    "median_survival",
    "aggregate_dataset",
]


@dataclass(frozen=True)
class IntervalGrid:
    """Partition of the time axis into K intervals (boundaries include the leading 0).

    Parameters
    ----------
    boundaries : sequence of float
        Strictly increasing interval edges, starting at 0. K = len(boundaries) - 1.
    unit : str
        Time unit shared by every quantity in a run (e.g. "years", "days").
        Never converted implicitly.
    """

    boundaries: tuple[float, ...]
    unit: str = "years"

    def __init__(self, boundaries: Sequence[float], unit: str = "years"):
        bounds = tuple(float(b) for b in boundaries)
        if len(bounds) < 2:
            raise ValueError("grid needs at least one interval (two boundaries)")
        if bounds[0] != 0.0:
            raise ValueError(f"first boundary must be 0, got {bounds[0]}")
        if any(b1 >= b2 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", bounds)
        object.__setattr__(self, "unit", unit)

    @property
    def n_intervals(self) -> int:
        return len(self.boundaries) - 1

    @property
    def lengths(self) -> np.ndarray:
        """Interval lengths L_k, shape (K,)."""
        return np.diff(np.asarray(self.boundaries))

    def length(self, k: int) -> float:
        """Length of interval k (0-based)."""
        self._check_index(k)
        return self.boundaries[k + 1] - self.boundaries[k]

    def _check_index(self, k: int) -> None:
        if not 0 <= k < self.n_intervals:
            raise ValueError(
                f"interval index {k} out of range for grid with {self.n_intervals} intervals"
            )


@dataclass(frozen=True)
class KmIntervalRecord:
    """At-risk/death/censored counts for one study and one interval.

    `interval` is the 0-based interval index into the grid.
    """

    study: str
    interval: int
    n_at_risk: int
    deaths: int
    censored: int

    def __post_init__(self):
        for name in ("n_at_risk", "deaths", "censored"):
            v = getattr(self, name)
            if v < 0 or v != int(v):
                raise ValueError(f"{name} must be a nonnegative integer, got {v}")
        if self.deaths + self.censored > self.n_at_risk:
            raise ValueError(
                f"deaths + censored ({self.deaths + self.censored}) exceeds "
                f"n_at_risk ({self.n_at_risk}) for study {self.study!r}, "
                f"interval {self.interval}"
            )


@dataclass(frozen=True)
class PiecewiseHazard:
    """Constant hazard per grid interval; extrapolated with the last rate beyond the grid."""

    grid: IntervalGrid
    rates: tuple[float, ...]

    def __init__(self, grid: IntervalGrid, rates: Sequence[float]):
        r = tuple(float(x) for x in rates)
        if len(r) != grid.n_intervals:
            raise ValueError(
                f"need {grid.n_intervals} rates to match the grid, got {len(r)}"
            )
        if any(not np.isfinite(x) or x <= 0 for x in r):
            raise ValueError("all hazard rates must be strictly positive and finite")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "rates", r)


@dataclass(frozen=True)
class ObservationRow:
    """One aggregated data row: events and exposure for a study over an interval span.

    `int_low`/`int_high` are 0-based inclusive interval indices. Single-interval
    rows have int_low == int_high; a wider span means the events/exposure were
    reported for a coarser bin than the grid and the hazard is length-averaged
    over the span. `covariates` is a (possibly empty) tuple of regressors with
    proportional-hazards effects.
    """

    study: str
    int_low: int
    int_high: int
    events: int
    exposure: float
    covariates: tuple[float, ...] = ()

    def __post_init__(self):
        if self.int_low > self.int_high:
            raise ValueError(
                f"int_low ({self.int_low}) must be <= int_high ({self.int_high})"
            )
        if self.events < 0 or self.events != int(self.events):
            raise ValueError(f"events must be a nonnegative integer, got {self.events}")
        if not self.exposure > 0:
            raise ValueError(f"exposure must be positive, got {self.exposure}")


def exposure_from_counts(rec: KmIntervalRecord, grid: IntervalGrid) -> float:
    """Total exposure time in an interval from at-risk/death/censored counts.

    Exits (deaths and censorings) contribute half an interval each, everyone
    else the full length: E = (L/2)(r + c) + L(n - r - c). Returns 0 when
    nobody is at risk.
    """
    L = grid.length(rec.interval)
    exits = rec.deaths + rec.censored
    return 0.5 * L * exits + L * (rec.n_at_risk - exits)


def survival_at(h: PiecewiseHazard, t: float) -> float:
    """Survival probability S(t) = exp(-integral of the hazard over [0, t])."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    bounds = np.asarray(h.grid.boundaries)
    rates = np.asarray(h.rates)
    overlap = np.clip(np.minimum(bounds[1:], t) - bounds[:-1], 0.0, None)
    cumhaz = float(overlap @ rates)
    if t > bounds[-1]:
        cumhaz += (t - bounds[-1]) * rates[-1]
    return float(np.exp(-cumhaz))


def median_survival(h: PiecewiseHazard) -> float:
    """Smallest t with S(t) = 1/2; uses the constant-hazard tail beyond the grid."""
    target = np.log(2.0)
    bounds = np.asarray(h.grid.boundaries)
    rates = np.asarray(h.rates)
    cum = np.concatenate([[0.0], np.cumsum(rates * np.diff(bounds))])
    if cum[-1] < target:
        return float(bounds[-1] + (target - cum[-1]) / rates[-1])
    k = int(np.searchsorted(cum, target))  # first boundary index with cum >= target
    return float(bounds[k - 1] + (target - cum[k - 1]) / rates[k - 1])


def aggregate_dataset(
    records: Sequence[KmIntervalRecord], grid: IntervalGrid
) -> list[ObservationRow]:
    """Turn count records into (events, exposure) observation rows.

    Each (study, interval) may appear at most once; records with nobody at
    risk are dropped (they carry no information).
    """
    seen: set[tuple[str, int]] = set()
    rows: list[ObservationRow] = []
    for rec in records:
        grid._check_index(rec.interval)
        key = (rec.study, rec.interval)
        if key in seen:
            raise ValueError(f"duplicate record for study {rec.study!r}, interval {rec.interval}")
        seen.add(key)
        if rec.n_at_risk == 0:
            continue
        rows.append(
            ObservationRow(
                study=rec.study,
                int_low=rec.interval,
                int_high=rec.interval,
                events=rec.deaths,
                exposure=exposure_from_counts(rec, grid),
            )
        )
    return rows
