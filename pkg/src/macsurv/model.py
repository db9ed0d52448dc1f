"""Joint probability model for hierarchical piecewise-exponential meta-analysis.

Event counts are Poisson with mean = exposure x (length-weighted average hazard
over the row's interval span). Per study j and interval k the log-hazard is

    theta[j,k] = z[j,k] * (mu_ex[k] + re[j,k]) + (1 - z[j,k]) * mu_nex[j,k]

so each study-interval cell is either exchangeable (EX: shared level mu_ex[k]
plus a study random effect with between-study scale tau_study[k]) or stands
alone (NEX: its own normal prior). Pinning every z to 1 gives the plain
exchangeable model; mixing weights strictly between 0 and 1 give the robust
mixture. Covariates act proportionally on the hazard (log-linear term X.beta).

The interval-level means mu_ex follow, by default, a first-order dynamic
linear model: mu_ex[1] ~ N(mu_mean_ex, tau_time^2) and

    mu_ex[k] ~ N(mu_ex[k-1] + rho[k-1], tau_time^2 / w),   k = 2..K,

with drift terms rho, discount factor w ~ Uniform(w1, w2) (smaller w inflates
the innovation variance) and innovation scale tau_time (lognormal prior). Alternatively ("unrelated" mode) each
mu_ex[k] gets an independent normal prior and the DLM block drops out.

Poisson log-likelihoods drop the additive log(r!) constant throughout; every
reported posterior quantity is invariant to this choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset
from .survival import IntervalGrid, ObservationRow

__all__ = ["PriorConfig", "ParameterState", "MacModel"]

_LOG_2PI = math.log(2.0 * math.pi)


def _norm_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI


def _halfnorm_logpdf(x, scale):
    # location-0 half-normal; support x >= 0
    return 0.5 * math.log(2.0) - 0.5 * _LOG_2PI - np.log(scale) - 0.5 * (x / scale) ** 2


def _lognorm_logpdf(x, meanlog, sdlog):
    z = (np.log(x) - meanlog) / sdlog
    return -np.log(x) - np.log(sdlog) - 0.5 * _LOG_2PI - 0.5 * z * z


@dataclass(frozen=True)
class PriorConfig:
    """Prior specification; array-valued entries broadcast against the data.

    Fields
    ------
    mu_mean : (m, s)
        Normal prior for the DLM level anchor.
    rho : (m, s)
        Shared normal prior for the DLM drift terms.
    w_bounds : (w1, w2)
        Uniform prior bounds for the smoothing factor, 0 <= w1 < w2 <= 1.
    tau_time : (meanlog, sdlog)
        Lognormal prior for the DLM innovation scale.
    tau_study_scale : float or K floats
        Half-normal scale(s) for the between-study sd per interval.
    nex_means, nex_sds : float, K floats, or J x K
        Normal priors for the non-exchangeable log-hazards.
    p_exch : float, K floats, or J x K
        Prior exchangeability weights in [0, 1]; exact 0/1 pins the indicator.
    beta_priors : sequence of (m, s)
        Normal prior per covariate coefficient.
    mu_mode : "ndlm" | "unrelated"
        "unrelated" replaces the DLM block by independent per-interval normal
        priors `mu_priors` on mu_ex (mu_mean/rho/w_bounds/tau_time unused).
    mu_priors : K pairs (m, s), required in "unrelated" mode.
    random_effects : bool or None
        Include study random effects in the EX branch. None = automatic:
        enabled when the dataset has at least two studies.
    """

    mu_mean: tuple[float, float] = (0.0, 10.0)
    rho: tuple[float, float] = (0.0, 10.0)
    w_bounds: tuple[float, float] = (0.0, 1.0)
    tau_time: tuple[float, float] = (-1.386294, 0.707293)
    tau_study_scale: float | Sequence[float] = 0.5
    nex_means: float | Sequence = 0.0
    nex_sds: float | Sequence = 1.0
    p_exch: float | Sequence = 1.0
    beta_priors: tuple[tuple[float, float], ...] = ()
    mu_mode: str = "ndlm"
    mu_priors: tuple[tuple[float, float], ...] | None = None
    random_effects: bool | None = None

    def __post_init__(self):
        if self.mu_mode not in ("ndlm", "unrelated"):
            raise ValueError(f"mu_mode must be 'ndlm' or 'unrelated', got {self.mu_mode!r}")
        if self.mu_mode == "unrelated" and self.mu_priors is None:
            raise ValueError("mu_mode='unrelated' requires mu_priors")
        w1, w2 = self.w_bounds
        if not (0.0 <= w1 < w2 <= 1.0):
            raise ValueError(f"w_bounds must satisfy 0 <= w1 < w2 <= 1, got {self.w_bounds}")
        for name in ("mu_mean", "rho"):
            if getattr(self, name)[1] <= 0:
                raise ValueError(f"{name} scale must be positive")
        if self.tau_time[1] <= 0:
            raise ValueError("tau_time sdlog must be positive")

    def to_json_dict(self) -> dict:
        d = {
            "mu_mean": list(self.mu_mean),
            "rho": list(self.rho),
            "w_bounds": list(self.w_bounds),
            "tau_time": list(self.tau_time),
            "tau_study_scale": _tolist(self.tau_study_scale),
            "nex_means": _tolist(self.nex_means),
            "nex_sds": _tolist(self.nex_sds),
            "p_exch": _tolist(self.p_exch),
            "beta_priors": [list(p) for p in self.beta_priors],
            "mu_mode": self.mu_mode,
        }
        if self.mu_priors is not None:
            d["mu_priors"] = [list(p) for p in self.mu_priors]
        if self.random_effects is not None:
            d["random_effects"] = self.random_effects
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "PriorConfig":
        known = {
            "mu_mean", "rho", "w_bounds", "tau_time", "tau_study_scale",
            "nex_means", "nex_sds", "p_exch", "beta_priors", "mu_mode",
            "mu_priors", "random_effects",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown prior config field(s): {sorted(unknown)}")
        kwargs = dict(d)
        for name in ("mu_mean", "rho", "w_bounds", "tau_time"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        if "beta_priors" in kwargs:
            kwargs["beta_priors"] = tuple(tuple(p) for p in kwargs["beta_priors"])
        if kwargs.get("mu_priors") is not None:
            kwargs["mu_priors"] = tuple(tuple(p) for p in kwargs["mu_priors"])
        return cls(**kwargs)


def _tolist(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (list, tuple)):
        return [_tolist(v) for v in x]
    return x


@dataclass
class ParameterState:
    """One point in the joint parameter space.

    Shapes: mu_ex (K,), rho (K-1,), tau_study (K,), re/z/mu_nex (J, K),
    beta (H,). In "unrelated" mode mu_mean_ex, rho, w and tau_time are
    carried but inert (not model parameters).
    """

    mu_mean_ex: float
    mu_ex: np.ndarray
    rho: np.ndarray
    w: float
    tau_time: float
    tau_study: np.ndarray
    re: np.ndarray
    z: np.ndarray
    mu_nex: np.ndarray
    beta: np.ndarray

    def copy(self) -> "ParameterState":
        return ParameterState(
            mu_mean_ex=self.mu_mean_ex,
            mu_ex=self.mu_ex.copy(),
            rho=self.rho.copy(),
            w=self.w,
            tau_time=self.tau_time,
            tau_study=self.tau_study.copy(),
            re=self.re.copy(),
            z=self.z.copy(),
            mu_nex=self.mu_nex.copy(),
            beta=self.beta.copy(),
        )


def _broadcast(value, J: int, K: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full((J, K), float(arr))
    if arr.shape == (K,):
        return np.tile(arr, (J, 1))
    if arr.shape == (J, K):
        return arr.copy()
    raise ValueError(f"{name}: cannot broadcast shape {arr.shape} to ({J}, {K})")


class MacModel:
    """Joint log-density over a `ParameterState`, bound to one dataset.

    Evaluation is pure given (state, data, priors); instances are safe to
    share across threads and chains.
    """

    def __init__(self, dataset: Dataset, priors: PriorConfig):
        self.dataset = dataset
        self.priors = priors
        self.grid = dataset.grid
        self.studies = dataset.studies
        self.J = dataset.n_studies
        self.K = self.grid.n_intervals
        self.H = dataset.n_covariates
        if self.J < 1:
            raise ValueError("dataset must declare at least one study")
        if len(priors.beta_priors) != self.H:
            raise ValueError(
                f"need {self.H} beta prior(s) to match the covariates, "
                f"got {len(priors.beta_priors)}"
            )

        J, K = self.J, self.K
        self.tau_scale = np.broadcast_to(
            np.asarray(priors.tau_study_scale, dtype=float), (K,)
        ).copy()
        if np.any(self.tau_scale <= 0):
            raise ValueError("tau_study_scale entries must be positive")
        self.nex_mean = _broadcast(priors.nex_means, J, K, "nex_means")
        self.nex_sd = _broadcast(priors.nex_sds, J, K, "nex_sds")
        if np.any(self.nex_sd <= 0):
            raise ValueError("nex_sds entries must be positive")
        self.p_exch = _broadcast(priors.p_exch, J, K, "p_exch")
        if np.any((self.p_exch < 0) | (self.p_exch > 1)):
            raise ValueError("p_exch entries must lie in [0, 1]")
        self.beta_prior = np.asarray(priors.beta_priors, dtype=float).reshape(self.H, 2)
        if self.H and np.any(self.beta_prior[:, 1] <= 0):
            raise ValueError("beta prior scales must be positive")
        if priors.mu_mode == "unrelated":
            self.mu_priors = np.asarray(priors.mu_priors, dtype=float)
            if self.mu_priors.shape != (K, 2):
                raise ValueError(f"mu_priors must be {K} (m, s) pairs")
            if np.any(self.mu_priors[:, 1] <= 0):
                raise ValueError("mu_priors scales must be positive")
        else:
            self.mu_priors = None
        self.random_effects = (
            priors.random_effects if priors.random_effects is not None else self.J >= 2
        )
        # pinned indicator cells
        self.z_pinned_one = self.p_exch == 1.0
        self.z_pinned_zero = self.p_exch == 0.0
        self.z_free = ~(self.z_pinned_one | self.z_pinned_zero)
        self.exnex_active = bool(np.any(~self.z_pinned_one))

        self._pack_rows()

    # -- data packing -------------------------------------------------------

    def _pack_rows(self) -> None:
        rows = self.dataset.rows
        N, K = len(rows), self.K
        self.n_rows = N
        self.row_study = np.array(
            [self.dataset.study_index(r.study) for r in rows], dtype=np.int64
        )
        self.row_events = np.array([r.events for r in rows], dtype=float)
        self.row_exposure = np.array([r.exposure for r in rows], dtype=float)
        self.row_x = np.array(
            [r.covariates for r in rows], dtype=float
        ).reshape(N, self.H)
        lengths = self.grid.lengths
        self.span_weights = np.zeros((N, K))
        for i, r in enumerate(rows):
            span = slice(r.int_low, r.int_high + 1)
            self.span_weights[i, span] = lengths[span] / lengths[span].sum()

    # -- log-hazard structure ----------------------------------------------

    def log_hazard_matrix(self, state: ParameterState) -> np.ndarray:
        """theta[j, k] for every study and interval."""
        re = state.re if self.random_effects else 0.0
        return state.z * (state.mu_ex[None, :] + re) + (1 - state.z) * state.mu_nex

    def log_hazard(
        self, state: ParameterState, study: int, interval: int, covariates=()
    ) -> float:
        """Observation-level log-hazard theta[j,k] + X.beta."""
        theta = self.log_hazard_matrix(state)[study, interval]
        x = np.asarray(covariates, dtype=float)
        return float(theta + (x @ state.beta if x.size else 0.0))

    def poisson_mean(self, state: ParameterState, row: ObservationRow) -> float:
        """Expected event count: exposure x length-weighted mean hazard over the span."""
        j = self.dataset.study_index(row.study)
        theta = self.log_hazard_matrix(state)[j]
        lengths = self.grid.lengths
        span = slice(row.int_low, row.int_high + 1)
        lam = np.exp(theta[span] + (np.asarray(row.covariates) @ state.beta if row.covariates else 0.0))
        return float(row.exposure * (lam @ lengths[span]) / lengths[span].sum())

    # -- densities -----------------------------------------------------------

    def log_likelihood(self, state: ParameterState) -> float:
        """Sum over rows of r*log(alpha) - alpha (log r! dropped)."""
        if self.n_rows == 0:
            return 0.0
        theta = self.log_hazard_matrix(state)
        with np.errstate(over="ignore"):
            lam = np.exp(theta)
            base = np.einsum("nk,nk->n", self.span_weights, lam[self.row_study])
            xb = self.row_x @ state.beta if self.H else 0.0
            alpha = self.row_exposure * np.exp(xb) * base
        if not np.all(np.isfinite(alpha)):
            return -math.inf
        return float(self.row_events @ np.log(alpha) - alpha.sum())

    def log_prior(self, state: ParameterState) -> float:
        """Joint log-prior; -inf outside the support."""
        p = state
        if np.any(p.tau_study <= 0):
            return -math.inf
        lp = 0.0
        if self.mu_priors is None:  # DLM mode
            if p.tau_time <= 0:
                return -math.inf
            w1, w2 = self.priors.w_bounds
            if not (w1 < p.w < w2):
                return -math.inf
            lp += float(_norm_logpdf(p.mu_mean_ex, *self.priors.mu_mean))
            lp += float(_norm_logpdf(p.mu_ex[0], p.mu_mean_ex, p.tau_time))
            if self.K > 1:
                innov_sd = p.tau_time / math.sqrt(p.w)
                lp += float(
                    _norm_logpdf(
                        p.mu_ex[1:], p.mu_ex[:-1] + p.rho, innov_sd
                    ).sum()
                )
                lp += float(_norm_logpdf(p.rho, *self.priors.rho).sum())
            lp += -math.log(w2 - w1)
            lp += float(_lognorm_logpdf(p.tau_time, *self.priors.tau_time))
        else:  # unrelated mode
            lp += float(
                _norm_logpdf(p.mu_ex, self.mu_priors[:, 0], self.mu_priors[:, 1]).sum()
            )
        lp += float(_halfnorm_logpdf(p.tau_study, self.tau_scale).sum())
        lp += float(_norm_logpdf(p.re, 0.0, p.tau_study[None, :]).sum())
        z = p.z
        if np.any(z[self.z_pinned_one] != 1) or np.any(z[self.z_pinned_zero] != 0):
            return -math.inf
        if self.exnex_active and np.any(self.z_free):
            pe = self.p_exch[self.z_free]
            zf = z[self.z_free]
            lp += float(np.sum(zf * np.log(pe) + (1 - zf) * np.log1p(-pe)))
        lp += float(_norm_logpdf(p.mu_nex, self.nex_mean, self.nex_sd).sum())
        if self.H:
            lp += float(
                _norm_logpdf(p.beta, self.beta_prior[:, 0], self.beta_prior[:, 1]).sum()
            )
        return lp

    def log_joint(self, state: ParameterState) -> float:
        lp = self.log_prior(state)
        if lp == -math.inf:
            return -math.inf
        return lp + self.log_likelihood(state)

    # -- exchangeability full conditional ------------------------------------

    def exch_conditional_probability(
        self, state: ParameterState, study: int, interval: int
    ) -> float:
        """P(z[j,k] = 1 | everything else): prior odds times the likelihood
        ratio of the affected rows under the EX vs NEX branch."""
        p = self.p_exch[study, interval]
        if p in (0.0, 1.0):
            return p
        theta_ex = state.mu_ex[interval] + (
            state.re[study, interval] if self.random_effects else 0.0
        )
        theta_nex = state.mu_nex[study, interval]
        delta = 0.0
        for variant, sign in ((theta_ex, +1.0), (theta_nex, -1.0)):
            s = state.copy()
            s.z = state.z.copy()
            s.z[study, interval] = 1 if sign > 0 else 0
            delta += sign * self._rows_loglik(s, study, interval)
        logit = math.log(p) - math.log1p(-p) + delta
        return 1.0 / (1.0 + math.exp(-logit))

    def _rows_loglik(self, state: ParameterState, study: int, interval: int) -> float:
        """Log-likelihood of the rows of one study whose span covers one interval."""
        theta = self.log_hazard_matrix(state)
        total = 0.0
        for i, r in enumerate(self.dataset.rows):
            if self.row_study[i] != study or not (r.int_low <= interval <= r.int_high):
                continue
            span = slice(r.int_low, r.int_high + 1)
            lengths = self.grid.lengths[span]
            xb = float(self.row_x[i] @ state.beta) if self.H else 0.0
            alpha = r.exposure * math.exp(xb) * float(
                np.exp(theta[study, span]) @ lengths
            ) / float(lengths.sum())
            total += r.events * math.log(alpha) - alpha
        return total
