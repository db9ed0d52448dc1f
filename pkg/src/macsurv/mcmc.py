"""Adaptive random-walk Metropolis-within-Gibbs sampler for the MAC model.

Blocking: every continuous parameter gets a scalar random-walk Metropolis
update (log scale for positive scale parameters, logit scale for the
smoothing factor w); the binary exchangeability indicators get exact Gibbs
draws from their full conditionals. Study-level quantities (random effects,
indicators, NEX levels) are updated simultaneously across studies within one
interval: their full conditionals are mutually independent given the rest
because different studies never share a data row. NEX levels of cells
currently in the EX branch (and random effects of cells in the NEX branch)
are conditionally independent of the data and are refreshed directly from
their priors, which keeps the mixture from sticking.

Proposal scales adapt toward a target acceptance rate during burn-in only
(Robbins-Monro on the log scale, windowed) and are frozen afterwards, so the
retained chain is a fixed-kernel Markov chain. Chains are reproducible:
chain c of a run with seed s uses the random stream derived from (s, c)
regardless of how chains are scheduled.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .diagnostics import QuantityDiagnostics, diagnose
from .model import MacModel, ParameterState

__all__ = ["SamplerConfig", "PosteriorSample", "SamplerError", "run", "update_z"]

_LOG_2PI = math.log(2.0 * math.pi)
_SCALE_FLOOR = 1e-8
_SCALE_CAP = 50.0
_RESYNC_EVERY = 500

_ALL_GROUPS = (
    "mu_mean_ex", "mu_ex", "rho", "w", "tau_time", "tau_study",
    "re", "z", "mu_nex", "beta", "theta", "loglik",
)
_DLM_ONLY = {"mu_mean_ex", "rho", "w", "tau_time"}


class SamplerError(RuntimeError):
    """Initialization failure or adaptation collapse."""


@dataclass(frozen=True)
class SamplerConfig:
    """Run settings; defaults mirror the reference analyses (3 chains,
    8000 burn-in + 8000 retained iterations, no thinning)."""

    n_chains: int = 3
    n_burnin: int = 8000
    n_iter: int = 8000
    thin: int = 1
    seed: int = 0
    adapt_target: float = 0.44
    adapt_window: int = 50
    workers: int = 1
    monitor: str | tuple[str, ...] = "all"
    init_retries: int = 20

    def __post_init__(self):
        for name in ("n_chains", "n_burnin", "n_iter", "thin", "adapt_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.adapt_target < 1.0:
            raise ValueError("adapt_target must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative 64-bit integer")
        if self.monitor != "all":
            unknown = set(self.monitor) - set(_ALL_GROUPS)
            if unknown:
                raise ValueError(f"unknown monitor group(s): {sorted(unknown)}")

    def to_json_dict(self) -> dict:
        d = {
            "n_chains": self.n_chains, "n_burnin": self.n_burnin,
            "n_iter": self.n_iter, "thin": self.thin, "seed": self.seed,
            "adapt_target": self.adapt_target, "adapt_window": self.adapt_window,
            "workers": self.workers,
        }
        if self.monitor != "all":
            d["monitor"] = list(self.monitor)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SamplerConfig":
        kwargs = dict(d)
        if "monitor" in kwargs and kwargs["monitor"] != "all":
            kwargs["monitor"] = tuple(kwargs["monitor"])
        return cls(**kwargs)


@dataclass
class PosteriorSample:
    """Retained draws with per-chain metadata and convergence diagnostics.

    draws has shape (n_chains, n_kept, n_columns); diagnostics are computed
    on the retained (post-burn-in) draws only. The Poisson log-likelihood
    column drops log(r!) terms (see meta["loglik_convention"]).
    """

    columns: tuple[str, ...]
    draws: np.ndarray
    accept_rates: dict[str, np.ndarray]
    diagnostics: dict[str, QuantityDiagnostics]
    meta: dict

    def __post_init__(self):
        self._index = {name: i for i, name in enumerate(self.columns)}

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_kept(self) -> int:
        return self.draws.shape[1]

    def array(self, name: str) -> np.ndarray:
        """Draws of one quantity, shape (n_chains, n_kept)."""
        try:
            return self.draws[:, :, self._index[name]]
        except KeyError:
            raise KeyError(f"quantity {name!r} was not monitored") from None

    def flat(self, name: str) -> np.ndarray:
        """Draws of one quantity pooled across chains, shape (n_chains * n_kept,)."""
        return self.array(name).reshape(-1)

    def group(self, prefix: str) -> tuple[list[str], np.ndarray]:
        """All columns named `prefix[...]`, pooled: (names, matrix (n_total, m))."""
        names = [c for c in self.columns if c.startswith(prefix + "[")]
        if not names:
            raise KeyError(f"no monitored columns in group {prefix!r}")
        idx = [self._index[c] for c in names]
        return names, self.draws[:, :, idx].reshape(-1, len(idx))

    def theta_matrix(self, study: int) -> np.ndarray:
        """Pooled log-hazard draws for one study (0-based), shape (n_total, K)."""
        K = self.meta["n_intervals"]
        names = [f"theta[{study + 1},{k + 1}]" for k in range(K)]
        idx = [self._index[c] for c in names]
        return self.draws[:, :, idx].reshape(-1, K)

    def to_draws_csv(self, path: str | Path, columns: Sequence[str] | None = None) -> None:
        """Dump retained draws, one row per iteration, full precision."""
        cols = list(columns) if columns is not None else list(self.columns)
        idx = [self._index[c] for c in cols]
        with Path(path).open("w", newline="") as fh:
            fh.write(",".join(["chain", "iteration"] + cols) + "\n")
            for c in range(self.n_chains):
                for t in range(self.n_kept):
                    vals = self.draws[c, t, idx]
                    fh.write(
                        f"{c + 1},{t + 1}," + ",".join(repr(float(v)) for v in vals) + "\n"
                    )


def _nlp(x: float, mean: float, sd: float) -> float:
    z = (x - mean) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * _LOG_2PI


class _Chain:
    """Mutable per-chain sampling workspace."""

    def __init__(self, model: MacModel, config: SamplerConfig, chain_idx: int):
        self.m = model
        self.cfg = config
        self.chain_idx = chain_idx
        self.rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(config.seed, chain_idx))
        )
        m = model
        self.J, self.K, self.H, self.N = m.J, m.K, m.H, m.n_rows
        self.ndlm = m.mu_priors is None
        self.re_active = m.random_effects
        self.exnex = m.exnex_active
        self._zeros_J = np.zeros(self.J)

        # per-interval row groups
        self.rows_k, self.stud_k, self.wk_k = [], [], []
        for k in range(self.K):
            rws = np.nonzero(m.span_weights[:, k] > 0)[0]
            self.rows_k.append(rws)
            self.stud_k.append(m.row_study[rws])
            self.wk_k.append(m.span_weights[rws, k])
        with np.errstate(divide="ignore"):
            lp = np.where(m.z_free, np.log(m.p_exch), 0.0)
            l1p = np.where(m.z_free, np.log1p(-m.p_exch), 0.0)
        self.logit_p = lp - l1p
        self.rx = m.row_events @ m.row_x if self.H else np.zeros(0)

        self.scales = {
            "mu_mean_ex": np.array([0.5]),
            "mu_ex": np.full(self.K, 0.5),
            "rho": np.full(max(self.K - 1, 0), 0.3),
            "w": np.array([1.0]),
            "tau_time": np.array([0.5]),
            "tau_study": np.full(self.K, 0.5),
            "re": np.full((self.J, self.K), 0.5),
            "mu_nex": np.full((self.J, self.K), 0.5),
            "beta": np.full(self.H, 0.3),
        }
        self.acc = {g: np.zeros_like(s) for g, s in self.scales.items()}
        self.att = {g: np.zeros_like(s) for g, s in self.scales.items()}
        self.total_acc = {g: 0.0 for g in self.scales}
        self.total_att = {g: 0.0 for g in self.scales}
        self._collapse_streak = 0

    # -- state & caches -------------------------------------------------------

    def initialize(self) -> None:
        m, rng = self.m, self.rng
        sum_r = m.row_events.sum()
        sum_e = m.row_exposure.sum()
        if sum_e > 0:
            log_h0 = math.log((sum_r + 0.5) / sum_e)
        elif self.ndlm:
            log_h0 = m.priors.mu_mean[0]
        else:
            log_h0 = float(m.mu_priors[:, 0].mean())
        w1, w2 = m.priors.w_bounds
        for _ in range(self.cfg.init_retries):
            self.muM = float(rng.normal(log_h0, 0.1))
            self.mu = rng.normal(log_h0, 0.25, self.K)
            self.rho = rng.normal(0.0, 0.05, max(self.K - 1, 0))
            self.w = float(rng.uniform(w1, w2))
            self.tauT = float(rng.gamma(1.0, 1.0))
            self.tauS = rng.gamma(1.0, 1.0, self.K)
            self.re = rng.normal(0.0, 0.1, (self.J, self.K))
            self.z = np.where(
                m.z_pinned_one, 1, np.where(m.z_pinned_zero, 0, 0)
            ).astype(np.int8)
            if np.any(m.z_free):
                free_draw = rng.random((self.J, self.K)) < m.p_exch
                self.z = np.where(m.z_free, free_draw, self.z).astype(np.int8)
            self.nu = rng.normal(m.nex_mean, m.nex_sd)
            self.beta = rng.normal(0.0, 1.0, self.H)
            self._sync_caches()
            if math.isfinite(self.ll) and math.isfinite(
                self.m.log_prior(self.state())
            ):
                return
        raise SamplerError(
            f"chain {self.chain_idx}: no finite starting point after "
            f"{self.cfg.init_retries} attempts"
        )

    def state(self) -> ParameterState:
        return ParameterState(
            mu_mean_ex=self.muM,
            mu_ex=self.mu.copy(),
            rho=self.rho.copy(),
            w=self.w,
            tau_time=self.tauT,
            tau_study=self.tauS.copy(),
            re=self.re.copy(),
            z=self.z.astype(np.int8).copy(),
            mu_nex=self.nu.copy(),
            beta=self.beta.copy(),
        )

    def _sync_caches(self) -> None:
        m = self.m
        re_term = self.re if self.re_active else 0.0
        self.theta = self.z * (self.mu[None, :] + re_term) + (1 - self.z) * self.nu
        self.lam = np.exp(self.theta)
        if self.N:
            self.xb = m.row_x @ self.beta if self.H else np.zeros(self.N)
            self.Exb = m.row_exposure * np.exp(self.xb)
            self.base = np.einsum("nk,nk->n", m.span_weights, self.lam[m.row_study])
            self.alpha = self.Exb * self.base
            with np.errstate(divide="ignore"):
                logterm = np.where(
                    m.row_events > 0, m.row_events * np.log(self.alpha), 0.0
                )
            self.ll = float(logterm.sum() - self.alpha.sum())
        else:
            self.Exb = np.zeros(0)
            self.base = np.zeros(0)
            self.alpha = np.zeros(0)
            self.ll = 0.0

    # -- likelihood deltas -----------------------------------------------------

    def _col_delta(self, k: int, theta_new: np.ndarray, mask: np.ndarray):
        """Per-study log-likelihood change if theta[:, k] moved to theta_new
        for the masked studies. Returns (dll (J,), pack or None)."""
        rws = self.rows_k[k]
        if rws.size == 0:
            return self._zeros_J, None
        st = self.stud_k[k]
        sel = mask[st]
        if not sel.any():
            return self._zeros_J, None
        rws = rws[sel]
        st_s = st[sel]
        wk = self.wk_k[k][sel]
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            lam_new = np.exp(theta_new[st_s])
            base_new = self.base[rws] + wk * (lam_new - self.lam[st_s, k])
            alpha_new = self.Exb[rws] * base_new
            alpha_old = self.alpha[rws]
            r = self.m.row_events[rws]
            logterm = np.where(
                r > 0, r * (np.log(alpha_new) - np.log(alpha_old)), 0.0
            )
            dll_rows = logterm - (alpha_new - alpha_old)
        bad = ~np.isfinite(dll_rows)
        if bad.any():
            dll_rows = np.where(bad, -np.inf, dll_rows)
        dll = np.bincount(st_s, weights=dll_rows, minlength=self.J)
        return dll, (rws, st_s, base_new, alpha_new)

    def _apply_column(self, k, accepted, theta_new, pack, dll) -> None:
        self.theta[accepted, k] = theta_new[accepted]
        self.lam[accepted, k] = np.exp(theta_new[accepted])
        if pack is not None:
            rws, st_s, base_new, alpha_new = pack
            sel = accepted[st_s]
            if sel.any():
                self.base[rws[sel]] = base_new[sel]
                self.alpha[rws[sel]] = alpha_new[sel]
        self.ll += float(dll[accepted].sum())

    # -- parameter updates ------------------------------------------------------

    def _update_mu_mean(self) -> None:
        s = float(self.scales["mu_mean_ex"][0])
        prop = self.muM + s * self.rng.standard_normal()
        m0, s0 = self.m.priors.mu_mean
        logr = (
            _nlp(prop, m0, s0) - _nlp(self.muM, m0, s0)
            + _nlp(self.mu[0], prop, self.tauT) - _nlp(self.mu[0], self.muM, self.tauT)
        )
        self.att["mu_mean_ex"][0] += 1
        if math.log(self.rng.random()) < logr:
            self.muM = prop
            self.acc["mu_mean_ex"][0] += 1

    def _mu_prior_terms(self, k: int, value: float) -> float:
        """Log-prior terms involving mu_ex[k] at the given value."""
        if not self.ndlm:
            mk, sk = self.m.mu_priors[k]
            return _nlp(value, mk, sk)
        lp = 0.0
        innov = self.tauT / math.sqrt(self.w)
        if k == 0:
            lp += _nlp(value, self.muM, self.tauT)
        else:
            lp += _nlp(value, self.mu[k - 1] + self.rho[k - 1], innov)
        if k < self.K - 1:
            lp += _nlp(self.mu[k + 1], value + self.rho[k], innov)
        return lp

    def _update_mu(self, k: int) -> None:
        delta = float(self.scales["mu_ex"][k]) * self.rng.standard_normal()
        prop = self.mu[k] + delta
        mask = self.z[:, k] == 1
        theta_new = self.theta[:, k] + delta
        dll, pack = self._col_delta(k, theta_new, mask)
        logr = (
            self._mu_prior_terms(k, prop) - self._mu_prior_terms(k, self.mu[k])
            + float(dll[mask].sum())
        )
        self.att["mu_ex"][k] += 1
        if math.log(self.rng.random()) < logr:
            self.mu[k] = prop
            self._apply_column(k, mask, theta_new, pack, dll)
            self.acc["mu_ex"][k] += 1

    def _update_rho(self, k: int) -> None:
        s = float(self.scales["rho"][k])
        prop = self.rho[k] + s * self.rng.standard_normal()
        mr, sr = self.m.priors.rho
        innov = self.tauT / math.sqrt(self.w)
        logr = (
            _nlp(prop, mr, sr) - _nlp(self.rho[k], mr, sr)
            + _nlp(self.mu[k + 1], self.mu[k] + prop, innov)
            - _nlp(self.mu[k + 1], self.mu[k] + self.rho[k], innov)
        )
        self.att["rho"][k] += 1
        if math.log(self.rng.random()) < logr:
            self.rho[k] = prop
            self.acc["rho"][k] += 1

    def _dlm_scale_terms(self, tau: float, w: float) -> float:
        """Log-density terms of the mu chain that involve (tau_time, w)."""
        lp = _nlp(self.mu[0], self.muM, tau)
        if self.K > 1:
            innov = tau / math.sqrt(w)
            resid = self.mu[1:] - self.mu[:-1] - self.rho
            ss = float(resid @ resid)
            lp += (self.K - 1) * (-math.log(innov) - 0.5 * _LOG_2PI)
            lp -= 0.5 * ss / (innov * innov)
        return lp

    def _update_tau_time(self) -> None:
        s = float(self.scales["tau_time"][0])
        prop = self.tauT * math.exp(s * self.rng.standard_normal())
        ml, sl = self.m.priors.tau_time

        def target(t):
            # lognormal prior + DLM terms + log-scale Jacobian
            zl = (math.log(t) - ml) / sl
            lp = -math.log(t) - 0.5 * zl * zl
            return lp + self._dlm_scale_terms(t, self.w) + math.log(t)

        self.att["tau_time"][0] += 1
        if math.log(self.rng.random()) < target(prop) - target(self.tauT):
            self.tauT = prop
            self.acc["tau_time"][0] += 1

    def _update_w(self) -> None:
        w1, w2 = self.m.priors.w_bounds
        if self.K < 2:
            # no innovation terms: conditional is the uniform prior itself
            self.w = float(self.rng.uniform(w1, w2))
            return
        s = float(self.scales["w"][0])
        y = math.log(self.w - w1) - math.log(w2 - self.w)
        y_prop = y + s * self.rng.standard_normal()
        prop = w1 + (w2 - w1) / (1.0 + math.exp(-y_prop))

        def target(w):
            jac = math.log(w - w1) + math.log(w2 - w)
            return self._dlm_scale_terms(self.tauT, w) + jac

        self.att["w"][0] += 1
        if math.log(self.rng.random()) < target(prop) - target(self.w):
            self.w = prop
            self.acc["w"][0] += 1

    def _update_tau_study(self, k: int) -> None:
        s = float(self.scales["tau_study"][k])
        old = float(self.tauS[k])
        prop = old * math.exp(s * self.rng.standard_normal())
        scale = float(self.m.tau_scale[k])
        ss = float(self.re[:, k] @ self.re[:, k])

        def target(t):
            # half-normal prior + RE column + log-scale Jacobian
            return (
                -0.5 * (t / scale) ** 2
                - self.J * math.log(t)
                - 0.5 * ss / (t * t)
                + math.log(t)
            )

        self.att["tau_study"][k] += 1
        if math.log(self.rng.random()) < target(prop) - target(old):
            self.tauS[k] = prop
            self.acc["tau_study"][k] += 1

    def _update_re_column(self, k: int) -> None:
        rng = self.rng
        zc = self.z[:, k] == 1
        rwm = zc if self.re_active else np.zeros(self.J, dtype=bool)
        tau = float(self.tauS[k])
        eps = self.re[:, k]
        if rwm.any():
            prop = eps + self.scales["re"][:, k] * rng.standard_normal(self.J)
            theta_new = self.mu[k] + prop
            dll, pack = self._col_delta(k, theta_new, rwm)
            dprior = -(prop * prop - eps * eps) / (2.0 * tau * tau)
            with np.errstate(invalid="ignore"):
                accept = rwm & (np.log(rng.random(self.J)) < dll + dprior)
            self.att["re"][rwm, k] += 1
            if accept.any():
                self.re[accept, k] = prop[accept]
                self._apply_column(k, accept, theta_new, pack, dll)
                self.acc["re"][accept, k] += 1
        refresh = ~rwm
        if refresh.any():
            # likelihood-free cells: exact draw from N(0, tau_k^2)
            self.re[refresh, k] = tau * rng.standard_normal(int(refresh.sum()))

    def _update_z_column(self, k: int) -> None:
        free = self.m.z_free[:, k]
        if not free.any():
            return
        rng = self.rng
        if self.re_active:
            theta_ex = self.mu[k] + self.re[:, k]
        else:
            theta_ex = np.full(self.J, self.mu[k])
        theta_nex = self.nu[:, k]
        dll_ex, pack_ex = self._col_delta(k, theta_ex, free)
        dll_nex, pack_nex = self._col_delta(k, theta_nex, free)
        logit = self.logit_p[:, k] + (dll_ex - dll_nex)
        with np.errstate(over="ignore"):
            p1 = 1.0 / (1.0 + np.exp(-logit))
        znew = np.where(rng.random(self.J) < p1, 1, 0).astype(np.int8)
        to_ex = free & (znew == 1) & (self.z[:, k] == 0)
        to_nex = free & (znew == 0) & (self.z[:, k] == 1)
        if to_ex.any():
            self._apply_column(k, to_ex, theta_ex, pack_ex, dll_ex)
            self.z[to_ex, k] = 1
        if to_nex.any():
            self._apply_column(k, to_nex, theta_nex, pack_nex, dll_nex)
            self.z[to_nex, k] = 0

    def _update_nu_column(self, k: int) -> None:
        rng = self.rng
        mean = self.m.nex_mean[:, k]
        sd = self.m.nex_sd[:, k]
        in_nex = self.z[:, k] == 0
        if in_nex.any():
            old = self.nu[:, k]
            prop = old + self.scales["mu_nex"][:, k] * rng.standard_normal(self.J)
            dll, pack = self._col_delta(k, prop, in_nex)
            dprior = (
                -((prop - mean) ** 2 - (old - mean) ** 2) / (2.0 * sd * sd)
            )
            with np.errstate(invalid="ignore"):
                accept = in_nex & (np.log(rng.random(self.J)) < dll + dprior)
            self.att["mu_nex"][in_nex, k] += 1
            if accept.any():
                self.nu[accept, k] = prop[accept]
                self._apply_column(k, accept, prop, pack, dll)
                self.acc["mu_nex"][accept, k] += 1
        in_ex = ~in_nex
        if in_ex.any():
            # EX cells: the NEX level is data-free, refresh from its prior
            n = int(in_ex.sum())
            self.nu[in_ex, k] = mean[in_ex] + sd[in_ex] * rng.standard_normal(n)

    def _refresh_all_nu(self) -> None:
        self.nu = self.m.nex_mean + self.m.nex_sd * self.rng.standard_normal(
            (self.J, self.K)
        )

    def _update_beta(self, h: int) -> None:
        rng = self.rng
        delta = float(self.scales["beta"][h]) * rng.standard_normal()
        prop = self.beta[h] + delta
        mh, sh = self.m.beta_prior[h]
        dprior = _nlp(prop, mh, sh) - _nlp(self.beta[h], mh, sh)
        if self.N:
            xcol = self.m.row_x[:, h]
            with np.errstate(over="ignore"):
                factor = np.exp(xcol * delta)
                alpha_new = self.alpha * factor
                dll = float(self.rx[h] * delta - (alpha_new - self.alpha).sum())
            if not math.isfinite(dll):
                dll = -math.inf
        else:
            dll = 0.0
        self.att["beta"][h] += 1
        if math.log(rng.random()) < dprior + dll:
            self.beta[h] = prop
            if self.N:
                self.Exb *= factor
                self.alpha = alpha_new
                self.ll += dll
            self.acc["beta"][h] += 1

    # -- sweep -----------------------------------------------------------------

    def sweep(self) -> None:
        if self.ndlm:
            self._update_mu_mean()
        for k in range(self.K):
            self._update_mu(k)
        if self.ndlm:
            for k in range(self.K - 1):
                self._update_rho(k)
            self._update_tau_time()
            self._update_w()
        for k in range(self.K):
            self._update_tau_study(k)
        for k in range(self.K):
            self._update_re_column(k)
        if self.exnex:
            for k in range(self.K):
                self._update_z_column(k)
            for k in range(self.K):
                self._update_nu_column(k)
        else:
            self._refresh_all_nu()
        for h in range(self.H):
            self._update_beta(h)

    # -- adaptation --------------------------------------------------------------

    def adapt(self, batch: int) -> None:
        target = self.cfg.adapt_target
        step = min(0.25, batch ** -0.5)
        pegged_rejecting = False
        for g, sc in self.scales.items():
            att = self.att[g]
            used = att > 0
            if not used.any():
                continue
            rate = np.zeros_like(sc)
            rate[used] = self.acc[g][used] / att[used]
            adj = np.exp(step * np.clip((rate - target) / target, -1.0, 3.0))
            sc[used] = np.clip(sc[used] * adj[used], _SCALE_FLOOR, _SCALE_CAP)
            if np.any(used & (sc <= _SCALE_FLOOR * 1.01) & (rate == 0.0)):
                pegged_rejecting = True
            self.total_acc[g] += float(self.acc[g].sum())
            self.total_att[g] += float(att.sum())
            self.acc[g][:] = 0
            self.att[g][:] = 0
        self._collapse_streak = self._collapse_streak + 1 if pegged_rejecting else 0
        if self._collapse_streak >= 20:
            raise SamplerError(
                f"chain {self.chain_idx}: adaptation collapse "
                "(proposal scale underflow with zero acceptance)"
            )

    def flush_counters(self) -> None:
        for g in self.scales:
            self.total_acc[g] += float(self.acc[g].sum())
            self.total_att[g] += float(self.att[g].sum())
            self.acc[g][:] = 0
            self.att[g][:] = 0

    # -- monitoring ----------------------------------------------------------------

    def monitor_plan(self) -> list[tuple[str, list[str], Callable[[], np.ndarray]]]:
        J, K, H = self.J, self.K, self.H
        groups = (
            self.cfg.monitor if self.cfg.monitor != "all" else _ALL_GROUPS
        )
        plan = []
        for g in groups:
            if g in _DLM_ONLY and not self.ndlm:
                continue
            if g == "mu_mean_ex":
                plan.append((g, ["mu_mean_ex"], lambda: np.array([self.muM])))
            elif g == "mu_ex":
                names = [f"mu_ex[{k + 1}]" for k in range(K)]
                plan.append((g, names, lambda: self.mu))
            elif g == "rho" and K > 1:
                names = [f"rho[{k + 1}]" for k in range(K - 1)]
                plan.append((g, names, lambda: self.rho))
            elif g == "w":
                plan.append((g, ["w"], lambda: np.array([self.w])))
            elif g == "tau_time":
                plan.append((g, ["tau_time"], lambda: np.array([self.tauT])))
            elif g == "tau_study":
                names = [f"tau_study[{k + 1}]" for k in range(K)]
                plan.append((g, names, lambda: self.tauS))
            elif g == "re":
                names = [f"re[{j + 1},{k + 1}]" for j in range(J) for k in range(K)]
                plan.append((g, names, lambda: self.re.ravel()))
            elif g == "z":
                names = [f"z[{j + 1},{k + 1}]" for j in range(J) for k in range(K)]
                plan.append((g, names, lambda: self.z.ravel().astype(float)))
            elif g == "mu_nex":
                names = [f"mu_nex[{j + 1},{k + 1}]" for j in range(J) for k in range(K)]
                plan.append((g, names, lambda: self.nu.ravel()))
            elif g == "beta" and H > 0:
                names = [f"beta[{h + 1}]" for h in range(H)]
                plan.append((g, names, lambda: self.beta))
            elif g == "theta":
                names = [f"theta[{j + 1},{k + 1}]" for j in range(J) for k in range(K)]
                plan.append((g, names, lambda: self.theta.ravel()))
            elif g == "loglik":
                plan.append((g, ["loglik"], lambda: np.array([self.ll])))
        return plan


def _run_chain(model: MacModel, config: SamplerConfig, chain_idx: int):
    chain = _Chain(model, config, chain_idx)
    chain.initialize()
    plan = chain.monitor_plan()
    names: list[str] = []
    slices = []
    for _, group_names, getter in plan:
        start = len(names)
        names.extend(group_names)
        slices.append((slice(start, start + len(group_names)), getter))
    n_kept = config.n_iter // config.thin
    out = np.empty((n_kept, len(names)))

    t = 0
    for it in range(config.n_burnin + config.n_iter):
        chain.sweep()
        in_burnin = it < config.n_burnin
        if in_burnin and (it + 1) % config.adapt_window == 0:
            chain.adapt((it + 1) // config.adapt_window)
        if it + 1 == config.n_burnin:
            scales_end_burnin = {g: s.copy() for g, s in chain.scales.items()}
            chain.flush_counters()
        if (it + 1) % _RESYNC_EVERY == 0:
            chain._sync_caches()
        if not in_burnin:
            kept_idx = it - config.n_burnin
            if (kept_idx + 1) % config.thin == 0 and t < n_kept:
                if not math.isfinite(chain.ll):
                    raise SamplerError(
                        f"chain {chain_idx}: non-finite log-likelihood at "
                        f"iteration {it}"
                    )
                for sl, getter in slices:
                    out[t, sl] = getter()
                t += 1
    chain.flush_counters()
    rates = {
        g: (chain.total_acc[g] / chain.total_att[g]) if chain.total_att[g] else math.nan
        for g in chain.scales
    }
    info = {
        "accept_rates": rates,
        "scales_end_burnin": scales_end_burnin,
        "scales_final": {g: s.copy() for g, s in chain.scales.items()},
    }
    return names, out[:t], info


def _run_chain_task(args):
    return _run_chain(*args)


def run(model: MacModel, config: SamplerConfig) -> PosteriorSample:
    """Draw from the posterior of the MAC model.

    Reproducible: chain c uses the random stream derived from
    (config.seed, c), so results are bit-identical for a given seed
    regardless of `workers`.
    """
    t0 = time.perf_counter()
    tasks = [(model, config, c) for c in range(config.n_chains)]
    if config.workers > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_chain_task, tasks))
    else:
        results = [_run_chain(*t) for t in tasks]

    names = results[0][0]
    draws = np.stack([r[1] for r in results])
    accept_rates = {
        g: np.array([r[2]["accept_rates"][g] for r in results])
        for g in results[0][2]["accept_rates"]
    }
    diagnostics = {}
    warnings = []
    for q, name in enumerate(names):
        diagnostics[name] = diagnose(draws[:, :, q])
    flagged = [
        n for n, d in diagnostics.items() if not d.degenerate and d.rhat > 1.05
    ]
    if flagged:
        warnings.append(
            f"split R-hat above 1.05 for {len(flagged)} quantities "
            f"(worst: {max(flagged, key=lambda n: diagnostics[n].rhat)})"
        )
    meta = {
        "studies": list(model.studies),
        "n_intervals": model.K,
        "grid_boundaries": list(model.grid.boundaries),
        "time_unit": model.grid.unit,
        "seed": config.seed,
        "config": config.to_json_dict(),
        "loglik_convention": "Poisson log-likelihood without log(r!) terms",
        "warnings": warnings,
        "runtime_seconds": time.perf_counter() - t0,
        "scales_end_burnin": [r[2]["scales_end_burnin"] for r in results],
        "scales_final": [r[2]["scales_final"] for r in results],
    }
    return PosteriorSample(
        columns=tuple(names),
        draws=draws,
        accept_rates=accept_rates,
        diagnostics=diagnostics,
        meta=meta,
    )


def update_z(model: MacModel, state: ParameterState, rng: np.random.Generator) -> ParameterState:
    """One exact Gibbs scan over all exchangeability indicators.

    Pinned cells (prior weight exactly 0 or 1) are set to their forced value;
    each free cell is drawn from its full conditional given the rest of the
    state, scanning cells in row-major order.
    """
    new = state.copy()
    for j in range(model.J):
        for k in range(model.K):
            if model.z_pinned_one[j, k]:
                new.z[j, k] = 1
            elif model.z_pinned_zero[j, k]:
                new.z[j, k] = 0
            else:
                p = model.exch_conditional_probability(new, j, k)
                new.z[j, k] = 1 if rng.random() < p else 0
    return new
