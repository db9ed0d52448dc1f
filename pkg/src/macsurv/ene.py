"""Prior effective number of events.

The predictive prior for each interval's log-hazard is available only as MCMC
draws; it is approximated by a 1-D normal mixture (EM fit, AIC order
selection) and its information content is the expected local-information
ratio: the prior information i(p(theta)) = -d^2 log p / d theta^2 averaged
under the prior, divided by the Fisher information of a single event. For the
log-hazard of exponential-type event data that Fisher information is 1, so
the per-interval effective sample size is E_theta[i(p(theta))] and the total
effective number of events is the sum over intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

__all__ = [
    "NormalMixture",
    "MixtureFitError",
    "fit_mixture",
    "ess_elir",
    "total_ene",
]

_MAX_COMPONENTS = 4


class MixtureFitError(RuntimeError):
    """Degenerate sample or EM failure."""


@dataclass(frozen=True)
class NormalMixture:
    """Finite normal mixture with 1 to 4 components (weight, mean, sd)."""

    components: tuple[tuple[float, float, float], ...]

    def __init__(self, components):
        comps = tuple((float(w), float(m), float(s)) for w, m, s in components)
        if not 1 <= len(comps) <= _MAX_COMPONENTS:
            raise ValueError(f"mixture must have 1-{_MAX_COMPONENTS} components")
        weights = np.array([c[0] for c in comps])
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {weights.sum()}")
        if any(c[2] <= 0 for c in comps):
            raise ValueError("component sds must be positive")
        object.__setattr__(self, "components", comps)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c[0] for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c[1] for c in self.components])

    @property
    def sds(self) -> np.ndarray:
        return np.array([c[2] for c in self.components])

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def sd(self) -> float:
        w, m, s = self.weights, self.means, self.sds
        return float(np.sqrt(w @ (s**2 + m**2) - (w @ m) ** 2))

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        w, m, s = self.weights, self.means, self.sds
        comp = (
            np.log(w)
            - np.log(s)
            - 0.5 * math.log(2 * math.pi)
            - 0.5 * ((x - m) / s) ** 2
        )
        mx = comp.max(axis=-1, keepdims=True)
        return (mx + np.log(np.exp(comp - mx).sum(axis=-1, keepdims=True)))[..., 0]

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def information(self, x) -> np.ndarray:
        """Local prior information i(p)(x) = -d^2 log p / dx^2, analytically.

        With a_c = -(x - m_c)/s_c^2 and posterior component weights u_c(x),
        -(log p)'' = (sum u a)^2 - sum u (a^2 - 1/s^2).
        """
        x = np.asarray(x, dtype=float)[..., None]
        w, m, s = self.weights, self.means, self.sds
        logcomp = (
            np.log(w)
            - np.log(s)
            - 0.5 * math.log(2 * math.pi)
            - 0.5 * ((x - m) / s) ** 2
        )
        mx = logcomp.max(axis=-1, keepdims=True)
        u = np.exp(logcomp - mx)
        u /= u.sum(axis=-1, keepdims=True)
        a = -(x - m) / s**2
        r1 = (u * a).sum(axis=-1)
        r2 = (u * (a**2 - 1.0 / s**2)).sum(axis=-1)
        return r1**2 - r2

    def loglik(self, x: np.ndarray) -> float:
        return float(self.logpdf(x).sum())

    def n_parameters(self) -> int:
        return 3 * len(self.components) - 1


def _em_1d(x: np.ndarray, m: int, means0: np.ndarray, max_iter: int, tol: float):
    """Run EM from the given component means; returns (mixture, loglik, converged).

    Convergence: change in mean log-likelihood per draw below `tol`.
    """
    n = x.size
    sd0 = x.std()
    floor = max(1e-6 * sd0, 1e-12)
    w = np.full(m, 1.0 / m)
    mu = means0.astype(float).copy()
    s = np.full(m, sd0)
    prev_ll = -np.inf
    converged = False
    for _ in range(max_iter):
        logcomp = (
            np.log(w)
            - np.log(s)
            - 0.5 * math.log(2 * math.pi)
            - 0.5 * ((x[:, None] - mu) / s) ** 2
        )
        mx = logcomp.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(logcomp - mx).sum(axis=1))
        ll = float(lse.sum())
        if not math.isfinite(ll):
            break
        resp = np.exp(logcomp - lse[:, None])
        nk = resp.sum(axis=0) + 1e-300
        w = nk / n
        mu = (resp.T @ x) / nk
        var = (resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk
        s = np.sqrt(np.maximum(var, floor**2))
        if abs(ll - prev_ll) < tol * n:
            converged = True
            break
        prev_ll = ll
    order = np.argsort(mu)
    comps = tuple((float(w[i]), float(mu[i]), float(s[i])) for i in order)
    return comps, ll, converged


def fit_mixture(
    sample: np.ndarray,
    max_components: int = _MAX_COMPONENTS,
    seed: int = 0,
    n_restarts: int = 4,
    max_iter: int = 1000,
    tol: float = 1e-7,
) -> NormalMixture:
    """Fit a normal mixture to draws of one quantity; order chosen by AIC.

    Deterministic given the seed (EM restarts use seeded initial means).
    `tol` is the convergence threshold on the change in mean log-likelihood
    per draw. Ties in AIC go to fewer components. Requires at least 1000
    draws; a constant sample is an error.
    """
    x = np.asarray(sample, dtype=float).reshape(-1)
    if x.size < 1000:
        raise ValueError(f"need at least 1000 draws to fit a mixture, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    if x.std() == 0.0:
        raise MixtureFitError("degenerate (constant) sample")
    if not 1 <= max_components <= _MAX_COMPONENTS:
        raise ValueError(f"max_components must be in 1-{_MAX_COMPONENTS}")
    rng = np.random.default_rng(seed)

    best: tuple[float, int, NormalMixture] | None = None
    for m in range(1, max_components + 1):
        if m == 1:
            mix = NormalMixture([(1.0, float(x.mean()), float(x.std()))])
            ll = mix.loglik(x)
        else:
            fits = []
            # one quantile-spread start plus seeded random restarts
            starts = [np.quantile(x, (np.arange(m) + 0.5) / m)]
            starts += [rng.choice(x, size=m, replace=False) for _ in range(n_restarts)]
            for means0 in starts:
                comps, ll_r, converged = _em_1d(x, m, np.asarray(means0), max_iter, tol)
                if converged:
                    fits.append((ll_r, comps))
            if not fits:
                raise MixtureFitError(
                    f"EM did not converge for {m} components after "
                    f"{n_restarts + 1} restarts"
                )
            ll, comps = max(fits, key=lambda f: f[0])
            mix = NormalMixture(comps)
        aic = -2.0 * ll + 2.0 * mix.n_parameters()
        if best is None or aic < best[0] - 1e-9:
            best = (aic, m, mix)
    assert best is not None
    return best[2]


def ess_elir(mixture: NormalMixture, fisher_information: float = 1.0) -> float:
    """Expected local-information-ratio effective sample size.

    Integrates i(p(theta)) p(theta) over the mixture mean +/- 10 pooled sds
    by adaptive quadrature (relative tolerance 1e-6) and divides by the
    Fisher information of one observation (1 for one event on the log-hazard
    scale). A single-component N(m, s^2) gives exactly 1/s^2.
    """
    if fisher_information <= 0:
        raise ValueError("fisher_information must be positive")
    center = mixture.mean()
    spread = mixture.sd()
    lo, hi = center - 10.0 * spread, center + 10.0 * spread

    def integrand(t):
        return float(mixture.information(t) * mixture.pdf(t))

    value, abserr = quad(integrand, lo, hi, epsrel=1e-6, epsabs=0.0, limit=200)
    if not math.isfinite(value) or (value > 0 and abserr / value > 1e-4):
        raise RuntimeError(
            f"quadrature did not converge (value {value}, abserr {abserr})"
        )
    return value / fisher_information


def total_ene(mixtures) -> float:
    """Total effective number of events: sum of per-interval ESS values."""
    return float(sum(ess_elir(m) for m in mixtures))
