"""Convergence diagnostics: split R-hat, bulk effective sample size, MCSE.

All functions take draws shaped (n_chains, n_draws). Chains are split in half
first, so a single chain still yields a (weak) R-hat. Constant chains are
flagged degenerate instead of propagating NaNs: they get R-hat 1, ESS equal to
the number of draws, and zero MCSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["QuantityDiagnostics", "split_rhat", "bulk_ess", "diagnose"]


@dataclass(frozen=True)
class QuantityDiagnostics:
    rhat: float
    ess: float
    mcse: float
    degenerate: bool = False


def _split(draws: np.ndarray) -> np.ndarray:
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    m, n = draws.shape
    half = n // 2
    return np.vstack([draws[:, :half], draws[:, n - half:]])


def _check(draws: np.ndarray) -> np.ndarray:
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.ndim != 2:
        raise ValueError("draws must be shaped (n_chains, n_draws)")
    if draws.shape[1] < 8:
        raise ValueError(f"insufficient draws ({draws.shape[1]}) for diagnostics")
    return draws


def split_rhat(draws: np.ndarray) -> float:
    """Potential scale reduction factor on half-split chains."""
    x = _split(_check(draws))
    m, n = x.shape
    chain_means = x.mean(axis=1)
    chain_vars = x.var(axis=1, ddof=1)
    w = chain_vars.mean()
    b = n * chain_means.var(ddof=1)
    if w == 0.0:
        return 1.0 if b == 0.0 else np.inf
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance per chain via FFT; x shape (m, n)."""
    m, n = x.shape
    centered = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conjugate(f), n=size, axis=1)[:, :n].real
    return acov / n


def _ess_from_chains(x: np.ndarray) -> float:
    """Geyer initial-monotone-sequence ESS on split chains x (m, n)."""
    m, n = x.shape
    acov = _autocovariance(x)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    mean_acov = acov.mean(axis=0)
    if m > 1:
        var_plus = (n - 1) / n * w + x.mean(axis=1).var(ddof=1)
    else:
        var_plus = (n - 1) / n * w + mean_acov[0] / n
    if var_plus == 0.0:
        return float(m * n)
    rho = 1.0 - (w - mean_acov) / var_plus
    # Geyer: sum consecutive correlation pairs while positive, enforcing a
    # monotone non-increasing sequence; tau = -1 + 2 * sum of kept pairs.
    pair_total = 0.0
    prev_pair = np.inf
    t = 0
    while t + 1 < len(rho):
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev_pair)
        prev_pair = pair
        pair_total += pair
        t += 2
    tau = max(-1.0 + 2.0 * pair_total, 1.0 / (m * n))
    ess = m * n / tau
    return float(min(ess, m * n))


def bulk_ess(draws: np.ndarray) -> float:
    """Rank-normalized effective sample size on half-split chains."""
    x = _split(_check(draws))
    if np.ptp(x) == 0.0:
        return float(x.size)
    return _ess_from_chains(_rank_normalize(x))


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    from scipy.stats import norm

    shape = x.shape
    flat = x.reshape(-1)
    ranks = np.empty_like(flat)
    order = np.argsort(flat, kind="mergesort")
    ranks[order] = np.arange(1, flat.size + 1, dtype=float)
    # average ties
    sorted_vals = flat[order]
    i = 0
    while i < flat.size:
        j = i
        while j + 1 < flat.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    u = (ranks - 0.375) / (flat.size + 0.25)
    return norm.ppf(u).reshape(shape)


def diagnose(draws: np.ndarray) -> QuantityDiagnostics:
    """Full diagnostics for one monitored quantity, draws (n_chains, n_draws)."""
    x = _check(draws)
    if np.ptp(x) == 0.0:
        return QuantityDiagnostics(rhat=1.0, ess=float(x.size), mcse=0.0, degenerate=True)
    rhat = split_rhat(x)
    ess = bulk_ess(x)
    ess_raw = _ess_from_chains(_split(x))
    sd = float(x.std(ddof=1))
    mcse = sd / np.sqrt(max(ess_raw, 1.0))
    return QuantityDiagnostics(rhat=rhat, ess=ess, mcse=float(mcse), degenerate=False)
