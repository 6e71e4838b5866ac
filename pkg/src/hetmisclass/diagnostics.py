"""Convergence diagnostics for MCMC draws arranged as ``(chains, draws)``.

R-hat is the rank-normalised split statistic (maximum of the bulk and the
folded version); the effective sample size uses Geyer's initial monotone
sequence on rank-normalised split chains.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import stats


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected draws shaped (chains, draws)")
    return x


def split_chains(x) -> np.ndarray:
    """Split every chain into halves, dropping the middle draw if odd."""
    x = _as_chains(x)
    n = x.shape[1]
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def rank_normalize(x) -> np.ndarray:
    """Normal scores of the pooled ranks (average ranks for ties)."""
    x = _as_chains(x)
    r = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x) -> float:
    m, n = x.shape
    if n < 2:
        return np.nan
    chain_mean = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * chain_mean.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def rhat(x) -> float:
    """Rank-normalised split R-hat; NaN (with a warning) for a single chain."""
    x = _as_chains(x)
    if x.shape[0] < 2:
        warnings.warn("R-hat needs at least two chains; returning NaN", RuntimeWarning, stacklevel=2)
        return np.nan
    if np.all(x == x.flat[0]):
        return 1.0
    s = split_chains(x)
    bulk = _rhat_basic(rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = _rhat_basic(rank_normalize(folded))
    return float(max(bulk, tail))


def _autocov(x) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    m, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size, axis=1)
    ac = np.fft.irfft(f * np.conjugate(f), size, axis=1)[:, :n]
    return ac / n


def ess_raw(x, split: bool = True) -> float:
    """Effective sample size with Geyer's initial monotone sequence (not capped)."""
    x = _as_chains(x)
    if split:
        x = split_chains(x)
    m, n = x.shape
    if n < 4:
        return np.nan
    if np.all(x == x.flat[0]):
        return float(m * n)
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0.0:
        rho[max_t + 1] = rho_even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1:max_t + 2].sum()
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(x) -> float:
    """Bulk ESS on rank-normalised split chains, capped at the number of draws."""
    x = _as_chains(x)
    if np.all(x == x.flat[0]):
        return float(x.size)
    return float(min(ess_raw(rank_normalize(split_chains(x)), split=False), x.size))


def ess_mean(x) -> float:
    """ESS for the posterior mean (no rank normalisation), capped at the draw count."""
    x = _as_chains(x)
    return float(min(ess_raw(x), x.size))


def mcse_mean(x) -> float:
    """Monte Carlo standard error of the mean, ``sd / sqrt(ess)``.

    Uses the uncapped ESS: draws that are anticorrelated genuinely estimate
    the mean better than independent ones.
    """
    x = _as_chains(x)
    ess = ess_raw(x)
    return float(x.std(ddof=1) / np.sqrt(ess))
