"""Posterior summaries, model comparison, scoring rules and prediction.

Conventions
-----------
* Quantiles use linear interpolation between order statistics (numpy's
  default, "type 7").
* Credible intervals are equal-tailed.
* WAIC and LOO-IC are on the deviance scale: lower is better.
* The pointwise unit is one multinomial row (one gold cause in one country).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .model import ModelSpec, ParamBlock, Variant, draw_country, named_scalars, recompose_array

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
SUMMARY_COLUMNS = ("mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5")
PARETO_K_THRESHOLD = 0.7


# ------------------------------------------------------------------ summaries

@dataclass
class SummaryTable:
    """Posterior mean, sd and quantiles per named scalar."""

    names: list[str]
    values: np.ndarray          # (n_names, len(SUMMARY_COLUMNS))
    columns: tuple[str, ...] = SUMMARY_COLUMNS

    def __len__(self):
        return len(self.names)

    def row(self, name: str) -> dict[str, float]:
        i = self.names.index(name)
        return dict(zip(self.columns, self.values[i].tolist()))

    def column(self, col: str) -> np.ndarray:
        return self.values[:, self.columns.index(col)]

    def rows(self):
        for name, vals in zip(self.names, self.values):
            yield name, vals


def summarize_array(x) -> np.ndarray:
    """Mean, sd (ddof=1; 0 for a single draw) and the summary quantiles of one scalar."""
    x = np.ascontiguousarray(np.asarray(x, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("cannot summarise an empty set of draws")
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    q = np.quantile(x, QUANTILES)
    # guard the last-ulp rounding of interpolation so quantiles stay monotone and within range
    q = np.clip(np.maximum.accumulate(q), x.min(), x.max())
    return np.concatenate([[x.mean(), sd], q])


def summarize(draws) -> SummaryTable:
    """Summary table for a fit or for a mapping ``name -> draws``.

    Accepts a :class:`~hetmisclass.sampler.PosteriorDraws`, a mapping of
    names to arrays of any shape (all draws of one scalar), or a
    :class:`PredictiveDraws`.
    """
    if hasattr(draws, "scalars"):
        scalars = draws.scalars()
    else:
        scalars = dict(draws)
    if not scalars:
        raise ValueError("nothing to summarise")
    names = list(scalars)
    vals = np.array([summarize_array(scalars[n]) for n in names])
    return SummaryTable(names, vals)


def credible_interval(x, level: float = 0.95, axis=0):
    """Equal-tailed interval ``(lower, upper)`` along ``axis``."""
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.asarray(x, dtype=float), [tail, 1.0 - tail], axis=axis)
    return lo, hi


# ------------------------------------------------------------ model comparison

def _check_loglik(loglik) -> np.ndarray:
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim == 1:
        ll = ll[:, None]
    if ll.ndim != 2:
        ll = ll.reshape(-1, ll.shape[-1])
    if ll.shape[0] < 2:
        raise ValueError("need at least two draws")
    if not np.all(np.isfinite(ll)):
        raise ValueError("pointwise log-likelihood contains non-finite values")
    return ll


@dataclass
class WAIC:
    waic: float
    lppd: float
    p_waic: float
    se: float
    pointwise: np.ndarray


def waic(loglik) -> WAIC:
    """WAIC on the deviance scale from a ``(draws, rows)`` log-likelihood matrix.

    ``p_waic`` sums the per-row variance over draws (ddof=1).
    """
    ll = _check_loglik(loglik)
    s = ll.shape[0]
    lppd_i = special.logsumexp(ll, axis=0) - np.log(s)
    p_i = ll.var(axis=0, ddof=1)
    pw = -2.0 * (lppd_i - p_i)
    n = pw.size
    se = float(np.sqrt(n * pw.var())) if n > 1 else 0.0
    return WAIC(float(pw.sum()), float(lppd_i.sum()), float(p_i.sum()), se, pw)


def _gpd_fit(x):
    """Generalised Pareto fit to sorted exceedances ``x`` (ascending).

    Profile-posterior estimate of Zhang and Stephens with the weakly
    informative prior on the shape used by PSIS.
    """
    prior_bs, prior_k = 3.0, 10.0
    n = x.size
    m = 30 + int(np.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b = b / (prior_bs * x[int(n / 4 + 0.5) - 1]) + 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    len_scale = n * (np.log(-(b / k)) - k - 1.0)
    w = np.exp(len_scale - special.logsumexp(len_scale))
    keep = w >= 10 * np.finfo(float).eps
    w, b = w[keep], b[keep]
    w = w / w.sum()
    b_post = np.sum(b * w)
    k_post = np.log1p(-b_post * x).mean()
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return float(k_post), float(sigma)


def _gpd_quantile(p, k, sigma):
    if sigma <= 0:
        return np.full_like(p, np.nan)
    if abs(k) < np.finfo(float).eps:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def tail_size(n_draws: int) -> int:
    """Number of largest weights fitted: 20% of the draws, at least 5."""
    return int(min(max(np.ceil(0.2 * n_draws), 5), n_draws - 1))


def psis(log_ratios):
    """Pareto-smoothed importance sampling for one vector of log ratios.

    Returns normalised smoothed log weights and the tail shape estimate
    ``k``.  ``k`` is ``inf`` when the tail cannot be fitted.
    """
    lw = np.array(log_ratios, dtype=float)
    lw -= lw.max()
    s = lw.size
    m = tail_size(s)
    order = np.argsort(lw, kind="stable")
    tail_idx = order[-m:]
    cutoff = lw[order[-m - 1]]
    tail = lw[tail_idx]
    k = np.inf
    if m >= 5 and np.ptp(tail) > 0:
        exceed = np.sort(np.exp(tail) - np.exp(cutoff))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            k, sigma = _gpd_fit(exceed) if exceed[int(m / 4 + 0.5) - 1] > 0 else (np.inf, np.nan)
        if not (np.isfinite(k) and np.isfinite(sigma) and sigma > 0):
            # the tail underflows or the fit breaks down: report an unusable tail
            k = np.inf
        else:
            p = (np.arange(m) + 0.5) / m
            smoothed = np.log(_gpd_quantile(p, k, sigma) + np.exp(cutoff))
            lw[tail_idx] = np.minimum(smoothed, 0.0)
    lw -= special.logsumexp(lw)
    return lw, float(k)


@dataclass
class ComparisonMetrics:
    """WAIC and PSIS-LOO on the deviance scale (lower is better)."""

    waic: float
    loo_ic: float
    se_waic: float
    se_loo: float
    p_waic: float
    p_loo: float
    lppd: float
    pareto_k: np.ndarray
    elpd_loo_pointwise: np.ndarray = field(repr=False, default=None)

    @property
    def n_high_k(self) -> int:
        return int(np.sum(self.pareto_k > PARETO_K_THRESHOLD))

    @property
    def flagged(self) -> bool:
        return self.n_high_k > 0


def loo_ic(loglik) -> ComparisonMetrics:
    """PSIS-LOO information criterion plus WAIC for a ``(draws, rows)`` matrix."""
    ll = _check_loglik(loglik)
    w = waic(ll)
    n_rows = ll.shape[1]
    elpd = np.empty(n_rows)
    ks = np.empty(n_rows)
    for i in range(n_rows):
        lw, k = psis(-ll[:, i])
        elpd[i] = special.logsumexp(lw + ll[:, i])
        ks[i] = k
    looic_i = -2.0 * elpd
    se_loo = float(np.sqrt(n_rows * looic_i.var())) if n_rows > 1 else 0.0
    return ComparisonMetrics(
        waic=w.waic, loo_ic=float(looic_i.sum()), se_waic=w.se, se_loo=se_loo,
        p_waic=w.p_waic, p_loo=float(w.lppd - elpd.sum()), lppd=w.lppd,
        pareto_k=ks, elpd_loo_pointwise=elpd)


# --------------------------------------------------------------- scoring rules

def interval_score(lower, upper, truth, alpha: float = 0.05):
    """Interval score of a central ``(1 - alpha)`` interval; lower is better.

    ``(u - l) + (2/alpha)(l - x)[x < l] + (2/alpha)(x - u)[x > u]``; a truth
    exactly on a bound counts as covered.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    score = (upper - lower) + (2.0 / alpha) * (lower - truth) * (truth < lower) \
        + (2.0 / alpha) * (truth - upper) * (truth > upper)
    return score if score.ndim else float(score)


@dataclass
class BiasMSE:
    bias: np.ndarray            # signed estimate - truth, per cell
    abs_bias: np.ndarray
    sq_error: np.ndarray

    @property
    def mean_abs_bias(self) -> float:
        return float(self.abs_bias.mean())

    @property
    def mse(self) -> float:
        return float(self.sq_error.mean())


def bias_and_mse(estimates, truth) -> BiasMSE:
    """Per-cell absolute bias and squared error of point estimates."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: estimates {est.shape} vs truth {tru.shape}")
    d = est - tru
    return BiasMSE(d, np.abs(d), d * d)


# ------------------------------------------------------------------ prediction

@dataclass
class PredictiveDraws:
    """Predictive draws of misclassification matrices for new countries."""

    countries: list[str]
    causes: tuple[str, ...]
    sens: np.ndarray            # (draws, countries, C)
    relfp: np.ndarray           # (draws, countries, C, C-1)

    @property
    def matrices(self) -> np.ndarray:
        return recompose_array(self.sens, self.relfp)

    def scalars(self) -> dict[str, np.ndarray]:
        m = self.matrices
        out = {}
        for s, country in enumerate(self.countries):
            for i, ci in enumerate(self.causes):
                for j, cj in enumerate(self.causes):
                    out[f"phi[{country},{ci},{cj}]"] = m[:, s, i, j]
        return out


def predict_new_country(draws, spec: ModelSpec | None = None, countries: Sequence[str] = ("new",),
                        seed: int = 0) -> PredictiveDraws:
    """Posterior predictive matrices for countries without validation data.

    For every retained draw the new country's sensitivities are drawn from
    ``Beta(0.5 + 2 omega_s phi_ii, 0.5 + 2 omega_s (1 - phi_ii))`` and its
    relative false-positive rows from ``Dir(0.5 + (C - 1) omega_r q_i)``.
    The partly heterogeneous model keeps the pooled relative false
    positives; the homogeneous model returns the pooled draws unchanged.

    ``draws`` is a :class:`~hetmisclass.sampler.PosteriorDraws` or a flat
    :class:`ParamBlock` (then ``spec`` is required).
    """
    if hasattr(draws, "flat_params"):
        spec = draws.spec if spec is None else spec
        block = draws.flat_params()
    else:
        block = draws
    if spec is None:
        raise ValueError("a ModelSpec is required with a bare ParamBlock")
    if block is None or block.sens is None:
        raise ValueError("prediction needs a fitted homogeneous or heterogeneous model")
    countries = [str(c) for c in countries]
    if not countries or len(set(countries)) != len(countries):
        raise ValueError("new country names must be unique and non-empty")
    sens = np.asarray(block.sens, dtype=float).reshape(-1, spec.n_causes)
    relfp = np.asarray(block.relfp, dtype=float).reshape(-1, spec.n_causes, spec.n_causes - 1)
    r = sens.shape[0]
    k = len(countries)
    if spec.variant is Variant.HOMOGENEOUS:
        return PredictiveDraws(countries, spec.causes.labels,
                               np.repeat(sens[:, None], k, axis=1), np.repeat(relfp[:, None], k, axis=1))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    j0 = spec.hyper.jeffreys_offset
    omega_s = np.asarray(block.omega_s, dtype=float).reshape(r)
    omega_r = (np.full(r, np.inf) if spec.variant is Variant.PARTLY_HET
               else np.asarray(block.omega_r, dtype=float).reshape(r))
    out_s = np.empty((r, k, spec.n_causes))
    out_q = np.empty((r, k, spec.n_causes, spec.n_causes - 1))
    for t in range(r):
        out_s[t], out_q[t] = draw_country(rng, sens[t], relfp[t], omega_s[t], omega_r[t], k, j0)
    return PredictiveDraws(countries, spec.causes.labels, out_s, out_q)


def predictive_sensitivity_mean(sens, omega_s, j0: float = 0.5):
    """Analytic mean of the predictive sensitivity given fixed inputs."""
    sens = np.asarray(sens, dtype=float)
    return (j0 + 2.0 * omega_s * sens) / (2.0 * j0 + 2.0 * omega_s)


# --------------------------------------------------------------- matrix tables

def matrix_table(spec: ModelSpec, block: ParamBlock, level: float = 0.95) -> list[tuple]:
    """Per-country, per-cell posterior mean and equal-tailed interval.

    Rows are ``(country, gold, predicted, mean, lower, upper)``; pooled
    variants report the pooled matrix for every country.
    """
    mats = block.country_matrices(spec.n_countries)
    mats = np.asarray(mats).reshape((-1,) + mats.shape[-3:])
    mean = mats.mean(axis=0)
    lo, hi = credible_interval(mats, level, axis=0)
    rows = []
    labels = spec.causes.labels
    for s, country in enumerate(spec.countries):
        for i, ci in enumerate(labels):
            for j, cj in enumerate(labels):
                rows.append((country, ci, cj, float(mean[s, i, j]), float(lo[s, i, j]), float(hi[s, i, j])))
    return rows


def compare(fits: Mapping[str, object]) -> dict[str, ComparisonMetrics]:
    """LOO/WAIC for several fits of the same data, keyed like the input."""
    return {name: loo_ic(d.flat_loglik()) for name, d in fits.items()}


__all__ = [
    "QUANTILES", "SUMMARY_COLUMNS", "SummaryTable", "summarize", "summarize_array", "credible_interval",
    "WAIC", "waic", "psis", "tail_size", "ComparisonMetrics", "loo_ic", "interval_score", "BiasMSE",
    "bias_and_mse", "PredictiveDraws", "predict_new_country", "predictive_sensitivity_mean",
    "matrix_table", "compare", "named_scalars",
]
