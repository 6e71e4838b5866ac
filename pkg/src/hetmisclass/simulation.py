"""Simulation study: synthetic multi-country data under three truth scenarios.

For every replication the harness draws a pooled matrix and country
matrices from the model hierarchy, draws paired counts, fits the
homogeneous, partly and fully heterogeneous models, and scores each fit
against the truth: WAIC and LOO-IC, in-sample error and interval scores
of the country matrices, and out-of-sample interval scores of predictive
intervals for new countries.

Every random quantity is derived from ``(seed, scenario, replication)``
(and the method for the sampler), so any cell of the results can be
regenerated on its own and the whole study is bit-for-bit reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import bias_and_mse, credible_interval, interval_score, loo_ic, predict_new_country
from .matrix import BaseParams, CauseSet, CountMatrix
from .model import (EffectSizes, Hyperparams, ModelSpec, Variant, draw_country, draw_pooled,
                    recompose_array, sample_effect_size, _rdirichlet)
from .sampler import SamplerConfig, sample

# Effect sizes in the range of the estimates reported for the motivating
# data: strong pull, moderate heterogeneity in sensitivities, stronger
# heterogeneity in relative false positives.
DEFAULT_OMEGA_P = 100.0
DEFAULT_OMEGA_S = 12.0
DEFAULT_OMEGA_R = 5.0
DEFAULT_TRUTH_SEED = 20240607

SCENARIOS = (Variant.HOMOGENEOUS, Variant.PARTLY_HET, Variant.FULLY_HET)
METHODS = (Variant.HOMOGENEOUS, Variant.PARTLY_HET, Variant.FULLY_HET)
_CODE = {Variant.BASE: 0, Variant.HOMOGENEOUS: 1, Variant.PARTLY_HET: 2, Variant.FULLY_HET: 3}

DESK_SAMPLER = SamplerConfig(chains=1, warmup=1000, draws=1000)
FULL_SAMPLER = SamplerConfig(chains=1, warmup=5000, draws=5000)


@dataclass(frozen=True)
class ScenarioConfig:
    """One truth scenario and how to simulate and fit it.

    ``base`` and ``effect_sizes`` default to a seeded draw of ``(a, alpha)``
    from their priors and to fixed effect sizes; ``effect_source="prior"``
    draws the effect sizes from their shrinkage prior with ``truth_seed``
    instead.  ``truth_matrices`` (S, C, C) fixes the country matrices for
    every replication.  ``oos`` selects the out-of-sample target:
    ``"holdout"`` scores prediction intervals against freshly drawn matrices
    of ``n_holdout`` new countries; ``"loco"`` refits without each country
    in turn and scores against that country's truth.
    """

    truth: Variant = Variant.FULLY_HET
    n_causes: int = 5
    n_countries: int = 6
    n_per_country: int = 50
    replications: int = 10
    base: BaseParams | None = None
    effect_sizes: EffectSizes | None = None
    effect_source: str = "fixed"
    truth_matrices: np.ndarray | None = None
    margins: tuple[float, ...] | None = None
    truth_seed: int = DEFAULT_TRUTH_SEED
    seed: int = 0
    sampler: SamplerConfig = DESK_SAMPLER
    methods: tuple[Variant, ...] = METHODS
    hyper: Hyperparams = field(default_factory=Hyperparams)
    n_holdout: int = 1
    oos: str = "holdout"
    level: float = 0.95
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "truth", Variant.parse(self.truth))
        object.__setattr__(self, "methods", tuple(Variant.parse(m) for m in self.methods))
        if self.truth not in SCENARIOS:
            raise ValueError("truth must be homogeneous, partly-het or fully-het")
        if self.n_causes < 3:
            raise ValueError("simulation needs at least three causes")
        if self.n_countries < 2:
            raise ValueError("simulation needs at least two countries")
        if self.n_per_country < 1:
            raise ValueError("n_per_country must be at least 1")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.effect_source not in ("fixed", "prior"):
            raise ValueError("effect_source must be 'fixed' or 'prior'")
        if self.oos not in ("holdout", "loco", "none"):
            raise ValueError("oos must be 'holdout', 'loco' or 'none'")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValueError("methods must be chosen among the three hierarchical variants")
        if self.base is not None and self.base.n_causes != self.n_causes:
            raise ValueError("base parameters do not match n_causes")
        es = self.effect_sizes
        if es is not None:
            if self.truth is Variant.PARTLY_HET and np.isfinite(es.omega_r):
                raise ValueError("the partly heterogeneous scenario carries no omega_r")
            if self.truth is Variant.HOMOGENEOUS and (np.isfinite(es.omega_s) or np.isfinite(es.omega_r)):
                raise ValueError("the homogeneous scenario carries no omega_s or omega_r")
        if self.margins is not None:
            m = np.asarray(self.margins, dtype=float)
            if m.shape != (self.n_causes,) or np.any(m < 0) or not np.isclose(m.sum(), 1.0):
                raise ValueError("margins must be a probability vector over the causes")
        if self.truth_matrices is not None:
            tm = np.asarray(self.truth_matrices, dtype=float)
            if tm.shape != (self.n_countries, self.n_causes, self.n_causes):
                raise ValueError("truth_matrices must be shaped (S, C, C)")
            if np.any(tm < 0) or not np.allclose(tm.sum(axis=-1), 1.0, atol=1e-12):
                raise ValueError("truth matrices must be row-stochastic")
            object.__setattr__(self, "truth_matrices", tm)
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.n_holdout < 1:
            raise ValueError("n_holdout must be at least 1")

    @classmethod
    def desk(cls, truth, **kw) -> "ScenarioConfig":
        """Desk-scale profile: 10 replications, 1000 warmup and 1000 draws."""
        kw.setdefault("replications", 10)
        kw.setdefault("sampler", DESK_SAMPLER)
        return cls(truth=truth, **kw)

    @classmethod
    def full(cls, truth, **kw) -> "ScenarioConfig":
        """Full-scale profile: 50 replications, 5000 warmup and 5000 draws."""
        kw.setdefault("replications", 50)
        kw.setdefault("sampler", FULL_SAMPLER)
        return cls(truth=truth, **kw)

    @property
    def causes(self) -> CauseSet:
        return CauseSet.default(self.n_causes)

    @property
    def countries(self) -> tuple[str, ...]:
        return tuple(f"country{s + 1}" for s in range(self.n_countries))

    def margin(self) -> np.ndarray:
        if self.margins is None:
            return np.full(self.n_causes, 1.0 / self.n_causes)
        return np.asarray(self.margins, dtype=float)

    def truth_parameters(self) -> tuple[BaseParams, EffectSizes]:
        """Base parameters and effect sizes shared by every replication."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(self.truth_seed), 0])))
        h = self.hyper
        if self.base is None:
            a = rng.beta(h.b, h.d, size=self.n_causes)
            pull = _rdirichlet(rng, h.pull_concentration(self.n_causes))
            base = BaseParams(a, pull)
        else:
            base = self.base
        if self.effect_sizes is not None:
            es = self.effect_sizes
        elif self.effect_source == "prior":
            w = sample_effect_size(rng, h.eps, size=3, omega_max=h.omega_max)
            es = EffectSizes(w[0], w[1], w[2], self.n_causes)
        else:
            es = EffectSizes(DEFAULT_OMEGA_P, DEFAULT_OMEGA_S, DEFAULT_OMEGA_R, self.n_causes)
        if self.truth is Variant.HOMOGENEOUS:
            es = EffectSizes(es.omega_p, np.inf, np.inf, self.n_causes)
        elif self.truth is Variant.PARTLY_HET:
            es = EffectSizes(es.omega_p, es.omega_s, np.inf, self.n_causes)
        return base, es

    def to_dict(self) -> dict:
        base, es = self.truth_parameters()
        return {
            "truth": self.truth.value, "n_causes": self.n_causes, "n_countries": self.n_countries,
            "n_per_country": self.n_per_country, "replications": self.replications,
            "base": {"a": base.accuracy.tolist(), "alpha": base.pull.tolist()},
            "effect_sizes": {"omega_p": _jsonable(es.omega_p), "omega_s": _jsonable(es.omega_s),
                             "omega_r": _jsonable(es.omega_r)},
            "effect_source": self.effect_source,
            "truth_matrices": None if self.truth_matrices is None else self.truth_matrices.tolist(),
            "margins": self.margin().tolist(), "truth_seed": int(self.truth_seed), "seed": int(self.seed),
            "sampler": self.sampler.to_dict(), "methods": [m.value for m in self.methods],
            "hyper": self.hyper.to_dict(), "n_holdout": self.n_holdout, "oos": self.oos, "level": self.level,
        }


def _jsonable(x):
    x = float(x)
    return "inf" if math.isinf(x) else x


def _seed_sequence(cfg: ScenarioConfig, replication: int, *extra) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(cfg.seed), _CODE[cfg.truth], int(replication), *extra])


def replication_seed(cfg: ScenarioConfig, replication: int) -> int:
    """64-bit seed of the data of one replication."""
    return int(_seed_sequence(cfg, replication).generate_state(1, np.uint64)[0])


def method_seed(cfg: ScenarioConfig, replication: int, method: Variant, fold: int = 0) -> int:
    """64-bit sampler seed of one (replication, method[, fold]) fit."""
    return int(_seed_sequence(cfg, replication, 100 + _CODE[method], fold).generate_state(1, np.uint64)[0])


@dataclass
class Replicate:
    counts: list[CountMatrix]
    truth: np.ndarray              # (S, C, C)
    pooled: np.ndarray             # (C, C)
    holdout: np.ndarray | None     # (n_holdout, C, C)
    seed: int


def generate_replicate(cfg: ScenarioConfig, replication_seed_value: int) -> Replicate:
    """Truth matrices, counts and hold-out matrices for one replication."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(replication_seed_value))))
    base, es = cfg.truth_parameters()
    n, s_count = cfg.n_causes, cfg.n_countries
    j0 = cfg.hyper.jeffreys_offset
    sens, relfp = draw_pooled(rng, base.accuracy, base.pull, es.omega_p, n, j0)
    pooled = recompose_array(sens, relfp)
    if cfg.truth_matrices is not None:
        truth = cfg.truth_matrices.copy()
        holdout = None
    else:
        ss, rs = draw_country(rng, sens, relfp, es.omega_s, es.omega_r, s_count, j0)
        truth = recompose_array(ss, rs)
        hs, hr = draw_country(rng, sens, relfp, es.omega_s, es.omega_r, cfg.n_holdout, j0)
        holdout = recompose_array(hs, hr)
    counts = []
    margin = cfg.margin()
    for s in range(s_count):
        n_si = rng.multinomial(cfg.n_per_country, margin)
        rows = np.array([rng.multinomial(n_si[i], truth[s, i]) for i in range(n)])
        counts.append(CountMatrix(rows, cfg.causes))
    return Replicate(counts, truth, pooled, holdout, int(replication_seed_value))


def generate_dataset(cfg: ScenarioConfig, replication_seed_value: int):
    """``(counts per country, truth matrices)`` for one replication."""
    rep = generate_replicate(cfg, replication_seed_value)
    return rep.counts, rep.truth


# -------------------------------------------------------------------- fitting

METRIC_NAMES = (
    "waic", "loo_ic", "se_waic", "se_loo", "p_waic", "p_loo", "max_pareto_k", "n_high_k",
    "mse", "mse_sens", "mse_fp", "abs_bias", "is_score", "is_score_sens", "is_score_fp", "coverage",
    "oos_is_score", "oos_is_score_sens", "oos_is_score_fp", "oos_coverage",
    "divergences", "min_ess",
)


def _cell_scores(lo, hi, mean, truth, alpha):
    n = truth.shape[-1]
    diag = np.eye(n, dtype=bool)
    diag = np.broadcast_to(diag, truth.shape)
    score = interval_score(lo, hi, truth, alpha)
    err = bias_and_mse(mean, truth)
    covered = (truth >= lo) & (truth <= hi)
    return {
        "mse": err.mse, "mse_sens": float(err.sq_error[diag].mean()), "mse_fp": float(err.sq_error[~diag].mean()),
        "abs_bias": err.mean_abs_bias,
        "is_score": float(score.mean()), "is_score_sens": float(score[diag].mean()),
        "is_score_fp": float(score[~diag].mean()), "coverage": float(covered.mean()),
    }


def _predictive_scores(fit, truth, level, seed, names):
    pred = predict_new_country(fit, countries=names, seed=seed)
    mats = pred.matrices                       # (draws, k, C, C)
    lo, hi = credible_interval(mats, level, axis=0)
    sc = _cell_scores(lo, hi, mats.mean(axis=0), truth, 1.0 - level)
    return {"oos_is_score": sc["is_score"], "oos_is_score_sens": sc["is_score_sens"],
            "oos_is_score_fp": sc["is_score_fp"], "oos_coverage": sc["coverage"]}


def fit_and_score(cfg: ScenarioConfig, rep: Replicate, method: Variant, replication: int) -> dict:
    """Fit one method to one replicate and compute every metric."""
    seed = method_seed(cfg, replication, method)
    row = {"scenario": cfg.truth.value, "replication": replication, "method": method.value,
           "data_seed": rep.seed, "sampler_seed": seed, "failed": False, "flagged": False, "message": ""}
    try:
        spec = ModelSpec(method, rep.counts, cfg.hyper, cfg.countries)
        fit, diag = sample(spec, replace(cfg.sampler, seed=seed), warn=False)
    except (RuntimeError, ValueError, FloatingPointError) as exc:
        row.update({m: float("nan") for m in METRIC_NAMES})
        row.update(failed=True, message=f"{type(exc).__name__}: {exc}")
        return row
    cm = loo_ic(fit.flat_loglik())
    mats = fit.flat_params().country_matrices(spec.n_countries)
    lo, hi = credible_interval(mats, cfg.level, axis=0)
    row.update(waic=cm.waic, loo_ic=cm.loo_ic, se_waic=cm.se_waic, se_loo=cm.se_loo, p_waic=cm.p_waic,
               p_loo=cm.p_loo, max_pareto_k=float(np.max(cm.pareto_k)), n_high_k=float(cm.n_high_k))
    row.update(_cell_scores(lo, hi, mats.mean(axis=0), rep.truth, 1.0 - cfg.level))
    row.update(divergences=float(diag.divergences), min_ess=diag.min_ess)
    row["flagged"] = bool(diag.flagged)
    if diag.flagged:
        row["message"] = "; ".join(diag.warnings)
    pred_seed = int(_seed_sequence(cfg, replication, 200 + _CODE[method]).generate_state(1, np.uint64)[0])
    if cfg.oos == "holdout" and rep.holdout is not None:
        names = [f"holdout{k + 1}" for k in range(cfg.n_holdout)]
        row.update(_predictive_scores(fit, rep.holdout, cfg.level, pred_seed, names))
    elif cfg.oos == "loco":
        row.update(_loco_scores(cfg, rep, method, replication))
    else:
        row.update(oos_is_score=float("nan"), oos_is_score_sens=float("nan"),
                   oos_is_score_fp=float("nan"), oos_coverage=float("nan"))
    return row


def _loco_scores(cfg, rep, method, replication):
    parts = []
    for s in range(cfg.n_countries):
        keep = [c for t, c in enumerate(rep.counts) if t != s]
        names = [c for t, c in enumerate(cfg.countries) if t != s]
        spec = ModelSpec(method, keep, cfg.hyper, names)
        fit, _ = sample(spec, replace(cfg.sampler, seed=method_seed(cfg, replication, method, s + 1)), warn=False)
        seed = int(_seed_sequence(cfg, replication, 300 + _CODE[method], s).generate_state(1, np.uint64)[0])
        parts.append(_predictive_scores(fit, rep.truth[s:s + 1], cfg.level, seed, [cfg.countries[s]]))
    return {k: float(np.mean([p[k] for p in parts])) for k in parts[0]}


def run_replication(cfg: ScenarioConfig, replication: int) -> list[dict]:
    rep = generate_replicate(cfg, replication_seed(cfg, replication))
    return [fit_and_score(cfg, rep, m, replication) for m in cfg.methods]


# ---------------------------------------------------------------- aggregation

@dataclass
class ReplicationResult:
    """Per-(replication, method) metrics and their aggregation."""

    config: ScenarioConfig
    rows: list[dict]

    @property
    def methods(self) -> list[str]:
        return [m.value for m in self.config.methods]

    def ok_rows(self, method: str | None = None) -> list[dict]:
        return [r for r in self.rows if not r["failed"] and (method is None or r["method"] == method)]

    def values(self, metric: str, method) -> np.ndarray:
        """Metric per replication for one method (NaN where the fit failed)."""
        method = Variant.parse(method).value
        out = np.full(self.config.replications, np.nan)
        for r in self.rows:
            if r["method"] == method and not r["failed"]:
                out[r["replication"]] = r[metric]
        return out

    def aggregate(self) -> list[dict]:
        """Mean and Monte Carlo standard error of each metric per method."""
        out = []
        for m in self.methods:
            for metric in METRIC_NAMES:
                v = self.values(metric, m)
                v = v[np.isfinite(v)]
                mean = float(v.mean()) if v.size else float("nan")
                mcse = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
                out.append({"scenario": self.config.truth.value, "method": m, "metric": metric,
                            "n": int(v.size), "mean": mean, "mcse": mcse})
        return out

    def difference(self, metric: str, a, b) -> tuple[float, float, int]:
        """Mean paired difference ``a - b`` across replications, its MC standard error and count."""
        d = self.values(metric, a) - self.values(metric, b)
        d = d[np.isfinite(d)]
        if d.size == 0:
            return float("nan"), float("nan"), 0
        se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else float("nan")
        return float(d.mean()), se, int(d.size)

    def wins(self, metric: str, a, b) -> int:
        """Replications in which method ``a`` scores strictly lower than ``b``."""
        d = self.values(metric, a) - self.values(metric, b)
        return int(np.sum(d < 0))

    def comparisons(self) -> list[dict]:
        out = []
        ms = self.methods
        for metric in ("waic", "loo_ic", "is_score", "oos_is_score", "mse"):
            for i in range(len(ms)):
                for j in range(i + 1, len(ms)):
                    mean, se, n = self.difference(metric, ms[i], ms[j])
                    out.append({"scenario": self.config.truth.value, "metric": metric, "method_a": ms[i],
                                "method_b": ms[j], "n": n, "mean_diff": mean, "mcse": se,
                                "a_wins": self.wins(metric, ms[i], ms[j]),
                                "b_wins": self.wins(metric, ms[j], ms[i])})
        return out

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.rows if r["failed"]]

    def checks(self) -> list[dict]:
        """Qualitative expectations for the truth scenario of this study.

        * homogeneous truth: every pairwise mean WAIC difference lies within
          two Monte Carlo standard errors of zero;
        * fully heterogeneous truth: the fully heterogeneous fit has lower
          WAIC and lower LOO-IC than the homogeneous fit in at least 80% of
          replications;
        * partly heterogeneous truth: both heterogeneous fits have a lower
          mean in-sample interval score than the homogeneous fit.

        Checks whose methods were not fitted are skipped.
        """
        hom, par, ful = (v.value for v in METHODS)
        have = set(self.methods)
        truth = self.config.truth
        out = []
        if truth is Variant.HOMOGENEOUS:
            ms = self.methods
            for i in range(len(ms)):
                for j in range(i + 1, len(ms)):
                    d, se, n = self.difference("waic", ms[i], ms[j])
                    ok = bool(n > 1 and np.isfinite(se) and abs(d) <= 2.0 * se)
                    out.append({"check": f"waic {ms[i]} vs {ms[j]} within 2 MCSE", "passed": ok,
                                "detail": f"diff={d:.4g} mcse={se:.4g} n={n}"})
        elif truth is Variant.FULLY_HET and {hom, ful} <= have:
            w = self.values("waic", ful) < self.values("waic", hom)
            lo = self.values("loo_ic", ful) < self.values("loo_ic", hom)
            k = int(np.sum(w & lo))
            need = math.ceil(0.8 * self.config.replications)
            out.append({"check": f"{ful} beats {hom} on waic and loo_ic", "passed": k >= need,
                        "detail": f"{k}/{self.config.replications} replications (need {need})"})
        elif truth is Variant.PARTLY_HET and hom in have:
            for m in (par, ful):
                if m not in have:
                    continue
                d, se, n = self.difference("is_score", m, hom)
                ok = bool(n > 0 and d < 0)
                out.append({"check": f"{m} beats {hom} on in-sample interval score", "passed": ok,
                            "detail": f"mean diff={d:.4g} mcse={se:.4g} wins={self.wins('is_score', m, hom)}/{n}"})
        return out


def run_study(cfg: ScenarioConfig, progress=None) -> ReplicationResult:
    """Run every replication of ``cfg``; rows are ordered by (replication, method)."""
    reps = range(cfg.replications)
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            chunks = list(pool.map(run_replication, [cfg] * cfg.replications, reps))
    else:
        chunks = []
        for r in reps:
            chunks.append(run_replication(cfg, r))
            if progress is not None:
                progress(r, chunks[-1])
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r["replication"], [m.value for m in cfg.methods].index(r["method"])))
    return ReplicationResult(cfg, rows)


__all__ = [
    "ScenarioConfig", "Replicate", "ReplicationResult", "generate_dataset", "generate_replicate",
    "run_study", "run_replication", "fit_and_score", "replication_seed", "method_seed",
    "METRIC_NAMES", "SCENARIOS", "METHODS", "DESK_SAMPLER", "FULL_SAMPLER",
]
