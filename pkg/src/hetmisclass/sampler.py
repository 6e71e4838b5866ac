"""Multi-chain adaptive HMC for the model family, with diagnostics.

Every chain owns an independent PCG64 stream spawned from
``SeedSequence(seed)`` by chain index, so results do not depend on whether
chains run sequentially or in worker processes.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diagnostics as dg
from .model import ModelSpec, ParamBlock, constrain, dimension, log_posterior_fn, named_scalars, pointwise_loglik
from .nuts import ChainResult, run_chain

DIVERGENCE_FLAG_FRACTION = 0.25
MAX_INIT_ATTEMPTS = 100


class InitializationError(RuntimeError):
    """No finite starting point found."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 5000
    draws: int = 5000
    target_accept: float = 0.8
    max_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    n_jobs: int = 1

    def __post_init__(self):
        if int(self.chains) < 1:
            raise ValueError("chains must be at least 1")
        if int(self.warmup) < 100:
            raise ValueError("warmup must be at least 100")
        if int(self.draws) < 1:
            raise ValueError("draws must be at least 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 1 <= int(self.max_depth) <= 30:
            raise ValueError("max_depth must lie in [1, 30]")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.init_radius > 0:
            raise ValueError("init_radius must be positive")
        if int(self.n_jobs) < 1:
            raise ValueError("n_jobs must be at least 1")

    @property
    def max_leapfrog(self) -> int:
        return 2 ** int(self.max_depth)

    def to_dict(self) -> dict:
        return asdict(self)


def chain_rngs(seed: int, chains: int) -> list[np.random.Generator]:
    """One independent generator per chain, derived from ``(seed, chain index)``."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(int(seed)).spawn(chains)]


def initialize(target, seed, dim: int | None = None, radius: float = 2.0) -> np.ndarray:
    """Uniform draw in ``[-radius, radius]^dim`` with a finite log density.

    ``target`` is a :class:`ModelSpec` or a ``logp_grad`` callable (then
    ``dim`` is required); ``seed`` is an integer or a Generator.
    """
    if isinstance(target, ModelSpec):
        logp_grad = log_posterior_fn(target)
        dim = dimension(target)
    else:
        logp_grad = target
        if dim is None:
            raise ValueError("dim is required with a bare log density")
    rng = seed if isinstance(seed, np.random.Generator) else chain_rngs(seed, 1)[0]
    for _ in range(MAX_INIT_ATTEMPTS):
        u = rng.uniform(-radius, radius, size=dim)
        lp, g = logp_grad(u)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return u
    raise InitializationError(f"no finite log density after {MAX_INIT_ATTEMPTS} initial draws")


def run_chains(logp_grad, dim: int, cfg: SamplerConfig) -> list[ChainResult]:
    """Run ``cfg.chains`` chains sequentially on a bare log density."""
    out = []
    for rng in chain_rngs(cfg.seed, cfg.chains):
        q0 = initialize(logp_grad, rng, dim, cfg.init_radius)
        out.append(run_chain(logp_grad, q0, rng, cfg.warmup, cfg.draws, cfg.target_accept, cfg.max_depth))
    return out


def _model_chain(spec: ModelSpec, cfg: SamplerConfig, index: int) -> ChainResult:
    rng = chain_rngs(cfg.seed, cfg.chains)[index]
    logp_grad = log_posterior_fn(spec)
    q0 = initialize(logp_grad, rng, dimension(spec), cfg.init_radius)
    return run_chain(logp_grad, q0, rng, cfg.warmup, cfg.draws, cfg.target_accept, cfg.max_depth)


@dataclass
class PosteriorDraws:
    """Retained draws of one fit, arranged ``(chains, draws, ...)``."""

    spec: ModelSpec
    config: SamplerConfig
    unconstrained: np.ndarray
    params: ParamBlock
    loglik: np.ndarray
    divergent: np.ndarray
    stats: dict = field(default_factory=dict)
    step_size: np.ndarray | None = None
    inv_metric: np.ndarray | None = None

    @property
    def n_chains(self) -> int:
        return self.unconstrained.shape[0]

    @property
    def n_draws(self) -> int:
        return self.unconstrained.shape[1]

    @property
    def divergence_fraction(self) -> float:
        return float(self.divergent.mean())

    @property
    def flagged(self) -> bool:
        return self.divergence_fraction > DIVERGENCE_FLAG_FRACTION

    def scalars(self) -> dict[str, np.ndarray]:
        """Named reported scalars, each ``(chains, draws)``."""
        return named_scalars(self.spec, self.params)

    def flat_params(self) -> ParamBlock:
        """The parameter block with chains and draws merged into one axis."""
        items = {}
        for name, val in self.params.items():
            val = np.asarray(val)
            items[name] = val.reshape((-1,) + val.shape[2:])
        return ParamBlock(**items)

    def flat_loglik(self) -> np.ndarray:
        return self.loglik.reshape(-1, self.loglik.shape[-1])


@dataclass
class Diagnostics:
    rhat: dict
    ess_bulk: dict
    divergences: int
    divergence_fraction: float
    accept_stat_mean: float
    flagged: bool
    warnings: list = field(default_factory=list)

    @property
    def max_rhat(self) -> float:
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return float(max(vals)) if vals else float("nan")

    @property
    def min_ess(self) -> float:
        vals = [v for v in self.ess_bulk.values() if np.isfinite(v)]
        return float(min(vals)) if vals else float("nan")


def diagnose(draws, warn: bool = True) -> Diagnostics:
    """R-hat and bulk ESS for each named scalar of ``draws``.

    ``draws`` is a :class:`PosteriorDraws` or a mapping of name to
    ``(chains, draws)`` arrays.
    """
    if isinstance(draws, PosteriorDraws):
        scalars = draws.scalars()
        div = draws.divergent
        acc = float(draws.stats["accept_stat"].mean()) if "accept_stat" in draws.stats else float("nan")
    else:
        scalars = {k: np.asarray(v, dtype=float) for k, v in dict(draws).items()}
        div = np.zeros((1, 1), dtype=bool)
        acc = float("nan")
    msgs = []
    first = np.asarray(next(iter(scalars.values()))) if scalars else np.zeros((0, 0))
    n_chains = first.shape[0] if first.ndim == 2 else 1
    rh, ess = {}, {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for name, x in scalars.items():
            x = np.asarray(x, dtype=float)
            x = x.reshape(-1, x.shape[-1])
            rh[name] = dg.rhat(x) if x.shape[0] > 1 else float("nan")
            ess[name] = dg.ess_bulk(x)
    if n_chains < 2:
        msgs.append("single chain: R-hat omitted")
        if warn:
            warnings.warn("R-hat needs at least two chains; omitted", RuntimeWarning, stacklevel=2)
    frac = float(np.mean(div))
    flagged = frac > DIVERGENCE_FLAG_FRACTION
    if flagged:
        msgs.append(f"{frac:.1%} of transitions diverged")
        if warn:
            warnings.warn(f"{frac:.1%} of post-warmup transitions diverged", RuntimeWarning, stacklevel=2)
    return Diagnostics(rh, ess, int(np.sum(div)), frac, acc, flagged, msgs)


def sample(spec: ModelSpec, cfg: SamplerConfig | None = None, warn: bool = True):
    """Fit ``spec`` and return ``(PosteriorDraws, Diagnostics)``."""
    cfg = cfg or SamplerConfig()
    if cfg.n_jobs > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.n_jobs, cfg.chains)) as pool:
            results = list(pool.map(_model_chain, [spec] * cfg.chains, [cfg] * cfg.chains, range(cfg.chains)))
    else:
        results = [_model_chain(spec, cfg, c) for c in range(cfg.chains)]
    u = np.stack([r.draws for r in results])
    params = constrain(spec, u)
    loglik = pointwise_loglik(spec, params)
    stats = {name: np.stack([getattr(r, name) for r in results])
             for name in ("lp", "accept_stat", "step_size", "tree_depth", "n_leapfrog", "energy")}
    stats["warmup_divergences"] = np.array([r.warmup_divergences for r in results])
    draws = PosteriorDraws(spec, cfg, u, params, loglik, np.stack([r.divergent for r in results]), stats,
                           np.array([r.final_step_size for r in results]),
                           np.stack([r.inv_metric for r in results]))
    return draws, diagnose(draws, warn=warn)
