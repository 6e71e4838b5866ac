"""The nested family of misclassification models.

Four variants share one parameter layout, each adding a layer:

``BASE``
    accuracy ``a`` and pull ``alpha`` only; pooled counts.
``HOMOGENEOUS``
    pooled sensitivities and relative false positives shrunk towards the
    base model through the pull strength ``omega_p``.
``PARTLY_HET``
    country sensitivities shrunk towards the pooled ones through
    ``omega_s``; relative false positives shared by all countries.
``FULLY_HET``
    country relative false positives as well, through ``omega_r``.

All parameters are sampled on an unconstrained vector; :func:`log_posterior`
returns the log density on that scale (Jacobians included) together with
its exact gradient.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from . import _compiled
from . import autodiff as ad
from .kernels import (
    beta_lpdf,
    dirichlet_lpdf,
    effect_size_inverse,
    effect_size_transform,
    interval_inverse,
    interval_transform,
    multinomial_log_coef,
    simplex_inverse,
    simplex_transform,
    weighted_log_sum,
)
from .matrix import CauseSet, CountMatrix, offdiag_index, pool

OMEGA_MAX = 1e6


class Variant(str, enum.Enum):
    BASE = "base"
    HOMOGENEOUS = "homogeneous"
    PARTLY_HET = "partly-het"
    FULLY_HET = "fully-het"

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        aliases = {"homog": "homogeneous", "partly": "partly-het", "fully": "fully-het",
                   "partly-heterogeneous": "partly-het", "fully-heterogeneous": "fully-het"}
        key = aliases.get(key, key)
        for v in cls:
            if v.value == key:
                return v
        raise ValueError(f"unknown model variant {name!r}")

    @property
    def heterogeneous(self) -> bool:
        return self in (Variant.PARTLY_HET, Variant.FULLY_HET)


@dataclass(frozen=True)
class Hyperparams:
    """Prior settings shared by all variants.

    ``b, d`` are the Beta shapes of the accuracy prior, ``e`` the Dirichlet
    concentration of the pull (``None`` means all ones), ``eps`` the shape of
    the effect-size shrinkage prior and ``jeffreys_offset`` the 0.5 added to
    every Beta/Dirichlet concentration of the shrinkage layers.
    """

    b: float = 1.0
    d: float = 1.0
    e: tuple[float, ...] | None = None
    eps: float = 0.5
    jeffreys_offset: float = 0.5
    omega_max: float = OMEGA_MAX

    def __post_init__(self):
        if self.b <= 0 or self.d <= 0:
            raise ValueError("b and d must be positive")
        if self.e is not None:
            e = tuple(float(x) for x in self.e)
            if any(x <= 0 for x in e):
                raise ValueError("pull concentrations must be positive")
            object.__setattr__(self, "e", e)
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if self.jeffreys_offset <= 0:
            raise ValueError("jeffreys_offset must be positive")
        if not self.omega_max > 0:
            raise ValueError("omega_max must be positive")

    def pull_concentration(self, n_causes: int) -> np.ndarray:
        if self.e is None:
            return np.ones(n_causes)
        if len(self.e) != n_causes:
            raise ValueError(f"e has {len(self.e)} entries for {n_causes} causes")
        return np.asarray(self.e)

    def to_dict(self) -> dict:
        return {"b": self.b, "d": self.d, "e": None if self.e is None else list(self.e),
                "eps": self.eps, "jeffreys_offset": self.jeffreys_offset, "omega_max": self.omega_max}


@dataclass(frozen=True)
class EffectSizes:
    """Prior sample sizes per category; dispersions are derived on demand."""

    omega_p: float
    omega_s: float = np.inf
    omega_r: float = np.inf
    n_causes: int = 5

    def __post_init__(self):
        for name in ("omega_p", "omega_s", "omega_r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def kappa(self):
        return 2.0 * self.omega_p

    @property
    def lam(self):
        return (self.n_causes - 1) * self.omega_p

    @property
    def gamma(self):
        return 2.0 * self.omega_s

    @property
    def delta(self):
        return (self.n_causes - 1) * self.omega_r


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    shape: tuple[int, ...]   # shape of the unconstrained coordinates

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int))

    @property
    def stop(self) -> int:
        return self.start + self.size


class Layout:
    """Named slices of the unconstrained vector."""

    def __init__(self, blocks: Sequence[tuple[str, tuple[int, ...]]]):
        self.blocks: dict[str, Block] = {}
        pos = 0
        for name, shape in blocks:
            b = Block(name, pos, tuple(shape))
            self.blocks[name] = b
            pos = b.stop
        self.size = pos

    def __contains__(self, name):
        return name in self.blocks

    def take(self, u, name):
        b = self.blocks[name]
        if isinstance(u, ad.Var):
            part = ad.getitem(u, slice(b.start, b.stop))
            return ad.reshape(part, b.shape)
        u = np.asarray(u)
        return u[..., b.start:b.stop].reshape(u.shape[:-1] + b.shape)

    def coordinate_names(self) -> list[str]:
        names = []
        for b in self.blocks.values():
            for idx in np.ndindex(*b.shape):
                names.append(f"{b.name}_raw[{','.join(str(i + 1) for i in idx)}]")
        return names


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A model variant, its hyperparameters and per-country data."""

    variant: Variant
    data: tuple[CountMatrix, ...]
    hyper: Hyperparams = field(default_factory=Hyperparams)
    countries: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        data = tuple(self.data)
        if not data:
            raise ValueError("a model needs at least one count matrix")
        object.__setattr__(self, "data", data)
        causes = data[0].causes
        if any(c.causes != causes for c in data):
            raise ValueError("all countries must share one cause set")
        if self.variant.heterogeneous and len(data) < 2:
            raise ValueError(f"{self.variant.value} needs at least two countries")
        countries = self.countries
        if countries is None:
            countries = tuple(f"country{s + 1}" for s in range(len(data)))
        countries = tuple(str(c) for c in countries)
        if len(countries) != len(data) or len(set(countries)) != len(countries):
            raise ValueError("country names must be unique and match the data")
        object.__setattr__(self, "countries", countries)
        self.hyper.pull_concentration(len(causes))

        counts = np.stack([c.counts for c in data]).astype(float)
        n = len(causes)
        off = offdiag_index(n)
        rows = np.arange(n)[:, None]
        cache = {
            "counts": counts,
            "pooled": counts.sum(axis=0),
            "diag": np.diagonal(counts, axis1=1, axis2=2).copy(),
            "off": counts[:, rows, off],
            "coef_country": multinomial_log_coef(counts),
            "offidx": off,
            "layout": _make_layout(self.variant, n, len(data)),
        }
        cache["fp"] = cache["off"].sum(axis=-1)
        cache["pooled_diag"] = cache["diag"].sum(axis=0)
        cache["pooled_fp"] = cache["fp"].sum(axis=0)
        cache["pooled_off"] = cache["off"].sum(axis=0)
        cache["coef_pooled"] = multinomial_log_coef(cache["pooled"])
        h = self.hyper
        code = {Variant.BASE: _compiled.BASE, Variant.HOMOGENEOUS: _compiled.HOMOGENEOUS,
                Variant.PARTLY_HET: _compiled.PARTLY_HET, Variant.FULLY_HET: _compiled.FULLY_HET}
        pooled_model = self.variant in (Variant.BASE, Variant.HOMOGENEOUS)
        coef = cache["coef_pooled"].sum() if pooled_model else cache["coef_country"].sum()
        t_min = 0.0 if np.isinf(h.omega_max) else 1.0 / (1.0 + h.omega_max)
        cache["compiled_args"] = (
            code[self.variant], n, len(data), cache["pooled"], cache["diag"], cache["fp"],
            cache["off"], cache["pooled_diag"], cache["pooled_fp"], cache["pooled_off"],
            float(coef), float(h.b), float(h.d), np.asarray(h.pull_concentration(n), dtype=float),
            float(h.eps), float(h.jeffreys_offset), float(t_min))
        object.__setattr__(self, "_cache", cache)

    @property
    def causes(self) -> CauseSet:
        return self.data[0].causes

    @property
    def n_causes(self) -> int:
        return len(self.causes)

    @property
    def n_countries(self) -> int:
        return len(self.data)

    @property
    def layout(self) -> Layout:
        return self._cache["layout"]

    @property
    def pooled(self) -> CountMatrix:
        return pool(self.data)

    def with_variant(self, variant) -> "ModelSpec":
        return ModelSpec(Variant.parse(variant), self.data, self.hyper, self.countries)

    def with_data(self, data, countries=None) -> "ModelSpec":
        return ModelSpec(self.variant, tuple(data), self.hyper, countries)


def _make_layout(variant: Variant, n: int, s: int) -> Layout:
    blocks = [("a", (n,)), ("pull", (n - 1,))]
    if variant is not Variant.BASE:
        blocks += [("sens", (n,)), ("relfp", (n, n - 2)), ("omega_p", ())]
    if variant.heterogeneous:
        blocks += [("sens_s", (s, n))]
        if variant is Variant.FULLY_HET:
            blocks += [("relfp_s", (s, n, n - 2))]
        blocks += [("omega_s", ())]
        if variant is Variant.FULLY_HET:
            blocks += [("omega_r", ())]
    return Layout(blocks)


def dimension(spec: ModelSpec) -> int:
    """Number of free unconstrained coordinates."""
    return spec.layout.size


# ------------------------------------------------------------------ params

@dataclass
class ParamBlock:
    """Constrained parameters of one draw (or a batch of draws).

    Country-level arrays carry the country as the first non-batch axis.
    ``relfp`` rows range over the causes other than the row's own cause.
    Unused entries are ``None``; in the partly heterogeneous model
    ``relfp_s`` is the pooled ``relfp`` repeated for every country.
    """

    a: np.ndarray
    pull: np.ndarray
    sens: np.ndarray | None = None
    relfp: np.ndarray | None = None
    omega_p: np.ndarray | None = None
    sens_s: np.ndarray | None = None
    relfp_s: np.ndarray | None = None
    omega_s: np.ndarray | None = None
    omega_r: np.ndarray | None = None

    def matrix(self) -> np.ndarray:
        """Pooled misclassification matrix (batch..., C, C)."""
        if self.sens is None:
            return base_matrix(self.a, self.pull)
        return recompose_array(self.sens, self.relfp)

    def country_matrices(self, n_countries: int | None = None) -> np.ndarray:
        """Country matrices (batch..., S, C, C); pooled models repeat the pooled matrix."""
        if self.sens_s is None:
            m = self.matrix()
            if n_countries is None:
                raise ValueError("pooled model: pass n_countries")
            return np.repeat(m[..., None, :, :], n_countries, axis=-3)
        return recompose_array(self.sens_s, self.relfp_s)

    def items(self):
        for name in ("a", "pull", "sens", "relfp", "omega_p", "sens_s", "relfp_s", "omega_s", "omega_r"):
            val = getattr(self, name)
            if val is not None:
                yield name, val


def base_matrix(a, pull):
    """Base-model matrix for (batched) arrays ``a`` (..., C), ``pull`` (..., C)."""
    a = np.asarray(a)
    pull = np.asarray(pull)
    out = (1.0 - a)[..., :, None] * pull[..., None, :]
    n = a.shape[-1]
    idx = np.arange(n)
    out[..., idx, idx] += a
    return out


def recompose_array(sens, relfp):
    """Matrix from sensitivities (..., C) and relative FP rows (..., C, C-1)."""
    sens = np.asarray(sens)
    relfp = np.asarray(relfp)
    n = sens.shape[-1]
    out = np.zeros(sens.shape + (n,))
    rows = np.arange(n)[:, None]
    out[..., rows, offdiag_index(n)] = (1.0 - sens)[..., None] * relfp
    idx = np.arange(n)
    out[..., idx, idx] = sens
    return out


def base_rel_fp_array(pull):
    pull = np.asarray(pull)
    n = pull.shape[-1]
    return pull[..., offdiag_index(n)] / (1.0 - pull)[..., :, None]


# -------------------------------------------------------------- log density

def _log_density(u, spec: ModelSpec):
    """Log posterior on the unconstrained scale, written against ``Var`` ops."""
    lay = spec.layout
    cache = spec._cache
    hyper = spec.hyper
    n = spec.n_causes
    off = cache["offidx"]
    j0 = hyper.jeffreys_offset
    variant = spec.variant

    a, lj_a = interval_transform(lay.take(u, "a"))
    pull, lj_pull = simplex_transform(lay.take(u, "pull"))
    terms = [ad.vsum(lj_a), ad.vsum(lj_pull),
             ad.vsum(beta_lpdf(a, hyper.b, hyper.d)),
             dirichlet_lpdf(pull, hyper.pull_concentration(n))]

    if variant is Variant.BASE:
        phi = ad.mul(ad.reshape(1.0 - a, (n, 1)), ad.reshape(pull, (1, n))) + ad.mul(np.eye(n), ad.reshape(a, (n, 1)))
        terms.append(weighted_log_sum(phi, cache["pooled"]) + float(cache["coef_pooled"].sum()))
        return _total(terms)

    raw_sens = lay.take(u, "sens")
    sens, lj_s = interval_transform(raw_sens)
    sens_c, _ = interval_transform(-raw_sens)
    relfp, lj_q = simplex_transform(lay.take(u, "relfp"))
    omega_p, lp_wp = effect_size_transform(lay.take(u, "omega_p"), hyper.eps, hyper.omega_max)
    terms += [ad.vsum(lj_s), ad.vsum(lj_q), lp_wp]

    # Beta prior on pooled sensitivities centred at a + (1 - a) alpha
    a_c = 1.0 - a
    m_c = ad.mul(a_c, 1.0 - pull)
    m = 1.0 - m_c
    kappa = 2.0 * omega_p
    terms.append(ad.vsum(beta_lpdf(sens, j0 + kappa * m, j0 + kappa * m_c)))
    # Dirichlet prior on relative FP centred at alpha_j / (1 - alpha_i)
    astar = ad.div(ad.getitem(pull, off), ad.reshape(1.0 - pull, (n, 1)))
    lam = (n - 1) * omega_p
    terms.append(ad.vsum(dirichlet_lpdf(relfp, j0 + lam * astar)))

    if variant is Variant.HOMOGENEOUS:
        terms.append(_decomposed_loglik(sens, sens_c, relfp, cache["pooled_diag"],
                                        cache["pooled_fp"], cache["pooled_off"])
                     + float(cache["coef_pooled"].sum()))
        return _total(terms)

    s = spec.n_countries
    raw_ss = lay.take(u, "sens_s")
    sens_s, lj_ss = interval_transform(raw_ss)
    sens_sc, _ = interval_transform(-raw_ss)
    omega_s, lp_ws = effect_size_transform(lay.take(u, "omega_s"), hyper.eps, hyper.omega_max)
    gamma = 2.0 * omega_s
    terms += [ad.vsum(lj_ss), lp_ws,
              ad.vsum(beta_lpdf(sens_s, j0 + gamma * ad.reshape(sens, (1, n)),
                                j0 + gamma * ad.reshape(sens_c, (1, n))))]
    coef = float(cache["coef_country"].sum())
    if variant is Variant.PARTLY_HET:
        terms.append(_decomposed_loglik(sens_s, sens_sc, relfp, cache["diag"], cache["fp"], cache["pooled_off"]) + coef)
        return _total(terms)

    relfp_s, lj_qs = simplex_transform(lay.take(u, "relfp_s"))
    omega_r, lp_wr = effect_size_transform(lay.take(u, "omega_r"), hyper.eps, hyper.omega_max)
    delta = (n - 1) * omega_r
    terms += [ad.vsum(lj_qs), lp_wr,
              ad.vsum(dirichlet_lpdf(relfp_s, j0 + delta * ad.reshape(relfp, (1, n, n - 1))))]
    terms.append(_decomposed_loglik(sens_s, sens_sc, relfp_s, cache["diag"], cache["fp"], cache["off"]) + coef)
    return _total(terms)


def _decomposed_loglik(sens, sens_c, relfp, diag_counts, fp_counts, off_counts):
    # multinomial kernel written through phi_ii = sens, phi_ij = (1 - sens) q_ij
    return (weighted_log_sum(sens, diag_counts) + weighted_log_sum(sens_c, fp_counts)
            + weighted_log_sum(relfp, off_counts))


def _total(terms):
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def log_posterior(spec: ModelSpec, u, backend: str = "compiled") -> tuple[float, np.ndarray]:
    """Log posterior density and gradient at unconstrained point ``u``.

    ``backend="tape"`` evaluates through the reverse-mode tape of
    :mod:`hetmisclass.autodiff`; ``"compiled"`` (the default, used by the
    sampler) runs the equivalent hand-swept gradient compiled with numba.
    A non-finite density is returned as ``-inf`` and signals a divergence to
    the sampler.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.layout.size,):
        raise ValueError(f"expected an unconstrained vector of length {spec.layout.size}, got {u.shape}")
    if backend == "compiled":
        lp, g = _compiled.log_posterior_grad(u, *spec._cache["compiled_args"])
    elif backend == "tape":
        lp, g = ad.value_and_grad(_log_density, u, spec)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if not np.isfinite(lp):
        return -np.inf, g
    return float(lp), g


def log_posterior_fn(spec: ModelSpec, backend: str = "compiled"):
    """Bind ``spec`` and return ``u -> (lp, grad)`` for the sampler."""
    if backend != "compiled":
        return lambda u: log_posterior(spec, u, backend)
    fn = _compiled.log_posterior_grad
    args = spec._cache["compiled_args"]

    def logp_grad(u):
        lp, g = fn(u, *args)
        return (lp if lp == lp and lp != np.inf else -np.inf), g

    return logp_grad


def log_density_value(spec: ModelSpec, u) -> float:
    """Log posterior without gradient bookkeeping."""
    return float(_log_density(np.asarray(u, dtype=float), spec))


# ------------------------------------------------------- constrain/unconstrain

def constrain(spec: ModelSpec, u) -> ParamBlock:
    """Map unconstrained coordinates (batch..., dim) to a :class:`ParamBlock`."""
    u = np.asarray(u, dtype=float)
    lay = spec.layout
    hyper = spec.hyper
    a = interval_transform(lay.take(u, "a"))[0]
    pull = simplex_transform(lay.take(u, "pull"))[0]
    out = ParamBlock(a=a, pull=pull)
    if spec.variant is Variant.BASE:
        return out
    out.sens = interval_transform(lay.take(u, "sens"))[0]
    out.relfp = simplex_transform(lay.take(u, "relfp"))[0]
    out.omega_p = effect_size_transform(lay.take(u, "omega_p"), hyper.eps, hyper.omega_max)[0]
    if not spec.variant.heterogeneous:
        return out
    out.sens_s = interval_transform(lay.take(u, "sens_s"))[0]
    out.omega_s = effect_size_transform(lay.take(u, "omega_s"), hyper.eps, hyper.omega_max)[0]
    if spec.variant is Variant.FULLY_HET:
        out.relfp_s = simplex_transform(lay.take(u, "relfp_s"))[0]
        out.omega_r = effect_size_transform(lay.take(u, "omega_r"), hyper.eps, hyper.omega_max)[0]
    else:
        out.relfp_s = np.repeat(out.relfp[..., None, :, :], spec.n_countries, axis=-3)
    return out


def unconstrain(spec: ModelSpec, block: ParamBlock) -> np.ndarray:
    """Inverse of :func:`constrain` for a single (unbatched) block."""
    lay = spec.layout
    parts = {
        "a": interval_inverse(block.a),
        "pull": simplex_inverse(block.pull),
    }
    if spec.variant is not Variant.BASE:
        parts["sens"] = interval_inverse(block.sens)
        parts["relfp"] = simplex_inverse(block.relfp)
        parts["omega_p"] = effect_size_inverse(block.omega_p, spec.hyper.omega_max)
    if spec.variant.heterogeneous:
        parts["sens_s"] = interval_inverse(block.sens_s)
        parts["omega_s"] = effect_size_inverse(block.omega_s, spec.hyper.omega_max)
    if spec.variant is Variant.FULLY_HET:
        parts["relfp_s"] = simplex_inverse(block.relfp_s)
        parts["omega_r"] = effect_size_inverse(block.omega_r, spec.hyper.omega_max)
    u = np.empty(lay.size)
    for name, b in lay.blocks.items():
        u[b.start:b.stop] = np.asarray(parts[name], dtype=float).reshape(-1)
    return u


# ------------------------------------------------------------ likelihood rows

def observation_rows(spec: ModelSpec) -> list[tuple[str, str]]:
    """(country, gold cause) for each row with at least one observation.

    These rows are the unit of the pointwise log-likelihood.
    """
    counts = spec._cache["counts"]
    rows = []
    for s, country in enumerate(spec.countries):
        for i, cause in enumerate(spec.causes.labels):
            if counts[s, i].sum() > 0:
                rows.append((country, cause))
    return rows


def pointwise_loglik(spec: ModelSpec, block: ParamBlock) -> np.ndarray:
    """Per-row multinomial log-likelihoods, shape (batch..., n_rows).

    Each country's row for each observed gold cause is one column, for every
    variant, so that criteria are comparable across variants.
    """
    counts = spec._cache["counts"]           # (S, C, C)
    coef = spec._cache["coef_country"]       # (S, C)
    mats = block.country_matrices(spec.n_countries)   # (batch..., S, C, C)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = special.xlogy(counts, mats).sum(axis=-1) + coef
    mask = counts.sum(axis=-1) > 0
    return ll[..., mask]


# ------------------------------------------------------------ prior sampling

def _rdirichlet(rng, conc):
    g = rng.standard_gamma(conc)
    s = g.sum(axis=-1, keepdims=True)
    bad = ~(s > 0)
    if np.any(bad):
        # all-underflow rows at tiny concentrations: fall back to a one-hot at the largest log-gamma draw
        k = conc.shape[-1]
        u = rng.random(conc.shape)
        logg = np.log(u) / conc
        hot = np.eye(k)[np.argmax(logg, axis=-1)]
        g = np.where(bad, hot, g)
        s = g.sum(axis=-1, keepdims=True)
    return g / s


def sample_effect_size(rng, eps, size=None, omega_max=OMEGA_MAX):
    t_min = 1.0 / (1.0 + omega_max)
    t = rng.beta(eps, eps, size=size)
    t = np.maximum(t, t_min)
    return (1.0 - t) / t


def draw_pooled(rng, a, pull, omega_p, n, j0=0.5):
    """Pooled sensitivities and relative FP given the base parameters."""
    m = a + (1.0 - a) * pull
    kappa = 2.0 * omega_p
    lam = (n - 1) * omega_p
    sens = rng.beta(j0 + kappa * m, j0 + kappa * (1.0 - a) * (1.0 - pull))
    relfp = _rdirichlet(rng, j0 + lam * base_rel_fp_array(pull))
    return sens, relfp


def draw_country(rng, sens, relfp, omega_s, omega_r, n_countries, j0=0.5):
    """Country sensitivities/relative FP; infinite effect sizes copy the pooled values."""
    n = len(sens)
    if np.isinf(omega_s):
        sens_s = np.tile(sens, (n_countries, 1))
    else:
        g = 2.0 * omega_s
        sens_s = rng.beta(j0 + g * sens, j0 + g * (1.0 - sens), size=(n_countries, n))
    if np.isinf(omega_r):
        relfp_s = np.tile(relfp, (n_countries, 1, 1))
    else:
        dlt = (n - 1) * omega_r
        conc = np.broadcast_to(j0 + dlt * relfp, (n_countries, n, n - 1))
        relfp_s = _rdirichlet(rng, conc)
    return sens_s, relfp_s


def prior_sample(spec: ModelSpec, rng_seed) -> ParamBlock:
    """One draw from the generative hierarchy of ``spec.variant``."""
    rng = np.random.default_rng(rng_seed)
    hyper = spec.hyper
    n = spec.n_causes
    a = rng.beta(hyper.b, hyper.d, size=n)
    pull = _rdirichlet(rng, hyper.pull_concentration(n))
    out = ParamBlock(a=a, pull=pull)
    if spec.variant is Variant.BASE:
        return out
    omega_p = float(sample_effect_size(rng, hyper.eps, omega_max=hyper.omega_max))
    out.omega_p = np.float64(omega_p)
    out.sens, out.relfp = draw_pooled(rng, a, pull, omega_p, n, hyper.jeffreys_offset)
    if not spec.variant.heterogeneous:
        return out
    omega_s = float(sample_effect_size(rng, hyper.eps, omega_max=hyper.omega_max))
    out.omega_s = np.float64(omega_s)
    if spec.variant is Variant.FULLY_HET:
        omega_r = float(sample_effect_size(rng, hyper.eps, omega_max=hyper.omega_max))
        out.omega_r = np.float64(omega_r)
    else:
        omega_r = np.inf
    out.sens_s, out.relfp_s = draw_country(rng, out.sens, out.relfp, omega_s, omega_r,
                                           spec.n_countries, hyper.jeffreys_offset)
    return out


# ------------------------------------------------------------ named scalars

def named_scalars(spec: ModelSpec, block: ParamBlock) -> dict[str, np.ndarray]:
    """Reported scalar quantities keyed by name, each shaped like the batch.

    Order: ``a[i]``, ``alpha[j]``, effect sizes, pooled ``phi[i,j]`` and,
    for heterogeneous variants, ``phi[s,i,j]`` per country.
    """
    labels = spec.causes.labels
    out: dict[str, np.ndarray] = {}
    for i, c in enumerate(labels):
        out[f"a[{c}]"] = block.a[..., i]
    for j, c in enumerate(labels):
        out[f"alpha[{c}]"] = block.pull[..., j]
    for name in ("omega_p", "omega_s", "omega_r"):
        val = getattr(block, name)
        if val is not None:
            out[name] = np.asarray(val)
    phi = block.matrix()
    for i, ci in enumerate(labels):
        for j, cj in enumerate(labels):
            out[f"phi[{ci},{cj}]"] = phi[..., i, j]
    if spec.variant.heterogeneous:
        phis = block.country_matrices()
        for s, country in enumerate(spec.countries):
            for i, ci in enumerate(labels):
                for j, cj in enumerate(labels):
                    out[f"phi[{country},{ci},{cj}]"] = phis[..., s, i, j]
    return out


def free_parameter_count(spec: ModelSpec) -> int:
    """Number of free parameters; ``2C - 1`` for the base model."""
    return dimension(spec)
