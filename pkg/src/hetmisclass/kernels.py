"""Log-density kernels and unconstraining transforms.

Every function accepts plain floats/arrays or :class:`~hetmisclass.autodiff.Var`
inputs.  With plain inputs the result is a plain value; with ``Var`` inputs
the result is recorded on the active tape with an exact hand-written
vector-Jacobian product.  Densities are returned elementwise (one value per
batch element); sum them for a joint log density.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .autodiff import Var, _unbroadcast, primitive, value_of


# ---------------------------------------------------------------- transforms

def interval_transform(x):
    """Map reals to (0, 1) with the logistic function.

    Returns
    -------
    p : same shape as ``x``
    log_jacobian : ``log p + log(1 - p)``, elementwise
    """
    xv = value_of(x)
    p = special.expit(xv)
    q = special.expit(-xv)
    p_out = primitive(p, (x,), lambda g: (g * p * q,))
    lj = -np.logaddexp(0.0, -xv) - np.logaddexp(0.0, xv)
    lj_out = primitive(lj, (x,), lambda g: (g * (q - p),))
    return p_out, lj_out


def interval_inverse(p):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("interval_inverse needs values strictly inside (0, 1)")
    return special.logit(p)


def _stick_offsets(k):
    # k free coordinates for a (k+1)-simplex; x = 0 maps to the uniform simplex
    return np.log(np.arange(k, 0, -1, dtype=float))


def simplex_transform(x):
    """Stick-breaking map from R^(K-1) to the interior of the K-simplex.

    Operates on the last axis; leading axes are batch axes.  Coordinate
    ``k`` breaks off a fraction ``sigmoid(x_k - log(K - k))`` of the
    remaining stick, so the zero vector maps to the uniform simplex.

    Returns
    -------
    p : shape ``x.shape[:-1] + (K,)``
    log_jacobian : shape ``x.shape[:-1]``
    """
    xv = np.asarray(value_of(x), dtype=float)
    k = xv.shape[-1]
    batch = xv.shape[:-1]
    if k == 0:
        p = np.ones(batch + (1,))
        return primitive(p, (x,), lambda g: (np.zeros(xv.shape),)), primitive(
            np.zeros(batch), (x,), lambda g: (np.zeros(xv.shape),))
    y = xv - _stick_offsets(k)
    z = special.expit(y)
    zc = special.expit(-y)
    # remaining stick before each break: R_1 = 1, R_k = prod_{j<k} (1 - z_j)
    log_zc = -np.logaddexp(0.0, y)
    log_rem = np.concatenate([np.zeros(batch + (1,)), np.cumsum(log_zc, axis=-1)], axis=-1)
    rem = np.exp(log_rem)
    p = np.concatenate([rem[..., :-1] * z, rem[..., -1:]], axis=-1)

    def vjp_p(g):
        gx = g * p
        # tail[j] = sum_{m > j} g_m p_m, over all K outputs
        tail = np.cumsum(gx[..., ::-1], axis=-1)[..., ::-1][..., 1:]
        return (z * zc * rem[..., :-1] * g[..., :-1] - z * tail,)

    log_z = -np.logaddexp(0.0, -y)
    lj = np.sum(log_z + log_zc + log_rem[..., :-1], axis=-1)
    remaining_breaks = np.arange(k - 1, -1, -1, dtype=float)

    def vjp_lj(g):
        g = np.asarray(g)[..., None]
        return (g * (1.0 - 2.0 * z - remaining_breaks * z),)

    return primitive(p, (x,), vjp_p), primitive(lj, (x,), vjp_lj)


def simplex_inverse(p):
    """Inverse of :func:`simplex_transform` for strictly interior simplexes."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0):
        raise ValueError("simplex_inverse needs strictly positive components")
    k = p.shape[-1] - 1
    if k == 0:
        return np.zeros(p.shape[:-1] + (0,))
    used = np.concatenate([np.zeros(p.shape[:-1] + (1,)), np.cumsum(p[..., :-2], axis=-1)], axis=-1)
    rem = 1.0 - used
    z = p[..., :-1] / rem
    return special.logit(z) + _stick_offsets(k)


# ------------------------------------------------------------------ densities

def _check_positive(*vals, what="shape"):
    for v in vals:
        if np.any(np.asarray(v) <= 0):
            raise ValueError(f"{what} parameters must be positive")


def beta_lpdf(p, a, b):
    """Elementwise log Beta(a, b) density at ``p``; broadcasts."""
    pv, av, bv = value_of(p), value_of(a), value_of(b)
    _check_positive(av, bv)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.log(pv)
        log_q = np.log1p(-pv)
        out = special.xlogy(av - 1.0, pv) + special.xlog1py(bv - 1.0, -pv) - special.betaln(av, bv)
    sp, sa, sb = np.shape(pv), np.shape(av), np.shape(bv)

    def vjp(g):
        dab = special.digamma(av + bv)
        with np.errstate(divide="ignore", invalid="ignore"):
            dp = (av - 1.0) / pv - (bv - 1.0) / (1.0 - pv)
        return (_unbroadcast(g * dp, sp),
                _unbroadcast(g * (log_p - special.digamma(av) + dab), sa),
                _unbroadcast(g * (log_q - special.digamma(bv) + dab), sb))

    return primitive(out, (p, a, b), vjp)


def dirichlet_lpdf(p, conc):
    """Log Dirichlet density over the last axis; returns one value per simplex."""
    pv, cv = value_of(p), value_of(conc)
    _check_positive(cv, what="concentration")
    pv_b, cv_b = np.broadcast_arrays(pv, cv)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.log(pv_b)
        out = (special.xlogy(cv_b - 1.0, pv_b).sum(axis=-1)
               + special.gammaln(cv_b.sum(axis=-1)) - special.gammaln(cv_b).sum(axis=-1))
    sp, sc = np.shape(pv), np.shape(cv)

    def vjp(g):
        g = np.asarray(g)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            dp = (cv_b - 1.0) / pv_b
        dc = log_p + special.digamma(cv_b.sum(axis=-1, keepdims=True)) - special.digamma(cv_b)
        return _unbroadcast(g * dp, sp), _unbroadcast(g * dc, sc)

    return primitive(out, (p, conc), vjp)


def multinomial_log_coef(counts):
    """``log(n! / prod t_j!)`` over the last axis."""
    counts = np.asarray(counts, dtype=float)
    return special.gammaln(counts.sum(axis=-1) + 1.0) - special.gammaln(counts + 1.0).sum(axis=-1)


def multinomial_lpmf(counts, probs, log_coef=None):
    """Log multinomial pmf over the last axis, coefficient included.

    Zero counts contribute nothing even where the probability is zero; a
    zero probability with a positive count gives ``-inf``.  ``log_coef`` can
    carry a cached :func:`multinomial_log_coef`.
    """
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    pv = value_of(probs)
    if log_coef is None:
        log_coef = multinomial_log_coef(counts)
    with np.errstate(divide="ignore", invalid="ignore"):
        kern = special.xlogy(counts, pv)
    out = log_coef + kern.sum(axis=-1)
    sp = np.shape(pv)

    def vjp(g):
        g = np.asarray(g)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            dp = np.where(counts > 0, counts / pv, 0.0)
        return (None, _unbroadcast(g * dp, sp))

    return primitive(out, (counts, probs), vjp)


def effect_size_prior_lpdf(omega, eps):
    """Shrinkage prior on an effect size, on the ``omega`` scale.

    ``1 / (1 + omega) ~ Beta(eps, eps)``; the Jacobian of that map is
    ``1 / (1 + omega)^2``.
    """
    ov = value_of(omega)
    if np.any(np.asarray(ov) <= 0):
        raise ValueError("effect sizes must be positive")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    log_t = -np.log1p(ov)
    log_1mt = np.log(ov) + log_t
    out = (eps - 1.0) * (log_t + log_1mt) - special.betaln(eps, eps) + 2.0 * log_t
    return primitive(out, (omega,), lambda g: (g * ((eps - 1.0) / ov - 2.0 * eps / (1.0 + ov)),))


def effect_size_transform(z, eps, omega_max=np.inf):
    """Unconstrained coordinate to effect size, with the prior folded in.

    ``z`` is approximately ``log(omega)`` for ``omega`` well below
    ``omega_max``.  Internally ``t = 1 / (1 + omega)`` is mapped onto
    ``(t_min, 1)`` with ``t_min = 1 / (1 + omega_max)`` by a logistic
    function of ``-z``.

    Returns
    -------
    omega
    log_density : prior density of ``omega`` plus the log-Jacobian of ``z -> omega``
    """
    zv = value_of(z)
    t_min = 0.0 if np.isinf(omega_max) else 1.0 / (1.0 + omega_max)
    log_range = np.log1p(-t_min)
    s = special.expit(-zv)
    sc = special.expit(zv)
    log_s = -np.logaddexp(0.0, zv)
    log_sc = -np.logaddexp(0.0, -zv)
    t = t_min + (1.0 - t_min) * s
    log_t = np.log(t)
    log_1mt = log_range + log_sc
    omega = np.exp(log_1mt - log_t)
    # d log_t / dz and d log_1mt / dz
    dlt = -(1.0 - t_min) * s * sc / t
    dl1mt = s
    out = (eps - 1.0) * (log_t + log_1mt) + log_range + log_s + log_sc - special.betaln(eps, eps)
    dout = (eps - 1.0) * (dlt + dl1mt) + (s - sc)
    w = primitive(omega, (z,), lambda g: (g * omega * (dl1mt - dlt),))
    lp = primitive(out, (z,), lambda g: (g * dout,))
    return w, lp


def effect_size_inverse(omega, omega_max=np.inf):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0) or np.any(omega >= omega_max):
        raise ValueError("effect size outside (0, omega_max)")
    t_min = 0.0 if np.isinf(omega_max) else 1.0 / (1.0 + omega_max)
    t = 1.0 / (1.0 + omega)
    s = (t - t_min) / (1.0 - t_min)
    return -special.logit(s)


# ----------------------------------------------------------- fused helpers

def weighted_log_sum(x, w):
    """``sum(w * log(x))`` with ``0 * log(0) = 0``; ``w`` is constant."""
    xv = value_of(x)
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.xlogy(w, xv).sum()
    sx = np.shape(xv)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(w != 0, w / xv, 0.0)
        return (_unbroadcast(g * d, sx),)

    return primitive(out, (x,), vjp)


def is_var(x) -> bool:
    return isinstance(x, Var)
