"""Compiled value-and-gradient of the model log posterior.

This is the same density as :func:`hetmisclass.model._log_density`, with the
reverse sweep written out by hand so that it can be compiled with numba.
The sampler calls it once per leapfrog step; the tape version remains the
reference implementation and the two are checked against each other in the
test suite.

Simplex gradients are carried as derivatives with respect to ``log p``,
which keeps the stick-breaking backward pass free of divisions.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

BASE, HOMOGENEOUS, PARTLY_HET, FULLY_HET = 0, 1, 2, 3


@njit(cache=True, error_model="numpy")
def digamma(x):
    res = 0.0
    while x < 6.0:
        res -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    t = f * (-1.0 / 12 + f * (1.0 / 120 + f * (-1.0 / 252 + f * (1.0 / 240 + f * (-1.0 / 132)))))
    return res + math.log(x) - 0.5 / x + t


@njit(cache=True, error_model="numpy")
def _log_expit(x):
    # log(1 / (1 + exp(-x)))
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit(cache=True, error_model="numpy")
def _expit(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, error_model="numpy")
def _stick(x, logp, z, zc):
    """Forward stick-breaking of one row; fills ``logp`` (k+1), ``z``, ``zc`` (k)."""
    k = x.shape[0]
    log_rem = 0.0
    lj = 0.0
    for j in range(k):
        y = x[j] - math.log(k - j)
        lz = _log_expit(y)
        lzc = _log_expit(-y)
        z[j] = _expit(y)
        zc[j] = _expit(-y)
        logp[j] = lz + log_rem
        lj += lz + lzc + log_rem
        log_rem += lzc
    logp[k] = log_rem
    return lj


@njit(cache=True, error_model="numpy")
def _stick_back(w, z, zc, glj, gx):
    """Accumulate into ``gx`` the gradient given ``w = d/d log p`` and ``glj = d/d logJ``."""
    k = z.shape[0]
    tail = w[k]
    for j in range(k - 1, -1, -1):
        gx[j] += zc[j] * w[j] - z[j] * tail + glj * (1.0 - 2.0 * z[j] - (k - 1 - j) * z[j])
        tail += w[j]


@njit(cache=True, error_model="numpy")
def _effect_size(zv, eps, t_min):
    """Effect size, prior+Jacobian log density, d omega/dz, d logdens/dz."""
    log_range = math.log1p(-t_min)
    s = _expit(-zv)
    sc = _expit(zv)
    log_s = _log_expit(-zv)
    log_sc = _log_expit(zv)
    t = t_min + (1.0 - t_min) * s
    log_t = math.log(t)
    log_1mt = log_range + log_sc
    omega = math.exp(log_1mt - log_t)
    dlt = -(1.0 - t_min) * s * sc / t
    dl1mt = s
    lbeta = 2.0 * math.lgamma(eps) - math.lgamma(2.0 * eps)
    out = (eps - 1.0) * (log_t + log_1mt) + log_range + log_s + log_sc - lbeta
    dout = (eps - 1.0) * (dlt + dl1mt) + (s - sc)
    return omega, out, omega * (dl1mt - dlt), dout


@njit(cache=True, error_model="numpy")
def _beta_block(A, B, ls, lsc):
    """log Beta(s; A, B) with log s, log(1-s) given; returns lp, dA, dB."""
    dab = digamma(A + B)
    lp = (A - 1.0) * ls + (B - 1.0) * lsc - math.lgamma(A) - math.lgamma(B) + math.lgamma(A + B)
    return lp, ls - digamma(A) + dab, lsc - digamma(B) + dab


@njit(cache=True, error_model="numpy")
def log_posterior_grad(u, variant, n, S, pooled, diag, fp, off, pdiag, pfp, poff, coef,
                       b, d, e, eps, j0, t_min):
    """Return ``(lp, grad)``; see :mod:`hetmisclass.model` for the layout."""
    g = np.zeros(u.shape[0])
    K = n - 1
    k = n - 2
    lp = 0.0
    # ---- accuracy a (n) and pull (n-1 sticks)
    a = np.empty(n)
    ac = np.empty(n)
    la = np.empty(n)
    lac = np.empty(n)
    for i in range(n):
        x = u[i]
        a[i] = _expit(x)
        ac[i] = _expit(-x)
        la[i] = _log_expit(x)
        lac[i] = _log_expit(-x)
        lp += la[i] + lac[i]
        lp += (b - 1.0) * la[i] + (d - 1.0) * lac[i]
        g[i] += (1.0 - 2.0 * a[i]) + (b - 1.0) * ac[i] - (d - 1.0) * a[i]
    lp -= n * (math.lgamma(b) + math.lgamma(d) - math.lgamma(b + d))
    pos_pull = n
    lpull = np.empty(n)
    zp = np.empty(n - 1)
    zpc = np.empty(n - 1)
    lp += _stick(u[pos_pull:pos_pull + n - 1], lpull, zp, zpc)
    pull = np.exp(lpull)
    esum = 0.0
    wpull = np.zeros(n)       # d/d log pull
    for j in range(n):
        lp += (e[j] - 1.0) * lpull[j] - math.lgamma(e[j])
        esum += e[j]
        wpull[j] += e[j] - 1.0
    lp += math.lgamma(esum)
    ga = np.zeros(n)          # d/d a (value scale), converted at the end

    if variant == BASE:
        for i in range(n):
            for j in range(n):
                nij = pooled[i, j]
                if nij == 0.0:
                    continue
                phi = ac[i] * pull[j]
                if i == j:
                    phi += a[i]
                if phi <= 0.0:
                    return -np.inf, g
                lp += nij * math.log(phi)
                gij = nij / phi
                ga[i] += gij * ((1.0 if i == j else 0.0) - pull[j])
                wpull[j] += gij * ac[i] * pull[j]
        lp += coef
        _finish_base(g, ga, a, ac, wpull, zp, zpc, pos_pull, n)
        return lp, g

    # ---- pooled sensitivities, relative FP and omega_p
    pos_sens = pos_pull + n - 1
    pos_rel = pos_sens + n
    pos_wp = pos_rel + n * k
    sens = np.empty(n)
    sensc = np.empty(n)
    ls = np.empty(n)
    lsc = np.empty(n)
    gls = np.zeros(n)         # d/d log sens
    glsc = np.zeros(n)        # d/d log(1 - sens)
    for i in range(n):
        x = u[pos_sens + i]
        sens[i] = _expit(x)
        sensc[i] = _expit(-x)
        ls[i] = _log_expit(x)
        lsc[i] = _log_expit(-x)
        lp += ls[i] + lsc[i]
        g[pos_sens + i] += 1.0 - 2.0 * sens[i]
    lq = np.empty((n, K))
    zq = np.empty((n, max(k, 0)))
    zqc = np.empty((n, max(k, 0)))
    for i in range(n):
        lp += _stick(u[pos_rel + i * k:pos_rel + (i + 1) * k], lq[i], zq[i], zqc[i])
    q = np.exp(lq)
    wq = np.zeros((n, K))     # d/d log q
    omega_p, lpw, dwdz, dlpw = _effect_size(u[pos_wp], eps, t_min)
    lp += lpw
    g[pos_wp] += dlpw
    g_omega_p = 0.0
    kappa = 2.0 * omega_p
    lam = K * omega_p
    gpull = np.zeros(n)       # d/d pull (value scale)
    for i in range(n):
        mc = ac[i] * (1.0 - pull[i])
        A = j0 + kappa * (1.0 - mc)
        B = j0 + kappa * mc
        lpb, dA, dB = _beta_block(A, B, ls[i], lsc[i])
        lp += lpb
        gls[i] += A - 1.0
        glsc[i] += B - 1.0
        g_omega_p += 2.0 * (dA * (1.0 - mc) + dB * mc)
        gmc = kappa * (dB - dA)
        ga[i] += -gmc * (1.0 - pull[i])
        gpull[i] += -gmc * ac[i]
    for i in range(n):
        denom = 1.0 - pull[i]
        csum = 0.0
        lpd = 0.0
        jj = 0
        for j in range(n):
            if j == i:
                continue
            astar = pull[j] / denom
            c = j0 + lam * astar
            csum += c
            lpd += (c - 1.0) * lq[i, jj] - math.lgamma(c)
            wq[i, jj] += c - 1.0
            jj += 1
        lpd += math.lgamma(csum)
        lp += lpd
        dsum = digamma(csum)
        jj = 0
        for j in range(n):
            if j == i:
                continue
            astar = pull[j] / denom
            c = j0 + lam * astar
            gc = lq[i, jj] + dsum - digamma(c)
            g_omega_p += gc * astar * K
            gastar = gc * lam
            gpull[j] += gastar / denom
            gpull[i] += gastar * astar / denom
            jj += 1

    if variant == HOMOGENEOUS:
        for i in range(n):
            lp += pdiag[i] * ls[i] + pfp[i] * lsc[i]
            gls[i] += pdiag[i]
            glsc[i] += pfp[i]
            for jj in range(K):
                if poff[i, jj] != 0.0:
                    lp += poff[i, jj] * lq[i, jj]
                    wq[i, jj] += poff[i, jj]
        lp += coef
        _finish_pooled(g, ga, a, ac, wpull, gpull, pull, zp, zpc, pos_pull, n,
                       gls, glsc, sens, sensc, pos_sens, wq, zq, zqc, pos_rel, k,
                       g_omega_p, dwdz, pos_wp)
        return lp, g

    # ---- country sensitivities and omega_s
    pos_ss = pos_wp + 1
    pos_rs = pos_ss + S * n
    if variant == FULLY_HET:
        pos_ws = pos_rs + S * n * k
    else:
        pos_ws = pos_rs
    omega_s, lpw, dwsdz, dlpws = _effect_size(u[pos_ws], eps, t_min)
    lp += lpw
    g[pos_ws] += dlpws
    gamma = 2.0 * omega_s
    g_omega_s = 0.0
    for s in range(S):
        for i in range(n):
            x = u[pos_ss + s * n + i]
            ss = _expit(x)
            ssc = _expit(-x)
            lss = _log_expit(x)
            lssc = _log_expit(-x)
            A = j0 + gamma * sens[i]
            B = j0 + gamma * sensc[i]
            lpb, dA, dB = _beta_block(A, B, lss, lssc)
            lp += lpb + lss + lssc + diag[s, i] * lss + fp[s, i] * lssc
            c1 = A - 1.0 + diag[s, i]
            c2 = B - 1.0 + fp[s, i]
            g[pos_ss + s * n + i] += 1.0 - 2.0 * ss + c1 * ssc - c2 * ss
            g_omega_s += 2.0 * (dA * sens[i] + dB * sensc[i])
            # d/d sens via A, B: convert to log scale
            gls[i] += dA * gamma * sens[i]
            glsc[i] += dB * gamma * sensc[i]
    g[pos_ws] += g_omega_s * dwsdz

    if variant == PARTLY_HET:
        for i in range(n):
            for jj in range(K):
                if poff[i, jj] != 0.0:
                    lp += poff[i, jj] * lq[i, jj]
                    wq[i, jj] += poff[i, jj]
        lp += coef
        _finish_pooled(g, ga, a, ac, wpull, gpull, pull, zp, zpc, pos_pull, n,
                       gls, glsc, sens, sensc, pos_sens, wq, zq, zqc, pos_rel, k,
                       g_omega_p, dwdz, pos_wp)
        return lp, g

    # ---- country relative FP and omega_r
    pos_wr = pos_ws + 1
    omega_r, lpw, dwrdz, dlpwr = _effect_size(u[pos_wr], eps, t_min)
    lp += lpw
    g[pos_wr] += dlpwr
    delta = K * omega_r
    g_omega_r = 0.0
    lqs = np.empty(K)
    zs = np.empty(max(k, 0))
    zsc = np.empty(max(k, 0))
    ws = np.empty(K)
    csum = K * j0 + delta
    dsum = digamma(csum)
    lg_sum = math.lgamma(csum)
    for s in range(S):
        for i in range(n):
            start = pos_rs + (s * n + i) * k
            lp += _stick(u[start:start + k], lqs, zs, zsc)
            lp += lg_sum
            for jj in range(K):
                c = j0 + delta * q[i, jj]
                o = off[s, i, jj]
                lp += (c - 1.0 + o) * lqs[jj] - math.lgamma(c)
                ws[jj] = c - 1.0 + o
                gc = lqs[jj] + dsum - digamma(c)
                g_omega_r += gc * q[i, jj] * K
                wq[i, jj] += gc * delta * q[i, jj]
            _stick_back(ws, zs, zsc, 1.0, g[start:start + k])
    g[pos_wr] += g_omega_r * dwrdz
    lp += coef
    _finish_pooled(g, ga, a, ac, wpull, gpull, pull, zp, zpc, pos_pull, n,
                   gls, glsc, sens, sensc, pos_sens, wq, zq, zqc, pos_rel, k,
                   g_omega_p, dwdz, pos_wp)
    return lp, g


@njit(cache=True, error_model="numpy")
def _finish_base(g, ga, a, ac, wpull, zp, zpc, pos_pull, n):
    for i in range(n):
        g[i] += ga[i] * a[i] * ac[i]
    _stick_back(wpull, zp, zpc, 1.0, g[pos_pull:pos_pull + n - 1])


@njit(cache=True, error_model="numpy")
def _finish_pooled(g, ga, a, ac, wpull, gpull, pull, zp, zpc, pos_pull, n,
                   gls, glsc, sens, sensc, pos_sens, wq, zq, zqc, pos_rel, k,
                   g_omega_p, dwdz, pos_wp):
    for j in range(n):
        wpull[j] += gpull[j] * pull[j]
    _finish_base(g, ga, a, ac, wpull, zp, zpc, pos_pull, n)
    for i in range(n):
        g[pos_sens + i] += gls[i] * sensc[i] - glsc[i] * sens[i]
        _stick_back(wq[i], zq[i], zqc[i], 1.0, g[pos_rel + i * k:pos_rel + (i + 1) * k])
    g[pos_wp] += g_omega_p * dwdz
