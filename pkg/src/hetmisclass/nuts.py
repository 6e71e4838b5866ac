"""No-U-Turn Hamiltonian Monte Carlo for a generic differentiable log density.

The sampler works on any callable ``logp_grad(q) -> (lp, grad)`` over an
unconstrained vector.  Trajectories are grown by doubling in a random
direction; the returned state is chosen by multinomial weighting over the
trajectory (uniform within a subtree, biased towards the new subtree at the
top level), and growth stops at a generalised U-turn checked on the full
trajectory and on each merged pair of subtrees.

Warmup adapts the step size by dual averaging and a diagonal inverse metric
from the draws of a sequence of doubling windows bracketed by a fast initial
and terminal phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_DELTA_H = 1000.0


@dataclass
class Point:
    q: np.ndarray
    p: np.ndarray
    lp: float
    grad: np.ndarray


@dataclass
class _Subtree:
    """A trajectory segment in time order (``minus`` end first)."""

    valid: bool
    propose: Point | None = None
    sharp_minus: np.ndarray | None = None
    sharp_plus: np.ndarray | None = None
    p_minus: np.ndarray | None = None
    p_plus: np.ndarray | None = None
    rho: np.ndarray | None = None
    log_weight: float = -np.inf


def _no_uturn(sharp_minus, sharp_plus, rho) -> bool:
    return float(sharp_plus @ rho) > 0.0 and float(sharp_minus @ rho) > 0.0


class DualAveraging:
    """Step-size adaptation towards a target mean acceptance statistic."""

    def __init__(self, delta=0.8, gamma=0.05, kappa=0.75, t0=10.0):
        self.delta, self.gamma, self.kappa, self.t0 = delta, gamma, kappa, t0
        self.mu = math.log(10.0)
        self.restart()

    def restart(self):
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def learn(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class WindowedVariance:
    """Doubling-window schedule for the diagonal inverse metric."""

    def __init__(self, num_warmup, init_buffer=75, term_buffer=50, base_window=25):
        self.num_warmup = int(num_warmup)
        self.active = num_warmup >= 20
        if init_buffer + base_window + term_buffer > num_warmup:
            init_buffer = int(0.15 * num_warmup)
            term_buffer = int(0.1 * num_warmup)
            base_window = num_warmup - (init_buffer + term_buffer)
        self.init_buffer, self.term_buffer, self.base_window = init_buffer, term_buffer, base_window
        self.counter = 0
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self._samples: list[np.ndarray] = []

    def _in_window(self):
        return (self.counter >= self.init_buffer
                and self.counter < self.num_warmup - self.term_buffer
                and self.counter != self.num_warmup)

    def _window_end(self):
        return self.counter == self.next_window and self.counter != self.num_warmup

    def _compute_next_window(self):
        last = self.num_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last:
            if self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer:
                self.next_window = last

    def learn(self, q) -> np.ndarray | None:
        """Record ``q``; return a new inverse metric at the end of a window."""
        if not self.active:
            self.counter += 1
            return None
        if self._in_window():
            self._samples.append(np.array(q, dtype=float))
        if self._window_end():
            self._compute_next_window()
            x = np.asarray(self._samples)
            n = len(x)
            var = x.var(axis=0, ddof=1) if n > 1 else np.ones(x.shape[1])
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._samples = []
            self.counter += 1
            return var
        self.counter += 1
        return None


@dataclass
class ChainResult:
    draws: np.ndarray                  # (n_draws, dim) unconstrained
    lp: np.ndarray
    accept_stat: np.ndarray
    step_size: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    inv_metric: np.ndarray
    final_step_size: float
    warmup_divergences: int = 0
    warmup: dict = field(default_factory=dict)


class NUTS:
    """One chain of the sampler.

    Parameters
    ----------
    logp_grad : callable
        ``q -> (lp, grad)``; ``lp`` is ``-inf`` outside the support.
    q0 : ndarray
        Starting point with finite ``lp``.
    rng : numpy.random.Generator
    """

    def __init__(self, logp_grad, q0, rng, max_depth=10, step_size=1.0, inv_metric=None):
        self.logp_grad = logp_grad
        self.rng = rng
        self.max_depth = int(max_depth)
        q0 = np.array(q0, dtype=float)
        lp, g = logp_grad(q0)
        if not np.isfinite(lp):
            raise ValueError("starting point has non-finite log density")
        self.z = Point(q0, np.zeros_like(q0), float(lp), np.asarray(g, dtype=float))
        self.dim = q0.size
        self.step_size = float(step_size)
        self.inv_metric = np.ones(self.dim) if inv_metric is None else np.array(inv_metric, dtype=float)
        self._n_leapfrog = 0
        self._sum_metro = 0.0
        self._divergent = False

    # --- Hamiltonian pieces
    def _sample_momentum(self):
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def _energy(self, z: Point) -> float:
        if not np.isfinite(z.lp):
            return np.inf
        return -z.lp + 0.5 * float(z.p @ (self.inv_metric * z.p))

    def leapfrog(self, z: Point, eps: float) -> Point:
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * (self.inv_metric * p)
        lp, g = self.logp_grad(q)
        if not np.isfinite(lp):
            return Point(q, p, -np.inf, np.zeros_like(q))
        g = np.asarray(g, dtype=float)
        return Point(q, p + 0.5 * eps * g, float(lp), g)

    def init_step_size(self):
        """Double or halve the step size until one leapfrog step crosses acceptance 0.8."""
        z0 = self.z
        log8 = math.log(0.8)

        def trial():
            z = Point(z0.q, self._sample_momentum(), z0.lp, z0.grad)
            h0 = self._energy(z)
            h = self._energy(self.leapfrog(z, self.step_size))
            if math.isnan(h):
                h = np.inf
            return h0 - h

        direction = 1 if trial() > log8 else -1
        while True:
            dh = trial()
            if direction == 1 and not dh > log8:
                break
            if direction == -1 and not dh < log8:
                break
            self.step_size = self.step_size * 2.0 if direction == 1 else self.step_size / 2.0
            if self.step_size > 1e7:
                raise RuntimeError("posterior is improper; step size diverged during initialisation")
            if self.step_size == 0.0:
                raise RuntimeError("no acceptably small step size found; check the model")

    # --- trajectory
    def _build(self, edge: Point, depth: int, sign: int, h0: float):
        """Grow ``2**depth`` leapfrog steps from ``edge``; returns (subtree, new edge)."""
        if depth == 0:
            z = self.leapfrog(edge, sign * self.step_size)
            self._n_leapfrog += 1
            h = self._energy(z)
            if math.isnan(h):
                h = np.inf
            if h - h0 > MAX_DELTA_H:
                self._divergent = True
            dh = h0 - h
            self._sum_metro += 1.0 if dh > 0 else math.exp(dh)
            if self._divergent:
                return _Subtree(False), z
            sharp = self.inv_metric * z.p
            return _Subtree(True, z, sharp, sharp, z.p, z.p, z.p.copy(), dh), z

        init, edge = self._build(edge, depth - 1, sign, h0)
        if not init.valid:
            return init, edge
        final, edge = self._build(edge, depth - 1, sign, h0)
        if not final.valid:
            return final, edge
        log_w = float(np.logaddexp(init.log_weight, final.log_weight))
        accept = math.exp(final.log_weight - log_w)
        propose = final.propose if self.rng.random() < accept else init.propose
        left, right = (init, final) if sign > 0 else (final, init)
        merged = _merge(left, right)
        merged.propose = propose
        merged.log_weight = log_w
        return merged, edge

    def transition(self):
        """One NUTS transition from the current state; returns a stats dict."""
        z0 = self.z
        p0 = self._sample_momentum()
        start = Point(z0.q, p0, z0.lp, z0.grad)
        h0 = self._energy(start)
        sharp0 = self.inv_metric * p0
        tree = _Subtree(True, start, sharp0, sharp0, p0, p0, p0.copy(), 0.0)
        fwd_edge = bck_edge = start
        sample = start
        self._n_leapfrog = 0
        self._sum_metro = 0.0
        self._divergent = False
        depth = 0
        while depth < self.max_depth:
            if self.rng.random() > 0.5:
                sub, fwd_edge = self._build(fwd_edge, depth, 1, h0)
                left, right = tree, sub
            else:
                sub, bck_edge = self._build(bck_edge, depth, -1, h0)
                left, right = sub, tree
            if not sub.valid:
                break
            depth += 1
            if sub.log_weight > tree.log_weight:
                sample = sub.propose
            elif self.rng.random() < math.exp(sub.log_weight - tree.log_weight):
                sample = sub.propose
            log_w = float(np.logaddexp(tree.log_weight, sub.log_weight))
            tree = _merge(left, right)
            tree.log_weight = log_w
            if not tree.valid:
                break
        self.z = Point(sample.q, sample.p, sample.lp, sample.grad)
        n_lf = max(self._n_leapfrog, 1)
        return {
            "accept_stat": self._sum_metro / n_lf,
            "tree_depth": depth,
            "n_leapfrog": self._n_leapfrog,
            "divergent": self._divergent,
            "energy": self._energy(self.z),
            "lp": self.z.lp,
        }


def _merge(left: _Subtree, right: _Subtree) -> _Subtree:
    rho = left.rho + right.rho
    ok = (_no_uturn(left.sharp_minus, right.sharp_plus, rho)
          and _no_uturn(left.sharp_minus, right.sharp_minus, left.rho + right.p_minus)
          and _no_uturn(left.sharp_plus, right.sharp_plus, right.rho + left.p_plus))
    return _Subtree(ok, None, left.sharp_minus, right.sharp_plus, left.p_minus, right.p_plus, rho)


def run_chain(logp_grad, q0, rng, n_warmup, n_draws, target_accept=0.8, max_depth=10,
              adapt_metric=True, step_size=1.0, inv_metric=None) -> ChainResult:
    """Adapt during ``n_warmup`` iterations, then record ``n_draws`` draws."""
    nuts = NUTS(logp_grad, q0, rng, max_depth=max_depth, step_size=step_size, inv_metric=inv_metric)
    nuts.init_step_size()
    da = DualAveraging(delta=target_accept)
    da.mu = math.log(10.0 * nuts.step_size)
    windows = WindowedVariance(n_warmup) if adapt_metric else None
    warm_div = 0
    for _ in range(n_warmup):
        st = nuts.transition()
        warm_div += bool(st["divergent"])
        nuts.step_size = da.learn(st["accept_stat"])
        if windows is not None:
            var = windows.learn(nuts.z.q)
            if var is not None:
                nuts.inv_metric = var
                nuts.init_step_size()
                da.mu = math.log(10.0 * nuts.step_size)
                da.restart()
    if n_warmup > 0:
        nuts.step_size = da.final()

    dim = nuts.dim
    draws = np.empty((n_draws, dim))
    out = {k: np.empty(n_draws) for k in ("lp", "accept_stat", "energy")}
    depth = np.empty(n_draws, dtype=np.int64)
    n_lf = np.empty(n_draws, dtype=np.int64)
    div = np.zeros(n_draws, dtype=bool)
    for t in range(n_draws):
        st = nuts.transition()
        draws[t] = nuts.z.q
        out["lp"][t] = st["lp"]
        out["accept_stat"][t] = st["accept_stat"]
        out["energy"][t] = st["energy"]
        depth[t] = st["tree_depth"]
        n_lf[t] = st["n_leapfrog"]
        div[t] = st["divergent"]
    return ChainResult(draws, out["lp"], out["accept_stat"], np.full(n_draws, nuts.step_size),
                       depth, n_lf, div, out["energy"], nuts.inv_metric.copy(), nuts.step_size,
                       warm_div)
