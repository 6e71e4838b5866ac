"""Count and probability matrices for a noisy classifier against a reference.

Rows index the reference (gold) cause, columns the predicted cause.  Every
matrix carries its :class:`CauseSet` so that indices stay tied to labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

ROW_SUM_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when matrices or parameter vectors disagree on the cause set."""


@dataclass(frozen=True)
class CauseSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValueError("a cause set needs at least two causes")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate cause labels in {labels}")

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @classmethod
    def default(cls, n: int) -> "CauseSet":
        return cls(tuple(f"cause{i + 1}" for i in range(n)))


def offdiag_index(n: int) -> np.ndarray:
    """Column indices ``j != i`` for every row ``i``, shape ``(n, n - 1)``."""
    cols = np.arange(n)
    return np.array([np.delete(cols, i) for i in range(n)], dtype=np.intp).reshape(n, n - 1)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CountMatrix:
    """Paired (gold, predicted) counts for one country."""

    counts: np.ndarray
    causes: CauseSet

    def __post_init__(self):
        raw = np.asarray(self.counts)
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise ValueError("counts must be integers")
        counts = raw.astype(np.int64)
        n = len(self.causes)
        if counts.shape != (n, n):
            raise DimensionError(f"count matrix has shape {counts.shape}, expected {(n, n)}")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", _frozen(counts))

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def proportions(self) -> np.ndarray:
        """Empirical row proportions ``t_ij / n_i``; rows with ``n_i = 0`` are NaN."""
        n = self.row_totals.astype(float)[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, self.counts / n, np.nan)


@dataclass(frozen=True)
class MisclassMatrix:
    """Row-stochastic matrix of P(predicted = j | gold = i)."""

    probs: np.ndarray
    causes: CauseSet

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        n = len(self.causes)
        if probs.shape != (n, n):
            raise DimensionError(f"matrix has shape {probs.shape}, expected {(n, n)}")
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        dev = np.abs(probs.sum(axis=1) - 1.0)
        if np.any(dev > ROW_SUM_TOL):
            raise ValueError(f"rows must sum to 1 (max deviation {dev.max():.3g})")
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def sensitivity(self) -> np.ndarray:
        return np.diag(self.probs).copy()


@dataclass(frozen=True)
class BaseParams:
    """Intrinsic accuracy per cause and the pull simplex."""

    accuracy: np.ndarray
    pull: np.ndarray

    def __post_init__(self):
        a = np.array(self.accuracy, dtype=float)
        pull = np.array(self.pull, dtype=float)
        if a.ndim != 1 or pull.shape != a.shape:
            raise DimensionError("accuracy and pull must be vectors of equal length")
        if len(a) < 2:
            raise ValueError("need at least two causes")
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("accuracies must lie in [0, 1]")
        if np.any(pull < 0) or abs(pull.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError("pull must be a simplex")
        object.__setattr__(self, "accuracy", _frozen(a))
        object.__setattr__(self, "pull", _frozen(pull))

    @property
    def n_causes(self) -> int:
        return len(self.accuracy)


@dataclass(frozen=True)
class SensRelFP:
    """Sensitivities plus relative false-positive rows.

    ``rel_fp[i]`` is a distribution over the causes ``j != i`` in increasing
    order of ``j``.  Rows with unit sensitivity have no false-positive mass;
    they are NaN and flagged in ``degenerate``.
    """

    sensitivity: np.ndarray
    rel_fp: np.ndarray
    causes: CauseSet
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.causes)
        sens = np.array(self.sensitivity, dtype=float)
        q = np.array(self.rel_fp, dtype=float)
        if sens.shape != (n,) or q.shape != (n, n - 1):
            raise DimensionError("sensitivity must be (C,) and rel_fp (C, C-1)")
        degen = np.all(np.isnan(q), axis=1) if self.degenerate is None else np.asarray(self.degenerate, bool)
        ok = ~degen
        if np.any(np.isnan(q[ok])):
            raise ValueError("rel_fp row missing for a non-degenerate sensitivity")
        if np.any(np.abs(q[ok].sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("rel_fp rows must sum to 1")
        object.__setattr__(self, "sensitivity", _frozen(sens))
        object.__setattr__(self, "rel_fp", _frozen(q))
        object.__setattr__(self, "degenerate", _frozen(degen.copy()))


@dataclass(frozen=True)
class OddsTable:
    """Misclassification log odds ``log(phi_ij / phi_ik)`` per predicted pair.

    ``log_odds[p, m]`` belongs to pair ``pairs[p] = (j, k)`` and gold cause
    ``gold[p, m]``.  Entries where either probability is zero (or the gold
    row is empty) are NaN and marked in ``missing``.
    """

    causes: CauseSet
    pairs: tuple[tuple[int, int], ...]
    gold: np.ndarray
    log_odds: np.ndarray
    missing: np.ndarray

    @property
    def spread(self) -> np.ndarray:
        """Max minus min of the available log odds per pair (NaN if none)."""
        out = np.full(len(self.pairs), np.nan)
        for p in range(len(self.pairs)):
            vals = self.log_odds[p][~self.missing[p]]
            if vals.size:
                out[p] = vals.max() - vals.min()
        return out

    def max_spread(self) -> float:
        s = self.spread
        s = s[~np.isnan(s)]
        return float(s.max()) if s.size else float("nan")

    def rows(self):
        """Yield ``(pred_j, pred_k, gold_i, log_odds or None)`` records."""
        labels = self.causes.labels
        for p, (j, k) in enumerate(self.pairs):
            for m, i in enumerate(self.gold[p]):
                val = None if self.missing[p, m] else float(self.log_odds[p, m])
                yield labels[j], labels[k], labels[i], val


def _check_len(x: np.ndarray, causes: CauseSet | None, what: str):
    if causes is not None and len(x) != len(causes):
        raise DimensionError(f"{what} has length {len(x)} but the cause set has {len(causes)}")


def build_base_matrix(params: BaseParams, causes: CauseSet | None = None) -> MisclassMatrix:
    """Misclassification matrix implied by intrinsic accuracy and pull.

    ``phi_ii = a_i + (1 - a_i) alpha_i`` and ``phi_ij = (1 - a_i) alpha_j``.
    """
    _check_len(params.accuracy, causes, "accuracy")
    causes = causes or CauseSet.default(params.n_causes)
    a, pull = params.accuracy, params.pull
    probs = (1.0 - a)[:, None] * pull[None, :]
    probs[np.diag_indices_from(probs)] += a
    # the row sum is exact in real arithmetic; absorb rounding into the diagonal
    probs[np.diag_indices_from(probs)] += 1.0 - probs.sum(axis=1)
    return MisclassMatrix(np.clip(probs, 0.0, 1.0), causes)


def decompose(m: MisclassMatrix) -> SensRelFP:
    """Split a matrix into sensitivities and relative false positives."""
    probs = m.probs
    n = len(m.causes)
    sens = np.diag(probs).copy()
    off = probs[np.arange(n)[:, None], offdiag_index(n)]
    fp_mass = 1.0 - sens
    degen = fp_mass <= 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        q = off / fp_mass[:, None]
    q[degen] = np.nan
    # renormalise to kill rounding from 1 - phi_ii
    q[~degen] /= q[~degen].sum(axis=1, keepdims=True)
    return SensRelFP(sens, q, m.causes, degen)


def recompose(d: SensRelFP) -> MisclassMatrix:
    """Inverse of :func:`decompose`."""
    n = len(d.causes)
    sens = d.sensitivity
    missing = np.any(np.isnan(d.rel_fp), axis=1) & (sens < 1.0)
    if np.any(missing):
        raise ValueError(f"rel_fp undefined for rows {np.flatnonzero(missing).tolist()} with sensitivity < 1")
    q = np.nan_to_num(d.rel_fp, nan=0.0)
    probs = np.zeros((n, n))
    probs[np.arange(n)[:, None], offdiag_index(n)] = (1.0 - sens)[:, None] * q
    probs[np.diag_indices(n)] = sens
    return MisclassMatrix(probs, d.causes)


def base_rel_fp(pull: np.ndarray) -> np.ndarray:
    """Relative false positives of the base model, ``alpha_j / (1 - alpha_i)``.

    Returns a ``(C, C - 1)`` array whose row ``i`` covers ``j != i``.
    """
    pull = np.asarray(pull, dtype=float)
    if np.any(pull >= 1.0):
        raise ValueError("pull components must be < 1")
    n = len(pull)
    return pull[offdiag_index(n)] / (1.0 - pull)[:, None]


def odds_table(source: CountMatrix | MisclassMatrix) -> OddsTable:
    """Log odds of predicting ``j`` versus ``k`` for every gold cause ``i != j, k``.

    Count input uses raw proportions ``t_ij / n_i`` with no smoothing.
    """
    if isinstance(source, CountMatrix):
        probs = source.proportions()
    else:
        probs = source.probs
    causes = source.causes
    n = len(causes)
    pairs = tuple(combinations(range(n), 2))
    gold = np.array([[i for i in range(n) if i not in (j, k)] for j, k in pairs], dtype=np.intp)
    gold = gold.reshape(len(pairs), max(n - 2, 0))
    if not pairs or n < 3:
        empty = np.zeros((len(pairs), 0))
        return OddsTable(causes, pairs, gold, empty, empty.astype(bool))
    jj = np.array([p[0] for p in pairs])[:, None]
    kk = np.array([p[1] for p in pairs])[:, None]
    num = probs[gold, jj]
    den = probs[gold, kk]
    missing = ~((num > 0) & (den > 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        lo = np.log(num) - np.log(den)
    lo[missing] = np.nan
    return OddsTable(causes, pairs, gold, lo, missing)


def odds_ratios(m: MisclassMatrix) -> np.ndarray:
    """Averaged odds ``eta_jk`` (C x C) from a matrix with constant odds.

    Entry ``(j, k)`` averages ``log(phi_ij / phi_ik)`` over ``i != j, k``;
    the diagonal is 1.
    """
    table = odds_table(m)
    n = len(m.causes)
    log_eta = np.zeros((n, n))
    for p, (j, k) in enumerate(table.pairs):
        vals = table.log_odds[p][~table.missing[p]]
        v = vals.mean() if vals.size else np.nan
        log_eta[j, k] = v
        log_eta[k, j] = -v
    return np.exp(log_eta)


def recover_base_params(m: MisclassMatrix) -> BaseParams:
    """Recover accuracy and pull from a matrix satisfying constant odds.

    Pull is the normalised ``theta_j = eta_jC`` (with ``theta_C = 1``); then
    ``1 - a_i = (1 - phi_ii) / (1 - alpha_i)``.
    """
    n = len(m.causes)
    if n < 3:
        raise ValueError("accuracy and pull are not identifiable with fewer than three causes")
    off = m.probs[np.arange(n)[:, None], offdiag_index(n)]
    if np.any(off <= 0):
        raise ValueError("constant-odds recovery requires positive off-diagonal entries")
    eta = odds_ratios(m)
    theta = eta[:, n - 1]
    pull = theta / theta.sum()
    pull[-1] = 1.0 - pull[:-1].sum()
    a = 1.0 - (1.0 - np.diag(m.probs)) / (1.0 - pull)
    if np.any(a < -1e-9) or np.any(a > 1 + 1e-9):
        raise ValueError("matrix has constant odds but implies accuracies outside [0, 1]")
    return BaseParams(np.clip(a, 0.0, 1.0), pull)


def pool(counts: Sequence[CountMatrix]) -> CountMatrix:
    """Elementwise sum of per-country count matrices."""
    if not counts:
        raise ValueError("nothing to pool")
    causes = counts[0].causes
    for c in counts[1:]:
        if c.causes != causes:
            raise DimensionError("cannot pool count matrices with different cause sets")
    return CountMatrix(np.sum([c.counts for c in counts], axis=0), causes)
