"""Detection metrics and cross-dataset comparison statistics.

All table-level statistics take a :class:`PerfTable` whose values are
"higher is better" performances in [0, 1] (AUROC or AUPRC); the error of a
method on a dataset is ``1 - value``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import _accel
from ._accel import njit
from .core import rng_from
from .exceptions import AllTies, DimensionMismatch, SingleClass, ValidationError

# Elo deltas are snapped to this grid so every update is exact in float64
# while ratings stay below 2**20 in magnitude; the rating pool is then
# conserved bit-for-bit.
_ELO_QUANTUM = 2.0 ** -32

EXACT_MAX_N = 20


@dataclass
class PerfTable:
    methods: list
    datasets: list
    values: np.ndarray
    metric_kind: str = "auroc"

    def __post_init__(self):
        self.methods = [str(m) for m in self.methods]
        self.datasets = [str(d) for d in self.datasets]
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.methods), len(self.datasets)):
            raise DimensionMismatch(
                f"values shape {self.values.shape} != ({len(self.methods)}, {len(self.datasets)})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("performance table has missing or non-finite entries")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValidationError("performance values must lie in [0, 1]")
        if self.metric_kind not in ("auroc", "auprc"):
            raise ValidationError(f"unknown metric kind {self.metric_kind!r}")

    @property
    def errors(self) -> np.ndarray:
        return 1.0 - self.values

    def sorted_by_dataset(self) -> "PerfTable":
        order = sorted(range(len(self.datasets)), key=lambda j: self.datasets[j])
        return PerfTable(self.methods, [self.datasets[j] for j in order], self.values[:, order], self.metric_kind)


@dataclass(frozen=True)
class EloParams:
    r0: float = 1000.0
    k_factor: float = 32.0
    tie_eps: float = 0.5  # percentage points of the metric

    def __post_init__(self):
        if self.k_factor <= 0:
            raise ValidationError("k_factor must be positive")
        if self.tie_eps < 0:
            raise ValidationError("tie_eps must be nonnegative")


def _check_scores(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DimensionMismatch(f"{s.size} scores vs {y.size} labels")
    y = y.astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise SingleClass("both inliers and outliers are required")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: P(outlier scored above inlier), ties count one half."""
    s, y = _check_scores(scores, labels)
    ranks = rankdata(s)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Step-wise average precision with tied scores grouped into one threshold."""
    s, y = _check_scores(scores, labels)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    y = y[order]
    # last index of each block of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends].astype(np.float64)
    seen = (ends + 1).astype(np.float64)
    precision = tp / seen
    recall = tp / tp[-1]
    delta_r = np.diff(np.r_[0.0, recall])
    return float(np.sum(delta_r * precision))


def avg_rank(t: PerfTable) -> np.ndarray:
    """Mean per-dataset rank (1 = best, ties share the average position)."""
    _need_two_methods(t)
    ranks = rankdata(-t.values, axis=0)
    return ranks.mean(axis=1)


def winrate(t: PerfTable) -> np.ndarray:
    _need_two_methods(t)
    e = t.errors
    m = e.shape[0]
    wins = (e[:, None, :] < e[None, :, :]).sum(axis=(1, 2))
    ties = (e[:, None, :] == e[None, :, :]).sum(axis=(1, 2)) - e.shape[1]
    return (wins + 0.5 * ties) / (e.shape[1] * (m - 1))


def rauc(t: PerfTable) -> np.ndarray:
    """Per-dataset min-max rescaled error, averaged; flat datasets give 1.0."""
    _need_two_methods(t)
    e = t.errors
    lo = e.min(axis=0)
    span = e.max(axis=0) - lo
    flat = span == 0
    per = 1.0 - (e - lo) / np.where(flat, 1.0, span)
    per[:, flat] = 1.0
    return per.mean(axis=1)


def champion_delta(t: PerfTable) -> np.ndarray:
    """Mean relative gap (percent) of each method's error to the per-dataset best."""
    _need_two_methods(t)
    e = t.errors
    best = e.min(axis=0)
    safe = np.where(e == 0, 1.0, e)
    per = np.where(e == 0, 0.0, (1.0 - best / safe) * 100.0)
    return per.mean(axis=1)


def _need_two_methods(t: PerfTable):
    if len(t.methods) < 2:
        raise ValidationError("ranking statistics need at least two methods")


# --------------------------------------------------------------------------
# Elo
# --------------------------------------------------------------------------


@njit
def _elo_numba(values, r0, k_factor, tie_eps, quantum):
    m, n_data = values.shape
    ratings = np.full(m, r0)
    for j in range(n_data):
        for a in range(m):
            for b in range(a + 1, m):
                diff = values[a, j] * 100.0 - values[b, j] * 100.0
                if abs(diff) <= tie_eps:
                    score = 0.5
                elif diff > 0:
                    score = 1.0
                else:
                    score = 0.0
                expected = 1.0 / (1.0 + 10.0 ** ((ratings[b] - ratings[a]) / 400.0))
                delta = math.floor(k_factor * (score - expected) / quantum + 0.5) * quantum
                ratings[a] += delta
                ratings[b] -= delta
    return ratings


def _elo_numpy(values, r0, k_factor, tie_eps, quantum):
    m, n_data = values.shape
    ratings = np.full(m, float(r0))
    pct = values * 100.0
    pairs = [(a, b) for a in range(m) for b in range(a + 1, m)]
    for j in range(n_data):
        col = pct[:, j]
        for a, b in pairs:
            diff = col[a] - col[b]
            if abs(diff) <= tie_eps:
                score = 0.5
            elif diff > 0:
                score = 1.0
            else:
                score = 0.0
            expected = 1.0 / (1.0 + 10.0 ** ((ratings[b] - ratings[a]) / 400.0))
            delta = math.floor(k_factor * (score - expected) / quantum + 0.5) * quantum
            ratings[a] += delta
            ratings[b] -= delta
    return ratings


def elo(t: PerfTable, params: EloParams = EloParams(), canonical_order: bool = True) -> np.ndarray:
    """Round-robin Elo over datasets.

    Datasets are visited in sorted-id order unless ``canonical_order`` is
    False; within a dataset every unordered pair (a < b) plays once, ratings
    update online. A pair ties when the two values differ by at most
    ``tie_eps`` percentage points.
    """
    _need_two_methods(t)
    table = t.sorted_by_dataset() if canonical_order else t
    kernel = _elo_numba if _accel.USE_NUMBA else _elo_numpy
    return kernel(
        np.ascontiguousarray(table.values), float(params.r0), float(params.k_factor),
        float(params.tie_eps), _ELO_QUANTUM,
    )


# --------------------------------------------------------------------------
# paired permutation test
# --------------------------------------------------------------------------


def _tolerance(d: np.ndarray) -> float:
    # sums of the same terms in different order differ by rounding only
    return 1e-12 * max(1.0, float(np.abs(d).sum()))


@njit
def _exact_count_numba(d, t_obs, tol):
    n = d.shape[0]
    # Gray-code walk: consecutive sign patterns differ in one coordinate
    total = 0.0
    for i in range(n):
        total -= d[i]
    signs = np.full(n, -1.0)
    count = 1 if total >= t_obs - tol else 0
    n_patterns = 1 << n
    for g in range(1, n_patterns):
        # index of the lowest set bit of g flips
        bit = 0
        x = g
        while (x & 1) == 0:
            x >>= 1
            bit += 1
        signs[bit] = -signs[bit]
        total += 2.0 * signs[bit] * d[bit]
        if g & 0xFFFF == 0:
            # resum periodically to bound drift
            total = 0.0
            for i in range(n):
                total += signs[i] * d[i]
        if total >= t_obs - tol:
            count += 1
    return count


def _half_sums(d: np.ndarray) -> np.ndarray:
    n = d.size
    bits = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
    signs = 2.0 * bits - 1.0
    return signs @ d


def _exact_count_numpy(d, t_obs, tol):
    # meet in the middle: T_b = left + right
    h = d.size // 2
    left = _half_sums(d[:h])
    right = np.sort(_half_sums(d[h:]))
    idx = np.searchsorted(right, t_obs - tol - left, side="left")
    return int((right.size - idx).sum())


@njit
def _mc_count_numba(d, flips, t_obs, tol):
    count = 0
    b_total, n = flips.shape
    for b in range(b_total):
        s = 0.0
        for i in range(n):
            if flips[b, i]:
                s -= d[i]
            else:
                s += d[i]
        if s >= t_obs - tol:
            count += 1
    return count


def _mc_count_numpy(d, flips, t_obs, tol):
    signs = 1.0 - 2.0 * flips
    return int(np.count_nonzero(signs @ d >= t_obs - tol))


def _draw_flips(rng, budget, n, chunk=1 << 16):
    for start in range(0, budget, chunk):
        yield rng.integers(0, 2, size=(min(chunk, budget - start), n), dtype=np.uint8)


def permutation_test(a, b, budget: int = 10_000, seed: int = 0, exact_max_n: int = EXACT_MAX_N) -> float:
    """One-sided sign-flip test, ``p = Pr(T_b >= T)`` with ``T = sum(a - b)``.

    Zero differences are discarded. Up to ``exact_max_n`` remaining
    differences all 2**n sign patterns are enumerated; beyond that the
    p-value is the Monte Carlo estimate ``(1 + #{T_b >= T}) / (budget + 1)``.
    Small p favours ``a``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"paired samples differ in length: {a.size} vs {b.size}")
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise AllTies("every paired difference is zero")
    t_obs = float(d.sum())
    tol = _tolerance(d)

    if d.size <= exact_max_n:
        if _accel.USE_NUMBA:
            count = _exact_count_numba(d, t_obs, tol)
        else:
            count = _exact_count_numpy(d, t_obs, tol)
        return count / float(1 << d.size)

    if budget < 1:
        raise ValidationError("Monte Carlo budget must be at least 1")
    rng = rng_from(seed)
    kernel = _mc_count_numba if _accel.USE_NUMBA else _mc_count_numpy
    count = sum(int(kernel(d, flips, t_obs, tol)) for flips in _draw_flips(rng, budget, d.size))
    return (1 + count) / (budget + 1)


def pairwise_pvalues(t: PerfTable, budget: int = 10_000, seed: int = 0) -> np.ndarray:
    """Matrix P[i, j] = permutation_test(row i, column j); diagonal 0.5.

    Cells where every difference is zero are also 0.5.
    """
    m = len(t.methods)
    out = np.full((m, m), 0.5)
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            try:
                out[i, j] = permutation_test(t.values[i], t.values[j], budget=budget, seed=seed)
            except AllTies:
                out[i, j] = 0.5
    return out


def summarize(auroc_table: PerfTable, auprc_table: PerfTable, rank_on: str = "auroc",
              elo_params: EloParams = EloParams()) -> dict:
    """Per-method report columns; ranking statistics use ``rank_on``."""
    t = auroc_table if rank_on == "auroc" else auprc_table
    return {
        "avg_rank": avg_rank(t),
        "elo": elo(t, elo_params),
        "winrate": winrate(t),
        "rauc": rauc(t),
        "champion_delta": champion_delta(t),
        "mean_auroc": auroc_table.values.mean(axis=1),
        "mean_auprc": auprc_table.values.mean(axis=1),
    }
