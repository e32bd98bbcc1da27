"""Curation primitives for real-world tables.

Filtering unusable tables, keyword screening, duplicate hashing, one-vs-rest
target construction, a separability screen, anonymization and the
representative-subset search over a performance table.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from . import _accel
from ._accel import njit
from .core import (
    LabeledDataset,
    Metadata,
    SplitDataset,
    derive_seed,
    rng_from,
    round_half_up,
    standardize,
)
from .exceptions import FormatError, SingleClass, SubsetTooLarge, ValidationError
from .metrics import PerfTable, auroc

MIN_ROWS = 1000
MIN_NUMERIC = 3
MAX_BAD_RATIO = 0.25
NULL_MARKERS = {"", "nan", "NaN", "NAN", "null", "NULL", "None", "NA"}


# --------------------------------------------------------------------------
# preliminary filter
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Reject:
    """A table turned away by a curation step. ``reason`` is a short code."""

    reason: str
    detail: str = ""


def _parse_cell(cell):
    if cell is None:
        return None
    if isinstance(cell, (int, float, np.integer, np.floating)) and not isinstance(cell, bool):
        return float(cell)
    s = str(cell).strip()
    if s in NULL_MARKERS:
        return None
    try:
        return float(s)
    except ValueError:
        return s


def _is_bad(cell) -> bool:
    """Null or infinite (NaN counts as null)."""
    return cell is None or (isinstance(cell, float) and not math.isfinite(cell))


@dataclass
class RawTable:
    """Named columns of cells; a cell is a float, a string, or None (null)."""

    columns: dict

    def __post_init__(self):
        self.columns = {str(k): [_parse_cell(c) for c in v] for k, v in self.columns.items()}
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValidationError(f"columns have different lengths {sorted(lengths)}")

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def names(self) -> list:
        return list(self.columns)

    def is_numeric(self, name: str) -> bool:
        """Every non-null cell is a number (and there is at least one)."""
        cells = self.columns[name]
        return any(c is not None for c in cells) and all(c is None or isinstance(c, float) for c in cells)

    def numeric_names(self) -> list:
        return [n for n in self.columns if self.is_numeric(n)]

    def numeric_matrix(self) -> np.ndarray:
        names = self.numeric_names()
        if not names:
            return np.empty((self.n_rows, 0))
        return np.array([[np.nan if c is None else c for c in self.columns[n]] for n in names],
                        dtype=np.float64).T

    @classmethod
    def from_csv(cls, path) -> "RawTable":
        """Read a CSV with a header row. Empty cells, NaN and null spellings are null."""
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise FormatError("empty file", path=path)
        header = rows[0]
        if len(set(header)) != len(header):
            raise FormatError("duplicate column names", path=path, row=0)
        cols = {h: [] for h in header}
        for i, row in enumerate(rows[1:], start=1):
            if len(row) != len(header):
                raise FormatError(f"expected {len(header)} cells, found {len(row)}", path=path, row=i)
            for h, c in zip(header, row):
                cols[h].append(c)
        return cls(cols)


def _strictly_monotonic(values: list) -> bool:
    if len(values) < 2:
        return False
    d = np.diff(np.asarray(values, dtype=np.float64))
    return bool(np.all(d > 0) or np.all(d < 0))


def preliminary_filter(t: RawTable) -> Union[RawTable, Reject]:
    """Drop unusable columns and rows, or reject the table.

    1. columns with more than 25% null/inf cells are dropped;
    2. rows with any remaining null/inf cell are dropped;
    3. strictly monotonic numeric columns (row order as given) are dropped.

    Rejected with ``too_few_samples`` below 1000 rows or
    ``too_few_features`` below 3 numeric columns.
    """
    n = t.n_rows
    kept = {}
    for name, cells in t.columns.items():
        bad = sum(_is_bad(c) for c in cells)
        if n and bad / n > MAX_BAD_RATIO:
            continue
        kept[name] = cells
    good_rows = [i for i in range(n) if not any(_is_bad(cells[i]) for cells in kept.values())]
    kept = {k: [v[i] for i in good_rows] for k, v in kept.items()}
    numeric = RawTable(kept)
    out = RawTable(
        {k: v for k, v in kept.items() if not (numeric.is_numeric(k) and _strictly_monotonic(v))}
    )
    if len(good_rows) < MIN_ROWS:
        return Reject("too_few_samples", f"{len(good_rows)} usable rows")
    n_num = len(out.numeric_names())
    if n_num < MIN_NUMERIC:
        return Reject("too_few_features", f"{n_num} numeric columns")
    return out


# --------------------------------------------------------------------------
# keywords
# --------------------------------------------------------------------------


@lru_cache(maxsize=1)
def anomaly_keywords() -> tuple:
    """The keyword list, in file order (duplicates kept)."""
    text = resources.files("odforge").joinpath("data/keywords.txt").read_text(encoding="utf-8")
    return tuple(w.strip() for w in text.splitlines() if w.strip())


def anomaly_keyword_match(s: str) -> bool:
    """Case-insensitive substring match against the keyword list."""
    low = str(s).lower()
    return any(k.lower() in low for k in anomaly_keywords())


# --------------------------------------------------------------------------
# duplicate hashing
# --------------------------------------------------------------------------


class FeatureHash(NamedTuple):
    h_sin: float
    h_cos_e: float
    h_ratio: float
    h_atan: float
    h_log: float


HASH_DECIMALS = 6


def _round(x: float) -> float:
    r = round(x, HASH_DECIMALS)
    return 0.0 if r == 0 else r  # fold -0.0


def feature_hash(values) -> FeatureHash:
    """Rounded averages of sin x, cos(e x), x/(1+|x|), arctan x, log(|x|+1).

    Values are sorted before summing, so the hash does not depend on row
    order down to the last bit.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValidationError("cannot hash an empty feature")
    if not np.all(np.isfinite(x)):
        raise ValidationError("feature contains NaN or Inf")
    funcs = (
        np.sin(x),
        np.cos(math.e * x),
        x / (1.0 + np.abs(x)),
        np.arctan(x),
        np.log1p(np.abs(x)),
    )
    return FeatureHash(*(_round(math.fsum(f) / x.size) for f in funcs))


def _feature_matrix(data) -> np.ndarray:
    if isinstance(data, LabeledDataset):
        return data.features
    if isinstance(data, SplitDataset):
        return np.vstack([data.train, data.test])
    x = np.asarray(data, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def dataset_hashes(data) -> set:
    x = _feature_matrix(data)
    return {feature_hash(x[:, j]) for j in range(x.shape[1])}


def dataset_duplicate(a, b) -> bool:
    """True iff some feature of ``a`` hashes equal to some feature of ``b``."""
    return not dataset_hashes(a).isdisjoint(dataset_hashes(b))


# --------------------------------------------------------------------------
# one-vs-rest
# --------------------------------------------------------------------------

OVR_CARDINALITY = (2, 10)


def _ovr_count(rate: float, n_in: int, lo: float, hi: float, available: int):
    """Outlier count for target ``rate``, kept inside [lo, hi] after rounding."""
    n_out = round_half_up(rate / (1.0 - rate) * n_in)
    while n_out > 0 and n_out / (n_in + n_out) > hi:
        n_out -= 1
    while n_out / (n_in + n_out) < lo:
        n_out += 1
    return min(n_out, available)


def make_ovr(features, classes, rate_range=(0.05, 0.2), seed: int = 0, name: str = "") -> Union[LabeledDataset, Reject]:
    """Majority class as inliers, a uniform subsample of the rest as outliers.

    Rejects when the class count is outside [2, 10], when the majority class
    holds less than half the rows, or when too few non-majority rows exist
    to reach the lower end of ``rate_range``. The achieved contamination is
    stored in the metadata tags.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    classes = np.asarray(classes)
    if classes.shape[0] != x.shape[0]:
        raise ValidationError(f"{x.shape[0]} rows but {classes.shape[0]} class labels")
    values, counts = np.unique(classes, return_counts=True)
    if not OVR_CARDINALITY[0] <= values.size <= OVR_CARDINALITY[1]:
        return Reject("cardinality", f"{values.size} distinct classes")
    order = np.lexsort((values.astype(str), -counts))
    major = values[order[0]]
    n_in = int(counts[order[0]])
    if 2 * n_in < classes.size:
        return Reject("majority_below_half", f"majority class holds {n_in}/{classes.size}")
    lo, hi = rate_range
    if not 0 < lo <= hi < 0.5:
        raise ValidationError(f"rate range {rate_range} must satisfy 0 < lo <= hi < 0.5")
    rng = rng_from(seed)
    rate = float(rng.uniform(lo, hi))
    inl = np.flatnonzero(classes == major)
    rest = np.flatnonzero(classes != major)
    n_out = _ovr_count(rate, n_in, lo, hi, rest.size)
    achieved = n_out / (n_in + n_out)
    if achieved < lo:
        return Reject("too_few_anomalies", f"{rest.size} non-majority rows for {n_in} inliers")
    out = np.sort(rng.choice(rest, size=n_out, replace=False))
    idx = np.concatenate([inl, out])
    y = np.r_[np.zeros(inl.size, dtype=np.int8), np.ones(n_out, dtype=np.int8)]
    perm = rng.permutation(idx.size)
    meta = Metadata(
        id=f"ovr-{derive_seed(seed, 0):016x}",
        name=name,
        source="curated",
        d=x.shape[1],
        n_outliers=n_out,
        tags=["ovr", f"contamination={achieved:.6f}"],
    )
    return LabeledDataset(x[idx][perm], y[perm], meta)


# --------------------------------------------------------------------------
# separability
# --------------------------------------------------------------------------

Oracle = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def weighted_knn_oracle(train_x, train_y, test_x, k: int = 5) -> np.ndarray:
    """Distance-weighted k-NN class-1 probability on train-standardized features.

    Exact matches (distance 0) outvote everything else, as with inverse
    distance weights in the limit.
    """
    tz, sz, _ = standardize(train_x, test_x)
    k = min(k, tz.shape[0])
    dist, idx = cKDTree(tz).query(sz, k=k)
    dist = dist.reshape(sz.shape[0], k)
    lab = np.asarray(train_y, dtype=np.float64)[idx.reshape(sz.shape[0], k)]
    zero = dist == 0
    with np.errstate(divide="ignore"):
        w = np.where(zero.any(axis=1, keepdims=True), zero.astype(np.float64), 1.0 / dist)
    return (w * lab).sum(axis=1) / w.sum(axis=1)


def stratified_halves(labels: np.ndarray, rng) -> np.ndarray:
    """Fold id (0/1) per row; each class is split as evenly as possible."""
    fold = np.empty(labels.size, dtype=np.int8)
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == c))
        fold[idx] = (np.arange(idx.size) % 2).astype(np.int8)
    return fold


def separability_auroc(data: LabeledDataset, oracle: Optional[Oracle] = None, seed: int = 0) -> float:
    oracle = weighted_knn_oracle if oracle is None else oracle
    y = data.labels
    counts = np.bincount(y, minlength=2)
    if counts.min() < 2:
        raise SingleClass(f"each class needs at least 2 rows for 2-fold CV, got {counts.tolist()}")
    fold = stratified_halves(y, rng_from(seed))
    scores = []
    for f in (0, 1):
        tr, te = fold != f, fold == f
        prob = np.asarray(oracle(data.features[tr], y[tr], data.features[te]), dtype=np.float64)
        scores.append(auroc(prob, y[te]))
    return float(np.mean(scores))


def separability_check(data: LabeledDataset, threshold: float = 0.60, oracle: Optional[Oracle] = None,
                       seed: int = 0) -> bool:
    """Mean 2-fold stratified CV AUROC of ``oracle`` is at least ``threshold``."""
    return separability_auroc(data, oracle, seed) >= threshold


# --------------------------------------------------------------------------
# anonymization
# --------------------------------------------------------------------------


def anonymize(s: SplitDataset, seed: int) -> SplitDataset:
    """Shuffle columns (jointly) and rows (per part) and strip the metadata.

    The new id is a keyed digest of the old id, so it is stable for a given
    seed but reveals nothing readable. Test labels stay attached (permuted
    with their rows) but are never written since the result is private.
    """
    rng = rng_from(derive_seed(seed, 0xA70))
    d = s.train.shape[1]
    cols = rng.permutation(d)
    r_train = rng.permutation(s.train.shape[0])
    r_test = rng.permutation(s.test.shape[0])
    digest = hashlib.blake2b(f"{seed}:{s.meta.id}".encode(), digest_size=8).hexdigest()
    meta = Metadata(
        id=f"anon-{digest}",
        name="",
        source=None,
        seed=0,
        d=d,
        n_train=s.train.shape[0],
        n_test=s.test.shape[0],
        n_outliers=s.meta.n_outliers,
        private=True,
    )
    labels = None if s.test_labels is None else s.test_labels[r_test]
    return SplitDataset(s.train[r_train][:, cols], s.test[r_test][:, cols], labels, meta)


# --------------------------------------------------------------------------
# representative subset
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RepSetConfig:
    subset_size: int = 50
    iterations: int = 1_000_000
    p_random: float = 0.5
    p_worst_parent: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.subset_size < 1 or self.iterations < 1:
            raise ValidationError("subset_size and iterations must be positive")
        if not (0 <= self.p_random <= 1 and 0 <= self.p_worst_parent <= 1):
            raise ValidationError("probabilities must lie in [0, 1]")


@dataclass
class RepSetResult:
    indices: np.ndarray
    datasets: list
    objective: float
    best_trace: Optional[np.ndarray] = None
    candidate_trace: Optional[np.ndarray] = None


BLOCK = 4096


@njit
def _moments_numba(vals, mask):
    """(3, M) array of mean, population std and g1 skewness over masked rows."""
    n_rows, m = vals.shape
    out = np.zeros((3, m))
    cnt = 0
    for i in range(n_rows):
        if mask[i]:
            cnt += 1
            for j in range(m):
                out[0, j] += vals[i, j]
    for j in range(m):
        out[0, j] /= cnt
    m2 = np.zeros(m)
    m3 = np.zeros(m)
    for i in range(n_rows):
        if mask[i]:
            for j in range(m):
                dv = vals[i, j] - out[0, j]
                m2[j] += dv * dv
                m3[j] += dv * dv * dv
    for j in range(m):
        a = m2[j] / cnt
        b = m3[j] / cnt
        out[1, j] = math.sqrt(a)
        out[2, j] = b / a**1.5 if a > 0.0 else 0.0
    return out


def _moments_numpy(vals, mask):
    sub = vals[mask]
    mean = sub.sum(axis=0) / sub.shape[0]
    dv = sub - mean
    a = (dv * dv).sum(axis=0) / sub.shape[0]
    b = (dv * dv * dv).sum(axis=0) / sub.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = np.where(a > 0, b / a**1.5, 0.0)
    return np.stack([mean, np.sqrt(a), g1])


@njit
def _objective_numba(vals, mask, target):
    mom = _moments_numba(vals, mask)
    s = 0.0
    for k in range(3):
        for j in range(vals.shape[1]):
            dv = target[k, j] - mom[k, j]
            s += dv * dv
    return s


def _objective_numpy(vals, mask, target):
    return float(((target - _moments_numpy(vals, mask)) ** 2).sum())


@njit
def _fresh_numba(mask, size, u):
    """Floyd's sampling of ``size`` rows from ``u[0:size]``."""
    n = mask.shape[0]
    mask[:] = False
    k = 0
    for j in range(n - size, n):
        t = int(u[k] * (j + 1))
        k += 1
        if mask[t]:
            mask[j] = True
        else:
            mask[t] = True


@njit
def _mutate_numba(mask, parent, size, u_member, u_other):
    """Copy ``parent`` and swap its p-th member for its q-th non-member."""
    mask[:] = parent
    n = mask.shape[0]
    if size == n:
        return
    p = int(u_member * size)
    q = int(u_other * (n - size))
    seen_in = 0
    seen_out = 0
    drop = -1
    add = -1
    for i in range(n):
        if parent[i]:
            if seen_in == p:
                drop = i
            seen_in += 1
        else:
            if seen_out == q:
                add = i
            seen_out += 1
    mask[drop] = False
    mask[add] = True


@njit
def _search_block_numba(vals, target, size, p_random, p_worst, u, state_best, state_worst, objs, trace_best, trace_cand):
    n = vals.shape[0]
    cand = np.empty(n, dtype=np.bool_)
    for it in range(u.shape[0]):
        # the first candidate has no parent, so it is always fresh
        if u[it, 0] < p_random or objs[0] == np.inf:
            _fresh_numba(cand, size, u[it, 3:])
        else:
            parent = state_worst if u[it, 1] < p_worst else state_best
            _mutate_numba(cand, parent, size, u[it, 2], u[it, 3])
        obj = _objective_numba(vals, cand, target)
        if obj < objs[0]:
            objs[0] = obj
            state_best[:] = cand
        if obj > objs[1]:
            objs[1] = obj
            state_worst[:] = cand
        trace_best[it] = objs[0]
        trace_cand[it] = obj


def _fresh_numpy(mask, size, u):
    n = mask.size
    mask[:] = False
    for k, j in enumerate(range(n - size, n)):
        t = int(u[k] * (j + 1))
        if mask[t]:
            mask[j] = True
        else:
            mask[t] = True


def _mutate_numpy(mask, parent, size, u_member, u_other):
    mask[:] = parent
    if size == parent.size:
        return
    members = np.flatnonzero(parent)
    others = np.flatnonzero(~parent)
    mask[members[int(u_member * size)]] = False
    mask[others[int(u_other * (parent.size - size))]] = True


def _search_block_numpy(vals, target, size, p_random, p_worst, u, state_best, state_worst, objs, trace_best, trace_cand):
    cand = np.empty(vals.shape[0], dtype=bool)
    for it in range(u.shape[0]):
        if u[it, 0] < p_random or objs[0] == np.inf:
            _fresh_numpy(cand, size, u[it, 3:])
        else:
            parent = state_worst if u[it, 1] < p_worst else state_best
            _mutate_numpy(cand, parent, size, u[it, 2], u[it, 3])
        obj = _objective_numpy(vals, cand, target)
        if obj < objs[0]:
            objs[0] = obj
            state_best[:] = cand
        if obj > objs[1]:
            objs[1] = obj
            state_worst[:] = cand
        trace_best[it] = objs[0]
        trace_cand[it] = obj


def subset_objective(t: PerfTable, indices) -> float:
    """Squared mismatch of per-method mean, std and skewness, subset vs all datasets."""
    vals = np.ascontiguousarray(t.values.T)
    mask = np.zeros(vals.shape[0], dtype=bool)
    mask[np.asarray(indices, dtype=np.int64)] = True
    target = _moments_numpy(vals, np.ones(vals.shape[0], dtype=bool))
    return _objective_numpy(vals, mask, target)


def representative_subset(t: PerfTable, cfg: RepSetConfig = RepSetConfig(), trace: bool = False) -> RepSetResult:
    """Evolutionary search for a dataset subset whose per-method moments match the full table.

    Each candidate is, with probability ``p_random``, a fresh uniform subset;
    otherwise a one-swap mutation of the best subset so far (or, with
    probability ``p_worst_parent``, of the worst). Uniforms are drawn in
    fixed-size blocks of ``3 + subset_size`` per iteration, so the numba and
    numpy paths consume identical streams.
    """
    vals = np.ascontiguousarray(t.values.T)
    n = vals.shape[0]
    size = cfg.subset_size
    if size > n:
        raise SubsetTooLarge(f"subset of {size} requested from {n} datasets")
    rng = rng_from(cfg.seed)
    use_numba = _accel.USE_NUMBA
    moments = _moments_numba if use_numba else _moments_numpy
    search = _search_block_numba if use_numba else _search_block_numpy
    target = moments(vals, np.ones(n, dtype=np.bool_))

    best = np.zeros(n, dtype=np.bool_)
    worst = np.zeros(n, dtype=np.bool_)
    objs = np.array([np.inf, -np.inf])
    trace_best = np.empty(cfg.iterations)
    trace_cand = np.empty(cfg.iterations)
    width = 3 + size
    done = 0
    while done < cfg.iterations:
        m = min(BLOCK, cfg.iterations - done)
        u = rng.random((m, width))
        search(vals, target, size, cfg.p_random, cfg.p_worst_parent, u, best, worst, objs,
               trace_best[done:done + m], trace_cand[done:done + m])
        done += m
    idx = np.flatnonzero(best)
    return RepSetResult(
        indices=idx,
        datasets=[t.datasets[i] for i in idx],
        objective=float(objs[0]),
        best_trace=trace_best if trace else None,
        candidate_trace=trace_cand if trace else None,
    )
