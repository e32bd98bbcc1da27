"""Shared data model, seeding, splitting, standardization and dataset I/O.

A dataset on disk is a directory::

    <id>/meta.json         metadata, keys in Metadata field order
    <id>/train.csv         header f0,...,f{d-1}; inliers only
    <id>/test.csv          same header
    <id>/test_labels.csv   header "label", 0/1; absent for private datasets

Reals are written with 17 significant digits, which round-trips float64
exactly, so writing the same split twice gives identical bytes.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import DimensionMismatch, FormatError, TooFewInliers, ValidationError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

SOURCES = ("synthetic", "curated")
PRIOR_FAMILIES = ("gmm", "scm", "copula")
OUTLIER_KINDS = (
    "gmm_subspace",
    "scm_measurement",
    "scm_structural",
    "copula_probabilistic",
    "copula_dependence",
)
ORIGINS = ("Logistics", "Engineering", "Science", "Human", "Other")

REAL_FORMAT = "%.17g"


def derive_seed(master: int, stream: int) -> int:
    """Child seed for ``(master, stream)``.

    splitmix64 finalizer applied to ``master ^ (stream * 0x9E3779B97F4A7C15)``,
    all arithmetic modulo 2**64. Negative inputs are taken modulo 2**64.
    """
    z = (int(master) ^ ((int(stream) * GOLDEN_GAMMA) & MASK64)) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def rng_from(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & MASK64)


def round_half_up(x: float) -> int:
    """Nearest integer, halves rounded up (Python's round() is banker's)."""
    return int(math.floor(x + 0.5))


def n_outliers_for(rate: float, n_total: int) -> int:
    return round_half_up(rate * n_total)


@dataclass
class Metadata:
    id: str
    name: str = ""
    source: Optional[str] = "synthetic"
    prior_family: Optional[str] = None
    outlier_kind: Optional[str] = None
    seed: int = 0
    d: int = 0
    n_train: int = 0
    n_test: int = 0
    n_outliers: int = 0
    tags: list = field(default_factory=list)
    keywords: list = field(default_factory=list)
    origin: Optional[str] = None
    private: bool = False

    def __post_init__(self):
        if not self.id:
            raise ValidationError("metadata id must be nonempty")
        if self.source is not None and self.source not in SOURCES:
            raise ValidationError(f"unknown source {self.source!r}")
        if self.prior_family is not None and self.prior_family not in PRIOR_FAMILIES:
            raise ValidationError(f"unknown prior family {self.prior_family!r}")
        if self.outlier_kind is not None and self.outlier_kind not in OUTLIER_KINDS:
            raise ValidationError(f"unknown outlier kind {self.outlier_kind!r}")
        if self.origin is not None and self.origin not in ORIGINS:
            raise ValidationError(f"unknown origin {self.origin!r}")
        self.tags = list(self.tags)
        self.keywords = list(self.keywords)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "Metadata":
        names = [f.name for f in dataclasses.fields(cls)]
        unknown = set(data) - set(names)
        if unknown:
            raise FormatError(f"unknown metadata keys {sorted(unknown)}")
        return cls(**{k: data[k] for k in names if k in data})

    def replace(self, **changes) -> "Metadata":
        return dataclasses.replace(self, **changes)


def as_feature_matrix(values, name: str = "features") -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValidationError(f"{name} must be a nonempty 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return x


def _as_labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise DimensionMismatch(f"expected {n} labels, got shape {y.shape}")
    if y.size and not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0 (inlier) or 1 (outlier)")
    return y.astype(np.int8)


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    meta: Metadata

    def __post_init__(self):
        self.features = as_feature_matrix(self.features)
        self.labels = _as_labels(self.labels, self.features.shape[0])
        n_out = int(self.labels.sum())
        if n_out == self.labels.size:
            raise ValidationError("dataset needs at least one inlier")
        if n_out / self.labels.size >= 0.5:
            raise ValidationError(f"contamination {n_out / self.labels.size:.3f} is not below 0.5")

    @property
    def n_outliers(self) -> int:
        return int(self.labels.sum())

    @property
    def contamination(self) -> float:
        return self.n_outliers / self.labels.size


@dataclass
class SplitDataset:
    train: np.ndarray
    test: np.ndarray
    test_labels: Optional[np.ndarray]
    meta: Metadata

    def __post_init__(self):
        self.train = as_feature_matrix(self.train, "train")
        self.test = as_feature_matrix(self.test, "test")
        if self.train.shape[1] != self.test.shape[1]:
            raise DimensionMismatch(
                f"train has {self.train.shape[1]} columns, test has {self.test.shape[1]}"
            )
        if self.test_labels is not None:
            self.test_labels = _as_labels(self.test_labels, self.test.shape[0])

    def __eq__(self, other):
        if not isinstance(other, SplitDataset):
            return NotImplemented
        if (self.test_labels is None) != (other.test_labels is None):
            return False
        return (
            np.array_equal(self.train, other.train)
            and np.array_equal(self.test, other.test)
            and (self.test_labels is None or np.array_equal(self.test_labels, other.test_labels))
            and self.meta == other.meta
        )


def make_split(data: LabeledDataset, seed: int) -> SplitDataset:
    """Half of the inliers to train, the rest plus every outlier to test.

    The train rows are a uniformly random floor(n_inliers / 2)-subset of the
    inliers; test rows are shuffled.
    """
    inliers = np.flatnonzero(data.labels == 0)
    outliers = np.flatnonzero(data.labels == 1)
    if inliers.size < 2:
        raise TooFewInliers(f"need at least 2 inliers to split, got {inliers.size}")

    rng = rng_from(seed)
    perm = rng.permutation(inliers)
    n_train = inliers.size // 2
    train_idx = perm[:n_train]
    test_idx = np.concatenate([perm[n_train:], outliers])
    test_idx = test_idx[rng.permutation(test_idx.size)]

    meta = data.meta.replace(
        d=data.features.shape[1],
        n_train=int(train_idx.size),
        n_test=int(test_idx.size),
        n_outliers=int(outliers.size),
    )
    return SplitDataset(
        train=data.features[train_idx],
        test=data.features[test_idx],
        test_labels=data.labels[test_idx],
        meta=meta,
    )


def standardize(train, test, min_scale: float = 1e-12):
    """Z-score both matrices with the train column mean and population std.

    Columns whose train std is below ``min_scale`` are centred only.

    Returns
    -------
    train_z, test_z : ndarray
    stats : tuple of (mean, scale) arrays
    """
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if train.ndim != 2 or test.ndim != 2 or train.shape[1] != test.shape[1]:
        raise DimensionMismatch(f"cannot standardize shapes {train.shape} and {test.shape}")
    if train.shape[0] < 2:
        raise ValidationError("standardize needs at least 2 train rows")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    scale = np.where(std < min_scale, 1.0, std)
    return (train - mean) / scale, (test - mean) / scale, (mean, scale)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def format_real(x: float) -> str:
    return REAL_FORMAT % x


def write_matrix_csv(path, values: np.ndarray, header: list[str]) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    lines = [",".join(header)]
    lines.extend(",".join(REAL_FORMAT % v for v in row) for row in values.tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_matrix_csv(path, expected_header: Optional[list[str]] = None) -> tuple[list[str], np.ndarray]:
    """Parse a headed numeric CSV. Row numbers in errors count the header as row 0."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty file", path=path)
    header = lines[0].split(",")
    if expected_header is not None and header != expected_header:
        raise FormatError(f"header {header[:4]}... does not match expected", path=path, row=0)
    ncol = len(header)
    out = np.empty((len(lines) - 1, ncol), dtype=np.float64)
    for i, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        if len(cells) != ncol:
            raise FormatError(f"expected {ncol} cells, found {len(cells)}", path=path, row=i)
        for j, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(f"not a number: {cell!r}", path=path, row=i, column=j) from None
            if not math.isfinite(v):
                raise FormatError(f"non-finite value {cell!r}", path=path, row=i, column=j)
            out[i - 1, j] = v
    return header, out


def feature_header(d: int) -> list[str]:
    return [f"f{j}" for j in range(d)]


def write_dataset(split: SplitDataset, directory) -> None:
    """Write ``split`` into ``directory`` (created if needed).

    Private datasets (``meta.private``) are written without test labels.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    d = split.train.shape[1]
    meta = split.meta.replace(d=d, n_train=split.train.shape[0], n_test=split.test.shape[0])
    (directory / "meta.json").write_text(
        json.dumps(meta.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
        newline="\n",
    )
    header = feature_header(d)
    write_matrix_csv(directory / "train.csv", split.train, header)
    write_matrix_csv(directory / "test.csv", split.test, header)
    labels_path = directory / "test_labels.csv"
    if meta.private or split.test_labels is None:
        if labels_path.exists():
            labels_path.unlink()
    else:
        lines = ["label"] + [str(int(v)) for v in split.test_labels]
        labels_path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_meta(directory) -> Metadata:
    path = Path(directory) / "meta.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path=path, row=exc.lineno, column=exc.colno) from None
    try:
        return Metadata.from_dict(data)
    except (TypeError, ValidationError) as exc:
        raise FormatError(str(exc), path=path) from None


def _read_labels(path: Path, n: int) -> np.ndarray:
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != "label":
        raise FormatError('expected header "label"', path=path, row=0)
    body = lines[1:]
    if len(body) != n:
        raise FormatError(f"expected {n} labels, found {len(body)}", path=path)
    out = np.empty(n, dtype=np.int8)
    for i, cell in enumerate(body, start=1):
        if cell not in ("0", "1"):
            raise FormatError(f"label must be 0 or 1, got {cell!r}", path=path, row=i, column=0)
        out[i - 1] = int(cell)
    return out


def read_dataset(directory) -> SplitDataset:
    directory = Path(directory)
    meta = read_meta(directory)
    header = feature_header(meta.d)
    _, train = read_matrix_csv(directory / "train.csv", header)
    _, test = read_matrix_csv(directory / "test.csv", header)
    if train.shape[0] != meta.n_train or test.shape[0] != meta.n_test:
        raise FormatError(
            f"row counts ({train.shape[0]}, {test.shape[0]}) disagree with meta "
            f"({meta.n_train}, {meta.n_test})",
            path=directory,
        )
    labels_path = directory / "test_labels.csv"
    if labels_path.exists():
        labels = _read_labels(labels_path, test.shape[0])
    elif meta.private:
        labels = None
    else:
        raise FormatError("public dataset is missing test_labels.csv", path=directory)
    return SplitDataset(train=train, test=test, test_labels=labels, meta=meta)
