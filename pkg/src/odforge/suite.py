"""Suite definitions and generation.

A suite is a directory holding one dataset directory per generated dataset
plus ``suite_manifest.json``. Dataset ``i`` (running index over all
categories, in spec order) gets seed ``derive_seed(master_seed, i)``; its
config, data and split draw from child streams 1, 2 and 3 of that seed.
"""

from __future__ import annotations

import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .core import OUTLIER_KINDS, derive_seed, make_split, write_dataset
from .exceptions import FormatError, OdForgeError, ValidationError
from .priors import (
    generate_copula_dataset,
    generate_gmm_dataset,
    generate_scm_dataset,
    sample_copula_config,
    sample_gmm_config,
    sample_scm_config,
)

log = logging.getLogger(__name__)

MANIFEST = "suite_manifest.json"
DEFAULT_PER_CATEGORY = 160

# outlier kind -> prior family
CATEGORY_FAMILY = {
    "gmm_subspace": "gmm",
    "scm_measurement": "scm",
    "scm_structural": "scm",
    "copula_probabilistic": "copula",
    "copula_dependence": "copula",
}


@dataclass(frozen=True)
class Category:
    prior_family: str
    outlier_kind: str
    count: int

    def __post_init__(self):
        if self.outlier_kind not in OUTLIER_KINDS:
            raise ValidationError(f"unknown outlier kind {self.outlier_kind!r}")
        if CATEGORY_FAMILY[self.outlier_kind] != self.prior_family:
            raise ValidationError(
                f"outlier kind {self.outlier_kind!r} belongs to prior {CATEGORY_FAMILY[self.outlier_kind]!r}"
            )
        if int(self.count) < 1:
            raise ValidationError("category counts must be at least 1")


@dataclass
class SuiteSpec:
    categories: list = field(default_factory=list)
    d_range: tuple = (2, 100)
    n_range: tuple = (1000, 6000)
    r_range: tuple = (0.05, 0.15)
    master_seed: int = 0

    def __post_init__(self):
        self.categories = [c if isinstance(c, Category) else Category(**c) for c in self.categories]
        if not self.categories:
            raise ValidationError("a suite needs at least one category")
        self.d_range = tuple(int(v) for v in self.d_range)
        self.n_range = tuple(int(v) for v in self.n_range)
        self.r_range = tuple(float(v) for v in self.r_range)
        lo, hi = self.d_range
        if not 2 <= lo <= hi:
            raise ValidationError(f"bad d range {self.d_range}")
        if not 4 <= self.n_range[0] <= self.n_range[1]:
            raise ValidationError(f"bad n_total range {self.n_range}")
        if not 0 < self.r_range[0] <= self.r_range[1] < 0.5:
            raise ValidationError(f"bad contamination range {self.r_range}")

    @property
    def total(self) -> int:
        return sum(c.count for c in self.categories)

    def to_dict(self) -> dict:
        return {
            "categories": [
                {"prior_family": c.prior_family, "outlier_kind": c.outlier_kind, "count": c.count}
                for c in self.categories
            ],
            "d_range": list(self.d_range),
            "n_range": list(self.n_range),
            "r_range": list(self.r_range),
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SuiteSpec":
        known = {"categories", "d_range", "n_range", "r_range", "master_seed"}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown suite spec keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SuiteSpec":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", path=path, row=exc.lineno) from None
        return cls.from_dict(data)


def default_spec(master_seed: int = 0, per_category: int = DEFAULT_PER_CATEGORY) -> SuiteSpec:
    """Five outlier categories with ``per_category`` datasets each."""
    cats = [Category(CATEGORY_FAMILY[k], k, per_category) for k in OUTLIER_KINDS]
    return SuiteSpec(categories=cats, master_seed=master_seed)


@dataclass(frozen=True)
class Task:
    dataset_id: str
    outlier_kind: str
    seed: int
    d_range: tuple
    n_range: tuple
    r_range: tuple


def plan(spec: SuiteSpec) -> list[Task]:
    tasks = []
    index = 0
    for cat in spec.categories:
        for j in range(cat.count):
            tasks.append(
                Task(
                    dataset_id=f"{cat.outlier_kind}-{j:04d}",
                    outlier_kind=cat.outlier_kind,
                    seed=derive_seed(spec.master_seed, index),
                    d_range=spec.d_range,
                    n_range=spec.n_range,
                    r_range=spec.r_range,
                )
            )
            index += 1
    ids = [t.dataset_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValidationError("an outlier kind appears in more than one category")
    return tasks


def generate_one(task: Task):
    """Labelled dataset for ``task`` before splitting."""
    cfg_seed = derive_seed(task.seed, 1)
    gen_seed = derive_seed(task.seed, 2)
    ranges = dict(d_range=task.d_range, n_range=task.n_range, r_range=task.r_range)
    kind = task.outlier_kind
    if kind == "gmm_subspace":
        data = generate_gmm_dataset(sample_gmm_config(cfg_seed, **ranges), gen_seed)
    elif kind.startswith("scm_"):
        data = generate_scm_dataset(sample_scm_config(cfg_seed, kind[4:], **ranges), gen_seed)
    else:
        data = generate_copula_dataset(sample_copula_config(cfg_seed, kind[7:], **ranges), gen_seed)
    data.meta = data.meta.replace(id=task.dataset_id, seed=int(task.seed))
    return data


def _run_task(task: Task, out_dir: str):
    """Generate, split and write one dataset; returns (id, error or None)."""
    target = Path(out_dir) / task.dataset_id
    try:
        data = generate_one(task)
        split = make_split(data, derive_seed(task.seed, 3))
        write_dataset(split, target)
    except (OdForgeError, ValueError, FloatingPointError, ArithmeticError) as exc:
        shutil.rmtree(target, ignore_errors=True)
        return task.dataset_id, f"{type(exc).__name__}: {exc}"
    return task.dataset_id, None


@dataclass
class SuiteResult:
    ids: list
    failures: list  # (id, reason)


def generate_suite(spec: SuiteSpec, out_dir, jobs: int = 1) -> SuiteResult:
    """Write every dataset of ``spec`` under ``out_dir`` plus the manifest.

    Failed datasets are logged and listed, never fatal.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = plan(spec)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks, [str(out)] * len(tasks), chunksize=4))
    else:
        results = [_run_task(t, str(out)) for t in tasks]

    ids, failures = [], []
    kinds = {t.dataset_id: t.outlier_kind for t in tasks}
    for ds_id, err in results:
        if err is None:
            ids.append(ds_id)
        else:
            log.warning("dataset %s failed: %s", ds_id, err)
            failures.append((ds_id, err))
    manifest = {
        "spec": spec.to_dict(),
        "datasets": [{"id": i, "outlier_kind": kinds[i]} for i in ids],
        "failures": [{"id": i, "reason": r} for i, r in failures],
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8", newline="\n")
    return SuiteResult(ids, failures)


def suite_ids(suite_dir) -> list[str]:
    """Dataset ids listed in a suite manifest."""
    path = Path(suite_dir) / MANIFEST
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return [entry["id"] for entry in data["datasets"]]
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path=path, row=exc.lineno) from None
    except (KeyError, TypeError):
        raise FormatError("manifest lacks a datasets list", path=path) from None
