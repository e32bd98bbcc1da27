"""``odforge`` command line.

Exit codes: 0 on success, 1 on a rejection or validation error, 2 on an
I/O or file-format error. Every random choice is driven by an explicit
``--seed`` flag (default 0), so repeated invocations give identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import curation, detectors, metrics
from .core import (
    LabeledDataset,
    Metadata,
    format_real,
    make_split,
    read_dataset,
    read_matrix_csv,
    standardize,
    write_dataset,
    write_matrix_csv,
)
from .exceptions import FormatError, MissingScores, OdForgeError, PrivateLabels, ValidationError
from .suite import SuiteSpec, default_spec, generate_suite, suite_ids

log = logging.getLogger("odforge")

EXIT_OK, EXIT_REJECT, EXIT_IO = 0, 1, 2
RUN_MANIFEST = "run_manifest.json"


def _write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# generate-suite
# --------------------------------------------------------------------------


def cmd_generate_suite(args) -> int:
    spec = SuiteSpec.load(args.spec) if args.spec else default_spec(args.seed)
    result = generate_suite(spec, args.out, jobs=args.jobs)
    print(f"generated {len(result.ids)} datasets in {args.out}")
    for ds_id, reason in result.failures:
        print(f"failed {ds_id}: {reason}", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# score
# --------------------------------------------------------------------------


def method_params(args) -> dict:
    """Parameters that actually reach the detector for ``args.method``."""
    if args.method == "knn":
        return {"k": args.k, "variant": args.variant}
    if args.method == "dtenp":
        return {"k": args.k}
    if args.method == "egmm":
        return {"seed": args.seed}
    return {}


def method_label(method: str, params: dict) -> str:
    parts = [method] + [f"{k}{v}" for k, v in sorted(params.items())]
    return "-".join(parts)


def params_digest(method: str, params: dict) -> str:
    blob = json.dumps({"method": method, "params": params}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def score_dataset(method: str, params: dict, dataset_dir) -> tuple[np.ndarray, float]:
    """Scores for the test rows plus the wall-clock seconds for fit and inference."""
    s = read_dataset(dataset_dir)
    start = time.perf_counter()
    train, test, _ = standardize(s.train, s.test)
    try:
        scores = detectors.score(method, train, test, **params)
    except OdForgeError as exc:
        raise type(exc)(f"{s.meta.id}: {exc}") from exc
    return scores, time.perf_counter() - start


def write_scores(path, scores) -> None:
    write_matrix_csv(path, scores, ["score"])


def _score_job(method, params, dataset_dir, out_file):
    scores, seconds = score_dataset(method, params, dataset_dir)
    write_scores(out_file, scores)
    return seconds


def cmd_score(args) -> int:
    params = method_params(args)
    if (args.dataset is None) == (args.suite is None):
        raise ValidationError("give exactly one of --dataset or --suite")
    if args.dataset is not None:
        scores, seconds = score_dataset(args.method, params, args.dataset)
        write_scores(args.out, scores)
        # timing lives in a sidecar so the score file stays deterministic
        _write_json(
            str(args.out) + ".timing.json",
            {"method": args.method, "params": params, "dataset": str(args.dataset), "seconds": seconds},
        )
        return EXIT_OK

    ids = suite_ids(args.suite)
    label = args.label or method_label(args.method, params)
    out = Path(args.out) / label
    out.mkdir(parents=True, exist_ok=True)
    dirs = [str(Path(args.suite) / i) for i in ids]
    files = [str(out / f"{i}.csv") for i in ids]
    n = len(ids)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            seconds = list(pool.map(_score_job, [args.method] * n, [params] * n, dirs, files))
    else:
        seconds = [_score_job(args.method, params, d, f) for d, f in zip(dirs, files)]
    _write_json(
        out / RUN_MANIFEST,
        {
            "method": args.method,
            "label": label,
            "params": params,
            "params_digest": params_digest(args.method, params),
            "datasets": ids,
            "score_files": [f"{i}.csv" for i in ids],
            "timing_seconds": dict(zip(ids, seconds)),
        },
    )
    print(f"scored {n} datasets with {label}")
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------


def read_scores(path) -> np.ndarray:
    _, values = read_matrix_csv(path, ["score"])
    return values[:, 0]


def build_tables(suite_dir, scores_dir) -> tuple[metrics.PerfTable, metrics.PerfTable]:
    """AUROC and AUPRC tables over every method directory in ``scores_dir``."""
    suite_dir, scores_dir = Path(suite_dir), Path(scores_dir)
    ids = sorted(suite_ids(suite_dir))
    methods = sorted(p.name for p in scores_dir.iterdir() if p.is_dir())
    if not methods:
        raise MissingScores([("<no methods>", scores_dir.name)])
    missing = [(m, i) for m in methods for i in ids if not (scores_dir / m / f"{i}.csv").is_file()]
    if missing:
        raise MissingScores(missing)
    roc = np.empty((len(methods), len(ids)))
    prc = np.empty_like(roc)
    for j, ds_id in enumerate(ids):
        s = read_dataset(suite_dir / ds_id)
        if s.test_labels is None:
            raise PrivateLabels(f"dataset {ds_id} has no test labels")
        for i, m in enumerate(methods):
            sc = read_scores(scores_dir / m / f"{ds_id}.csv")
            if sc.size != s.test_labels.size:
                raise ValidationError(f"{m}/{ds_id}: {sc.size} scores for {s.test_labels.size} test rows")
            roc[i, j] = metrics.auroc(sc, s.test_labels)
            prc[i, j] = metrics.auprc(sc, s.test_labels)
    return (metrics.PerfTable(methods, ids, roc, "auroc"), metrics.PerfTable(methods, ids, prc, "auprc"))


REPORT_COLUMNS = ("avg_rank", "elo", "winrate", "rauc", "champion_delta", "mean_auroc", "mean_auprc")


def _rows_csv(header, rows) -> str:
    lines = [",".join(header)]
    for name, vals in rows:
        lines.append(",".join([name] + [format_real(float(v)) for v in vals]))
    return "\n".join(lines) + "\n"


def write_perf_csv(path, t: metrics.PerfTable) -> None:
    """One row per dataset, one column per method."""
    _write_text(path, _rows_csv(["dataset"] + t.methods, zip(t.datasets, t.values.T)))


def read_perf_csv(path, metric_kind: str = "auroc") -> metrics.PerfTable:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise FormatError("expected a header of dataset plus method names", path=path, row=0)
    methods = rows[0][1:]
    datasets, values = [], []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(methods) + 1:
            raise FormatError(f"expected {len(methods) + 1} cells, found {len(row)}", path=path, row=i)
        datasets.append(row[0])
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError:
            raise FormatError("non-numeric performance value", path=path, row=i) from None
    return metrics.PerfTable(methods, datasets, np.array(values).T.reshape(len(methods), len(datasets)),
                             metric_kind)


def cmd_evaluate(args) -> int:
    roc, prc = build_tables(args.suite, args.scores)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = metrics.summarize(roc, prc, rank_on=args.rank_on)
    _write_text(
        out / "report.csv",
        _rows_csv(["method", *REPORT_COLUMNS], [(m, [rep[c][i] for c in REPORT_COLUMNS]) for i, m in enumerate(roc.methods)]),
    )
    ranked = roc if args.rank_on == "auroc" else prc
    p = metrics.pairwise_pvalues(ranked, budget=args.budget, seed=args.seed)
    _write_text(out / "pvalues.csv", _rows_csv(["method"] + ranked.methods, zip(ranked.methods, p)))
    write_perf_csv(out / "perf_auroc.csv", roc)
    write_perf_csv(out / "perf_auprc.csv", prc)
    print(f"evaluated {len(roc.methods)} methods on {len(roc.datasets)} datasets")
    return EXIT_OK


# --------------------------------------------------------------------------
# thin wrappers
# --------------------------------------------------------------------------


def cmd_repset(args) -> int:
    t = read_perf_csv(args.perf)
    cfg = curation.RepSetConfig(subset_size=args.size, iterations=args.iters, seed=args.seed)
    res = curation.representative_subset(t, cfg)
    text = "\n".join(res.datasets) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    print(f"objective={format_real(res.objective)}", file=sys.stderr)
    return EXIT_OK


def _read_column(path) -> np.ndarray:
    _, values = read_matrix_csv(path)
    if values.shape[1] != 1:
        raise FormatError(f"expected one column, found {values.shape[1]}", path=path)
    return values[:, 0]


def cmd_permtest(args) -> int:
    p = metrics.permutation_test(_read_column(args.a), _read_column(args.b), budget=args.budget, seed=args.seed)
    print(f"p={format_real(p)}")
    return EXIT_OK


def _load_labeled_csv(path, label_column):
    t = curation.RawTable.from_csv(path)
    if label_column not in t.columns:
        raise ValidationError(f"no column named {label_column!r}")
    labels = t.columns.pop(label_column)
    rest = curation.RawTable(t.columns)
    names = rest.numeric_names()
    if not names:
        raise ValidationError("no numeric feature columns")
    return rest.numeric_matrix(), labels


def cmd_split(args) -> int:
    x, labels = _load_labeled_csv(args.input, args.label_column)
    try:
        y = np.array([int(v) for v in labels], dtype=np.int8)
    except (TypeError, ValueError):
        raise ValidationError("labels must be 0 or 1") from None
    meta = Metadata(id=args.id or Path(args.input).stem, name=Path(args.input).stem, source="curated",
                    seed=args.seed)
    write_dataset(make_split(LabeledDataset(x, y, meta), args.seed), args.out)
    return EXIT_OK


def cmd_anonymize(args) -> int:
    s = curation.anonymize(read_dataset(args.dataset), args.seed)
    write_dataset(s, args.out)
    print(s.meta.id)
    return EXIT_OK


def _hash_input(path):
    path = Path(path)
    if path.is_dir():
        return read_dataset(path)
    return read_matrix_csv(path)[1]


def cmd_hash(args) -> int:
    a = _hash_input(args.a)
    if args.b is None:
        for h in sorted(curation.dataset_hashes(a)):
            # hash values carry 6 decimals, so the shortest repr is exact
            print(",".join(repr(float(v)) for v in h))
        return EXIT_OK
    print("duplicate" if curation.dataset_duplicate(a, _hash_input(args.b)) else "distinct")
    return EXIT_OK


def _write_raw_csv(path, t: curation.RawTable) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(t.names)
        cols = [t.columns[n] for n in t.names]
        for row in zip(*cols):
            w.writerow([format_real(c) if isinstance(c, float) else c for c in row])


def _reject(r: curation.Reject) -> int:
    print(f"rejected: {r.reason}" + (f" ({r.detail})" if r.detail else ""))
    return EXIT_REJECT


def cmd_filter(args) -> int:
    out = curation.preliminary_filter(curation.RawTable.from_csv(args.input))
    if isinstance(out, curation.Reject):
        return _reject(out)
    _write_raw_csv(args.out, out)
    return EXIT_OK


def cmd_ovr(args) -> int:
    x, classes = _load_labeled_csv(args.input, args.label_column)
    classes = np.array(["" if c is None else str(c) for c in classes])
    data = curation.make_ovr(x, classes, (args.rate_min, args.rate_max), seed=args.seed, name=Path(args.input).stem)
    if isinstance(data, curation.Reject):
        return _reject(data)
    if args.separability is not None:
        auc = curation.separability_auroc(data, seed=args.seed)
        if auc < args.separability:
            return _reject(curation.Reject("not_separable", f"oracle AUROC {auc:.4f}"))
    write_dataset(make_split(data, args.seed), args.out)
    print(data.meta.id)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odforge", description="Synthetic outlier-detection benchmark toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-suite", help="generate a suite of synthetic datasets")
    g.add_argument("--spec", help="suite spec JSON (default: 5 categories x 160 datasets)")
    g.add_argument("--seed", type=int, default=0, help="master seed when no --spec is given (default 0)")
    g.add_argument("--out", required=True)
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_generate_suite)

    s = sub.add_parser("score", help="run a detector on one dataset or a whole suite")
    s.add_argument("--method", required=True, choices=detectors.METHODS)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--variant", default="kth", choices=("kth", "mean"), help="kNN aggregation (knn only)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dataset", help="dataset directory; --out is the score file")
    s.add_argument("--suite", help="suite directory; --out is the scores root")
    s.add_argument("--label", help="method directory name in suite mode")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("evaluate", help="metric report, p-value matrix and per-dataset tables")
    e.add_argument("--suite", required=True)
    e.add_argument("--scores", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--rank-on", default="auroc", choices=("auroc", "auprc"))
    e.add_argument("--budget", type=int, default=10_000, help="Monte Carlo sign flips per p-value")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("repset", help="representative dataset subset")
    r.add_argument("--perf", required=True, help="per-dataset performance CSV")
    r.add_argument("--size", type=int, default=50)
    r.add_argument("--iters", type=int, default=1_000_000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_repset)

    t = sub.add_parser("permtest", help="one-sided paired sign-flip test of a against b")
    t.add_argument("--a", required=True)
    t.add_argument("--b", required=True)
    t.add_argument("--budget", type=int, default=10_000)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_permtest)

    sp = sub.add_parser("split", help="split a labelled CSV into train/test")
    sp.add_argument("input")
    sp.add_argument("--label-column", default="label")
    sp.add_argument("--id")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_split)

    a = sub.add_parser("anonymize", help="shuffle and strip a dataset")
    a.add_argument("dataset")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_anonymize)

    h = sub.add_parser("hash", help="feature hashes of a table, or a duplicate verdict for two")
    h.add_argument("a")
    h.add_argument("b", nargs="?")
    h.set_defaults(func=cmd_hash)

    f = sub.add_parser("filter", help="preliminary filter of a raw CSV table")
    f.add_argument("input")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_filter)

    o = sub.add_parser("ovr", help="one-vs-rest dataset from a multiclass CSV")
    o.add_argument("input")
    o.add_argument("--label-column", default="label")
    o.add_argument("--rate-min", type=float, default=0.05)
    o.add_argument("--rate-max", type=float, default=0.2)
    o.add_argument("--separability", type=float, default=None, metavar="AUROC",
                   help="also reject below this oracle AUROC (e.g. 0.6)")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_ovr)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OdForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECT


if __name__ == "__main__":
    sys.exit(main())
