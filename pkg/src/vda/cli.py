"""Command-line pipeline: validate | synth | metrics | features | fit | decompose | report.

Stages communicate through files in the --out directory so each one can be
rerun independently; reruns on unchanged inputs are byte-identical. Exit
codes: 0 success, 1 usage/schema, 2 data, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import corpus, features, metrics, model, report, synth
from .errors import (
    AlignmentError,
    DegenerateInputError,
    DependencyError,
    FormatError,
    MetricError,
    PreconditionError,
    SchemaError,
    StratificationError,
    UnderdeterminedError,
    UnsupportedFormatError,
    VdaError,
)

log = logging.getLogger("vda")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_MAX_LAG_SECONDS = 0.25

METRICS_COLUMNS = (
    "utterance_id", "G", "C", "D",
    "stoi", "snr_seg", "fw_snr_seg", "llr", "wss",
    "csii_high", "csii_mid", "csii_low", "ncm",
    "pesq", "csig", "cbak", "covl",
)

_USAGE_ERRORS = (SchemaError, ValueError)
_DATA_ERRORS = (
    FormatError, UnsupportedFormatError, DependencyError,
    StratificationError, FileNotFoundError,
)
_NUMERIC_ERRORS = (
    DegenerateInputError, PreconditionError, UnderdeterminedError,
    AlignmentError, MetricError,
)


def _configure_logging() -> None:
    level = os.environ.get("VDA_LOG", "WARNING").upper()
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    try:
        log.setLevel(level)
    except ValueError:
        log.setLevel(logging.WARNING)


def _fmt(value: float | None) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return repr(float(value))


def _max_lag(rate: int) -> int:
    return int(round(DEFAULT_MAX_LAG_SECONDS * rate))


def _load_pair(entry: corpus.ManifestEntry) -> corpus.AlignedPair:
    clean = corpus.resample(corpus.load_wav(entry.clean_path), corpus.CANONICAL_RATE)
    degraded = corpus.resample(corpus.load_wav(entry.degraded_path), corpus.CANONICAL_RATE)
    return corpus.align(clean, degraded, _max_lag(corpus.CANONICAL_RATE))


def _metric_row(args: tuple) -> tuple[dict, str | None]:
    entry, selected = args
    base = {
        "utterance_id": entry.utterance_id,
        "G": entry.label.g,
        "C": entry.label.c,
        "D": entry.label.d,
    }
    try:
        pair = _load_pair(entry)
        rep = metrics.evaluate_pair(pair, entry.external_pesq, selected)
    except Exception as exc:
        return base, f"{entry.utterance_id} G{entry.label.g}C{entry.label.c}D{entry.label.d}: {exc}"
    high, mid, low = rep.csii
    base.update(
        {
            "stoi": rep.stoi,
            "snr_seg": rep.snr_seg,
            "fw_snr_seg": rep.fw_snr_seg,
            "llr": rep.llr,
            "wss": rep.wss,
            "csii_high": high,
            "csii_mid": mid,
            "csii_low": low,
            "ncm": rep.ncm,
            "pesq": rep.pesq,
        }
    )
    if rep.composite is not None:
        base["csig"], base["cbak"], base["covl"] = rep.composite
    return base, None


def _feature_row(entry: corpus.ManifestEntry) -> tuple[dict, dict, dict, str | None]:
    base = {
        "utterance_id": entry.utterance_id,
        "G": entry.label.g,
        "C": entry.label.c,
        "D": entry.label.d,
    }
    try:
        pair = _load_pair(entry)
        fv_clean = features.extract_features(pair.clean)
        fv_degraded = features.extract_features(pair.degraded)
        err = features.feature_error(fv_clean, fv_degraded)
    except Exception as exc:
        msg = f"{entry.utterance_id} G{entry.label.g}C{entry.label.c}D{entry.label.d}: {exc}"
        return base, base, base, msg
    err_row = dict(base, **{f"e{i}": err.e[i] for i in range(features.N_FEATURES)})
    clean_row = dict(base, **{f"x{i}": fv_clean.x[i] for i in range(features.N_FEATURES)})
    deg_row = dict(base, **{f"x{i}": fv_degraded.x[i] for i in range(features.N_FEATURES)})
    return err_row, clean_row, deg_row, None


def _sorted_entries(manifest: corpus.CorpusManifest) -> list[corpus.ManifestEntry]:
    return sorted(
        manifest.entries,
        key=lambda e: (e.utterance_id, e.label.g, e.label.c, e.label.d),
    )


def _map_jobs(func, items, jobs: int):
    if jobs <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def _write_csv(path: Path, header: tuple[str, ...], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt_cell(row.get(col)) for col in header])


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return _fmt(float(value))


def cmd_validate(args) -> int:
    manifest = corpus.parse_manifest(args.manifest)
    rep = corpus.validate_manifest(manifest)
    for path in rep.missing:
        print(f"missing: {path}")
    for utt, label in rep.duplicates:
        print(f"duplicate: {utt} (G={label.g}, C={label.c}, D={label.d})")
    for cell in corpus.ALL_CELLS:
        print(f"cell G={cell.g} C={cell.c} D={cell.d}: {rep.cell_counts.get(cell, 0)} utterance(s)")
    print("ok" if rep.ok else "invalid")
    return EXIT_OK if rep.ok else EXIT_DATA


def cmd_synth(args) -> int:
    manifest_path = synth.generate_corpus(
        args.out, n_utterances=args.utterances, seed=args.seed, duration=args.duration
    )
    print(manifest_path)
    return EXIT_OK


def cmd_metrics(args) -> int:
    manifest = corpus.parse_manifest(args.manifest)
    selected = tuple(s.strip() for s in args.metrics.split(",") if s.strip())
    if not selected:
        raise SchemaError("--metrics selected an empty metric set")
    unknown = set(selected) - set(metrics.METRIC_NAMES)
    if unknown:
        raise SchemaError(f"unknown metric(s): {sorted(unknown)}")
    entries = _sorted_entries(manifest)
    results = _map_jobs(_metric_row, [(e, selected) for e in entries], args.jobs)
    failures = [msg for _, msg in results if msg]
    for msg in failures:
        log.error("metrics failed for %s", msg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "metrics.csv", METRICS_COLUMNS, [row for row, _ in results])
    print(out_dir / "metrics.csv")
    return EXIT_NUMERIC if failures else EXIT_OK


def cmd_features(args) -> int:
    manifest = corpus.parse_manifest(args.manifest)
    entries = _sorted_entries(manifest)
    results = _map_jobs(_feature_row, entries, args.jobs)
    failures = [msg for *_rows, msg in results if msg]
    for msg in failures:
        log.error("features failed for %s", msg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    err_header = ("utterance_id", "G", "C", "D") + tuple(f"e{i}" for i in range(features.N_FEATURES))
    x_header = ("utterance_id", "G", "C", "D") + tuple(f"x{i}" for i in range(features.N_FEATURES))
    _write_csv(out_dir / "errors.csv", err_header, [r[0] for r in results])
    _write_csv(out_dir / "features_clean.csv", x_header, [r[1] for r in results])
    _write_csv(out_dir / "features_degraded.csv", x_header, [r[2] for r in results])
    print(out_dir / "errors.csv")
    return EXIT_NUMERIC if failures else EXIT_OK


def _read_csv_rows(path: Path) -> list[dict]:
    if not path.exists():
        raise DependencyError(f"required upstream artifact missing: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _observation_rows(out_dir: Path, outcome: str) -> list[model.ObservationRow]:
    metric_rows = _read_csv_rows(out_dir / "metrics.csv")
    error_rows = _read_csv_rows(out_dir / "errors.csv")
    errors_by_key = {
        (r["utterance_id"], r["G"], r["C"], r["D"]): r for r in error_rows
    }
    rows: list[model.ObservationRow] = []
    for mrow in metric_rows:
        key = (mrow["utterance_id"], mrow["G"], mrow["C"], mrow["D"])
        erow = errors_by_key.get(key)
        if erow is None:
            log.warning("no feature errors for %s; row skipped", key)
            continue
        if not mrow.get("stoi"):
            log.warning("no stoi value for %s; row skipped", key)
            continue
        e = np.array([float(erow[f"e{i}"]) for i in range(features.N_FEATURES)])
        pesq = float(mrow["pesq"]) if mrow.get("pesq") else None
        rows.append(
            model.ObservationRow(
                error=features.ErrorVector(e),
                label=corpus.ConditionLabel(int(mrow["G"]), int(mrow["C"]), int(mrow["D"])),
                y_stoi=float(mrow["stoi"]),
                y_pesq=pesq,
            )
        )
    if not rows:
        raise DependencyError("no joinable rows between metrics.csv and errors.csv")
    if outcome == "pesq" and all(r.y_pesq is None for r in rows):
        raise DependencyError("outcome=pesq requires pesq values in metrics.csv")
    return rows


def cmd_fit(args) -> int:
    out_dir = Path(args.out)
    rows = _observation_rows(out_dir, args.outcome)
    design = model.build_design_matrix(rows)
    if args.outcome == "pesq":
        y = np.array([r.y_pesq for r in rows], dtype=np.float64)
    else:
        y = np.array([r.y_stoi for r in rows], dtype=np.float64)
    fit = model.fit_ols(design, y)
    (out_dir / f"fit_{args.outcome}.json").write_text(
        report.render_regression_table(fit, "json"), encoding="utf-8"
    )
    (out_dir / f"regression_{args.outcome}.csv").write_text(
        report.render_regression_table(fit, "csv"), encoding="utf-8"
    )
    (out_dir / f"regression_{args.outcome}.md").write_text(
        report.render_regression_table(fit, "markdown"), encoding="utf-8"
    )
    print(out_dir / f"fit_{args.outcome}.json")
    return EXIT_OK


def cmd_decompose(args) -> int:
    out_dir = Path(args.out)
    rows = _observation_rows(out_dir, args.outcome)
    table = model.decomposition_table(rows, outcome=args.outcome, reference=args.reference)
    payload = {
        "outcome": args.outcome,
        "reference": args.reference,
        "rows": report.decomposition_records(table),
    }
    stem = out_dir / f"decomposition_{args.outcome}"
    stem.with_suffix(".json").write_text(
        json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8"
    )
    stem.with_suffix(".csv").write_text(
        report.render_decomposition_table(table, "csv"), encoding="utf-8"
    )
    stem.with_suffix(".md").write_text(
        report.render_decomposition_table(table, "markdown"), encoding="utf-8"
    )
    print(stem.with_suffix(".csv"))
    return EXIT_OK


def _metric_csv_aggregates(path: Path) -> dict:
    rows = []
    for raw in _read_csv_rows(path):
        row = {"G": raw["G"], "C": raw["C"], "D": raw["D"]}
        for col in report.COMPARISON_METRICS:
            text = raw.get(col) or ""
            row[col] = float(text) if text else None
        rows.append(row)
    return report.aggregate_metric_rows(rows)


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    baseline = _metric_csv_aggregates(out_dir / "metrics.csv")
    variants = {}
    for path in sorted(out_dir.glob("metrics_*.csv")):
        name = path.stem[len("metrics_"):]
        variants[name] = _metric_csv_aggregates(path)
    for fmt, suffix in (("csv", ".csv"), ("json", ".json"), ("markdown", ".md")):
        text = report.render_comparison_table(baseline, variants, fmt)
        (out_dir / f"comparison{suffix}").write_text(text, encoding="utf-8")
    print(out_dir / "comparison.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vda", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--utterances", type=int, default=16)
    p.add_argument("--duration", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="score every manifest pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=",".join(metrics.METRIC_NAMES))
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("features", help="extract feature errors per pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fit", help="fit the interaction regression")
    p.add_argument("--out", required=True)
    p.add_argument("--outcome", choices=model.OUTCOMES, default="stoi")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("decompose", help="three-fold decomposition per interaction")
    p.add_argument("--out", required=True)
    p.add_argument("--outcome", choices=model.OUTCOMES, default="stoi")
    p.add_argument("--reference", choices=("stratum", "zero-error"), default="stratum")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("report", help="baseline vs variant comparison tables")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VdaError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
