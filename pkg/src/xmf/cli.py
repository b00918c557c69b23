"""Command-line entry point.

Subcommands: ``datagen``, ``preprocess-snps``, ``tune``, ``train``,
``ablate-attention``, ``ablate-modality``, and ``report``.  Every command is
reproducible from its config JSON and seed alone; tables are emitted both as
aligned text (stdout) and CSV files.

Exit codes: 0 success, 1 usage error, 2 data/config/parse error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, datagen, snp
from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    ParameterError,
    ParseError,
    ShapeError,
    TrainingDivergedError,
    UsageError,
)
from .fusion import AttentionMode, ModelConfig, config_hash, save_checkpoint
from .metrics import macro_f1, summarize
from .report import RunReport, format_table, load_report, save_report, write_csv
from .training import (
    MODALITY_SUBSETS,
    DEFAULT_GRID,
    GuardedDataset,
    ablation_matrix,
    attention_z_tests,
    evaluate,
    five_number_summary,
    grid_search,
    select_initialization,
    stratified_split,
    train_one,
    worker_count,
)

_USAGE_EXIT, _DATA_EXIT, _DIVERGED_EXIT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_json(path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None


def _model_config(args, **overrides) -> ModelConfig:
    data = _load_json(args.config, "config") if getattr(args, "config", None) else {}
    data.update(overrides)
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    return ModelConfig.from_dict(data)


def _write_tables(rows, columns, out_dir, stem) -> None:
    os.makedirs(out_dir, exist_ok=True)
    text = format_table(rows, columns)
    sys.stdout.write(text)
    with open(os.path.join(out_dir, f"{stem}.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    write_csv(rows, os.path.join(out_dir, f"{stem}.csv"), columns)


def _cell_report_rows(cells, z_tests=None):
    rows = []
    for cell in cells:
        row = {"mode": cell.mode.value, "modalities": "+".join(cell.modalities)}
        for key in ("accuracy", "precision", "recall", "f1"):
            row[f"{key}_mean"] = round(cell.metric_means[key], 6)
            row[f"{key}_std"] = round(cell.metric_stds[key], 6)
        if z_tests is not None:
            z, p = z_tests[cell.mode.value]
            row["z_vs_no_attention"] = round(z, 6) if np.isfinite(z) else "nan"
            row["p_vs_no_attention"] = f"{p:.3e}" if np.isfinite(p) else "nan"
        rows.append(row)
    return rows


def _report_from_cells(kind, base_config, cells, wall, extra=None) -> RunReport:
    report = RunReport(
        kind=kind,
        config_hash=config_hash(base_config),
        seeds=cells[0].seeds if cells else [],
        wall_time_s=wall,
        tool_version=__version__,
        extra=extra or {},
    )
    for cell in cells:
        label = cell.label()
        report.rows.append(
            {
                "label": label,
                "mode": cell.mode.value,
                "modalities": list(cell.modalities),
                **{f"{k}_mean": cell.metric_means[k] for k in cell.metric_means},
                **{f"{k}_std": cell.metric_stds[k] for k in cell.metric_stds},
                "f1_per_seed": cell.f1_scores,
            }
        )
        report.confusions[label] = [cm.counts.tolist() for cm in cell.confusions]
    return report


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def _cmd_datagen(args) -> int:
    spec_data = _load_json(args.spec, "generator spec") if args.spec else {}
    if args.seed is not None:
        spec_data["seed"] = args.seed
    spec = datagen.GenSpec.from_dict(spec_data)
    dataset = datagen.generate(spec)
    datagen.export_dataset(dataset, args.out)
    print(f"wrote {dataset.n} samples to {args.out}")
    return 0


def _cmd_preprocess_snps(args) -> int:
    table = snp.parse_variant_table(args.variants)
    thresholds = snp.FilterThresholds(args.hwe_p, args.min_gq, args.min_maf, args.max_missing)
    filtered, removals = snp.filter_variants(table, thresholds)
    if args.bed:
        filtered = snp.region_filter(filtered, snp.read_bed(args.bed))

    os.makedirs(args.out, exist_ok=True)
    snp.write_variant_table(filtered, os.path.join(args.out, "filtered.tsv"))
    write_csv(
        [{"site_id": r.site_id, "filter": r.filter_name, "value": repr(r.value)} for r in removals],
        os.path.join(args.out, "removal_log.csv"),
        ["site_id", "filter", "value"],
    )

    matrix = snp.genotype_matrix(filtered)
    selected = list(range(matrix.shape[1]))
    if args.labels:
        rows = _load_json(args.labels, "labels") if args.labels.endswith(".json") else None
        if rows is None:
            labels = np.loadtxt(args.labels, delimiter=",", skiprows=1, usecols=1, dtype=np.int64, ndmin=1)
        else:
            labels = np.asarray(rows, dtype=np.int64)
        k_out = args.k_out or matrix.shape[1]
        ranked = snp.forest_feature_select(matrix, labels, args.trees, min(k_out, matrix.shape[1]), seed=args.seed or 0)
        selected = [int(i) for i in ranked]
        matrix = matrix[:, selected]

    with open(os.path.join(args.out, "matrix.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_id," + ",".join(filtered.sites[j].site_id for j in selected) + "\n")
        for sid, row in zip(filtered.sample_ids, matrix):
            fh.write(sid + "," + ",".join(str(int(v)) for v in row) + "\n")

    summary = {
        "input_sites": table.n_sites,
        "surviving_sites": filtered.n_sites,
        "removed": len(removals),
        "selected_features": len(selected),
    }
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"kept {filtered.n_sites}/{table.n_sites} sites; wrote {args.out}")
    return 0


def _cmd_tune(args) -> int:
    t0 = time.perf_counter()
    dataset = GuardedDataset(datagen.import_dataset(args.data))
    base = _model_config(args)
    split = stratified_split(dataset.labels, seed=base.seed)
    grid = _load_json(args.grid, "grid") if args.grid else DEFAULT_GRID
    workers = worker_count(args.workers)

    best, trials = grid_search(base, grid, split, dataset, budget=args.budget, workers=workers)
    touched = dataset.reads_intersect(split.test_indices)
    if touched:
        raise DataError(f"test hygiene violation: {len(touched)} held-out indices were read during tuning")

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "best_config.json"), "w", encoding="utf-8") as fh:
        json.dump(best.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = [
        {
            "config_hash": config_hash(t.config)[:12],
            "learning_rate": t.config.learning_rate,
            "dropout": t.config.dropout_rates[0],
            "batch_size": t.config.batch_size,
            "epochs": t.config.epochs,
            "mean_val_accuracy": round(t.mean_val_accuracy, 6),
            "wall_time_s": round(t.wall_time, 3),
        }
        for t in trials
    ]
    _write_tables(rows, list(rows[0].keys()), args.out, "trials")
    report = RunReport(
        kind="tune",
        config_hash=config_hash(best),
        seeds=[base.seed],
        rows=rows,
        wall_time_s=time.perf_counter() - t0,
        tool_version=__version__,
        extra={"test_reads_before_eval": len(touched), "budget": args.budget},
    )
    save_report(report, os.path.join(args.out, "report.json"))
    print(f"best mean validation accuracy {max(t.mean_val_accuracy for t in trials):.4f}")
    return 0


def _cmd_train(args) -> int:
    t0 = time.perf_counter()
    dataset = datagen.import_dataset(args.data)
    config = _model_config(args)
    split = stratified_split(dataset.labels, seed=config.seed)

    if args.init_seeds > 1:
        best_seed, model, _ = select_initialization(config, dataset, split.train_indices, seeds=range(args.init_seeds))
    else:
        best_seed, model = config.seed, train_one(config, dataset, split.train_indices)

    cm = evaluate(model, dataset, split.test_indices)
    metrics = summarize(cm)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(model, os.path.join(args.out, "checkpoint"))
    report = RunReport(
        kind="train",
        config_hash=config_hash(config),
        seeds=[int(best_seed)],
        rows=[{"label": "test", **{k: round(v, 6) for k, v in metrics.items()}}],
        confusions={"test": [cm.counts.tolist()]},
        wall_time_s=time.perf_counter() - t0,
        tool_version=__version__,
    )
    save_report(report, os.path.join(args.out, "report.json"))
    _write_tables(report.rows, None, args.out, "metrics")
    print(f"test macro-F1 {macro_f1(cm):.4f} (seed {best_seed})")
    return 0


def _cmd_ablate_attention(args) -> int:
    t0 = time.perf_counter()
    dataset = datagen.import_dataset(args.data)
    base = _model_config(args)
    split = stratified_split(dataset.labels, seed=base.seed)
    seeds = list(range(args.seeds))
    cells = ablation_matrix(
        dataset,
        split,
        base,
        modes=list(AttentionMode),
        subsets=[base.modalities],
        seeds=seeds,
        retune=args.retune,
        budget=args.budget,
        workers=worker_count(args.workers),
    )
    z_tests = attention_z_tests(cells)
    rows = _cell_report_rows(cells, z_tests)
    _write_tables(rows, list(rows[0].keys()), args.out, "attention_ablation")
    report = _report_from_cells("ablate-attention", base, cells, time.perf_counter() - t0, extra={"z_tests": {k: list(v) for k, v in z_tests.items()}})
    save_report(report, os.path.join(args.out, "report.json"))
    return 0


def _cmd_ablate_modality(args) -> int:
    t0 = time.perf_counter()
    dataset = datagen.import_dataset(args.data)
    base = _model_config(args)
    split = stratified_split(dataset.labels, seed=base.seed)
    seeds = list(range(args.seeds))
    cells = []
    for subset in MODALITY_SUBSETS:
        # Single modalities run self-attention only; pairs and the triple use
        # the full self + cross scheme.
        mode = AttentionMode.SELF_ONLY if len(subset) == 1 else AttentionMode.SELF_AND_CROSS
        cells.extend(
            ablation_matrix(
                dataset,
                split,
                base,
                modes=[mode],
                subsets=[subset],
                seeds=seeds,
                retune=args.retune,
                budget=args.budget,
                workers=worker_count(args.workers),
            )
        )
    rows = _cell_report_rows(cells)
    _write_tables(rows, list(rows[0].keys()), args.out, "modality_ablation")
    report = _report_from_cells("ablate-modality", base, cells, time.perf_counter() - t0)
    save_report(report, os.path.join(args.out, "report.json"))
    return 0


def _cmd_report(args) -> int:
    report = load_report(args.report)
    print(f"kind: {report.kind}   config: {report.config_hash[:12]}   tool: {report.tool_version}")
    rows = []
    box_rows = []
    for row in report.rows:
        flat = {k: v for k, v in row.items() if not isinstance(v, (list, dict))}
        rows.append(flat)
        if isinstance(row.get("f1_per_seed"), list) and len(row["f1_per_seed"]) >= 2:
            box_rows.append({"label": row.get("label", "?"), **five_number_summary(row["f1_per_seed"])})
    sys.stdout.write(format_table(rows))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_csv(rows, os.path.join(args.out, "report_table.csv"))
        if box_rows:
            write_csv(box_rows, os.path.join(args.out, "box_summary.csv"))
            sys.stdout.write(format_table(box_rows))
    return 0


# ---------------------------------------------------------------------------
# Argument wiring.
# ---------------------------------------------------------------------------


def _add_common(p, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="model config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, default=None, help="parallel workers (env XMF_WORKERS)")


def build_parser() -> _Parser:
    parser = _Parser(prog="xmf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"xmf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic dataset directory")
    p.add_argument("--spec", help="GenSpec JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_datagen)

    p = sub.add_parser("preprocess-snps", help="filter a variant table and encode genotypes")
    p.add_argument("--variants", required=True, help="variant TSV")
    p.add_argument("--bed", help="gene regions (BED, 0-based half-open)")
    p.add_argument("--out", required=True)
    p.add_argument("--hwe-p", type=float, default=0.05)
    p.add_argument("--min-gq", type=float, default=20.0)
    p.add_argument("--min-maf", type=float, default=0.01)
    p.add_argument("--max-missing", type=float, default=0.05)
    p.add_argument("--labels", help="labels CSV (patient_id,label) for forest selection")
    p.add_argument("--trees", type=int, default=100, choices=[50, 100, 150, 200])
    p.add_argument("--k-out", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_preprocess_snps)

    p = sub.add_parser("tune", help="cross-validated hyperparameter grid search")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="grid JSON (field -> list of values)")
    p.add_argument("--budget", type=int, help="cap on the number of grid cells")
    _add_common(p)
    p.set_defaults(fn=_cmd_tune)

    p = sub.add_parser("train", help="train one model and write checkpoint + report")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init-seeds", type=int, default=1, help="try N seeds, keep the best training accuracy")
    _add_common(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("ablate-attention", help="compare the four attention modes")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--retune", action="store_true", help="grid-search each mode separately")
    p.add_argument("--budget", type=int)
    _add_common(p)
    p.set_defaults(fn=_cmd_ablate_attention)

    p = sub.add_parser("ablate-modality", help="compare the seven modality subsets")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--retune", action="store_true")
    p.add_argument("--budget", type=int)
    _add_common(p)
    p.set_defaults(fn=_cmd_ablate_modality)

    p = sub.add_parser("report", help="render a RunReport JSON as tables")
    p.add_argument("--report", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_EXIT
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _DIVERGED_EXIT
    except (DataError, ParseError, ConfigError, DegenerateInputError, ParameterError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
