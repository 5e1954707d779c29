"""Command-line front end.

Subcommands: pretrain, adapt, ablate, mi-curve, oracle-check.  Exit codes:
0 success, 1 check or verdict failure, 2 usage or configuration error.
All outputs are deterministic functions of (config, seed).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig, load_config, load_dataset
from .data import DataIOError, FormatError, make_folds
from .hsic import KernelSpec
from .models import CheckpointMismatchError, load_checkpoint, save_checkpoint
from .oracle import TableValidationError, JointTable, check_redundancy_equivalence, run_all_checks
from .training import (LossWeights, MetricsLog, TrainPhase, TrainState,
                       run_phase)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _fail(msg: str, code: int = EXIT_USAGE) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _feature_dims(cfg: RunConfig, source_ds, target_ds) -> dict[str, int]:
    dims = {source_ds.name: source_ds.feature_dim}
    if target_ds is not None:
        dims[target_ds.name] = target_ds.feature_dim
    return dims


def _build_state(cfg: RunConfig, dims: dict[str, int], num_classes: int) -> TrainState:
    return TrainState.build(
        dims, num_classes, len(cfg.views), cfg.seed,
        adapter_width=cfg.adapter_width, hidden=cfg.hidden,
        proj_dim=cfg.proj_dim, pooling=cfg.pooling,
        with_view_critics=cfg.weights.view_leak_weight > 0)


def _kernel(cfg: RunConfig) -> KernelSpec:
    return KernelSpec(cfg.kernel, cfg.bandwidth)


def _report_fingerprint(results: dict) -> str:
    return hashlib.sha256(
        json.dumps(results, sort_keys=True).encode()).hexdigest()[:16]


def _write_report(path: str, report: dict):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def _final_accuracy(log: MetricsLog) -> float:
    test_rows = [r for r in log.rows if r["split"] == "test"]
    return float(test_rows[-1]["accuracy"]) if test_rows else float("nan")


def cmd_pretrain(cfg: RunConfig) -> dict:
    source = load_dataset(cfg.source)
    target = load_dataset(cfg.target) if cfg.target else None
    if target is not None and target.num_classes != source.num_classes:
        raise ConfigError("source and target class counts differ")
    out_dir = os.path.join(cfg.output_dir, "pretrain")
    os.makedirs(out_dir, exist_ok=True)
    plan = make_folds(source, k=cfg.folds, seed=cfg.seed)
    fingerprint = cfg.fingerprint()
    accs, metric_paths, ckpt_paths = [], [], []
    for fold in range(cfg.folds):
        state = _build_state(cfg, _feature_dims(cfg, source, target),
                             source.num_classes)
        state, log = run_phase(source, plan, fold,
                               TrainPhase("pretrain", epochs=cfg.epochs),
                               cfg.weights, cfg.seed, state,
                               view_specs=list(cfg.views),
                               dataset_name=source.name, lr=cfg.lr,
                               batch_size=cfg.batch_size, kernel=_kernel(cfg))
        metrics_path = os.path.join(out_dir, f"metrics_fold{fold}.csv")
        log.save(metrics_path)
        ckpt_path = os.path.join(out_dir, f"checkpoint_fold{fold}.npz")
        save_checkpoint(ckpt_path, state.teacher, state.student, fingerprint,
                        {"fold": fold, "phase": "pretrain"})
        accs.append(_final_accuracy(log))
        metric_paths.append(metrics_path)
        ckpt_paths.append(ckpt_path)
    mean, std = _mean_std(accs)
    results = {"per_fold_accuracy": accs, "mean_accuracy": mean,
               "std_accuracy": std}
    report = {
        "command": "pretrain",
        "config": cfg.as_dict(),
        "config_fingerprint": fingerprint,
        **results,
        "metrics_paths": metric_paths,
        "checkpoint_paths": ckpt_paths,
        "report_fingerprint": _report_fingerprint(results),
    }
    _write_report(os.path.join(out_dir, "report.json"), report)
    return report


def cmd_adapt(cfg: RunConfig, checkpoint_dir: str, tag: str | None = None) -> dict:
    if cfg.target is None:
        raise ConfigError("adapt requires a [datasets.target] table")
    source = load_dataset(cfg.source)
    target = load_dataset(cfg.target)
    if target.num_classes != source.num_classes:
        raise ConfigError("source and target class counts differ")
    label = tag or cfg.ablation
    out_dir = os.path.join(cfg.output_dir, f"adapt_{label}")
    os.makedirs(out_dir, exist_ok=True)
    plan = make_folds(target, k=cfg.folds, seed=cfg.seed + 1)
    fingerprint = cfg.fingerprint()
    accs, metric_paths, ssr_paths = [], [], []
    teacher_checksums = []
    for fold in range(cfg.folds):
        state = _build_state(cfg, _feature_dims(cfg, source, target),
                             source.num_classes)
        ckpt_path = os.path.join(checkpoint_dir, f"checkpoint_fold{fold}.npz")
        if not os.path.isfile(ckpt_path):
            raise DataIOError(f"missing checkpoint: {ckpt_path}")
        load_checkpoint(ckpt_path, state.teacher, state.student, fingerprint)
        phase = TrainPhase("adapt", epochs=cfg.adapt_epochs,
                           ablation=cfg.ablation, ssr_refresh=cfg.ssr_refresh)
        state, log = run_phase(target, plan, fold, phase, cfg.weights,
                               cfg.seed, state, view_specs=list(cfg.views),
                               dataset_name=target.name, lr=cfg.lr,
                               batch_size=cfg.batch_size, kernel=_kernel(cfg))
        metrics_path = os.path.join(out_dir, f"metrics_fold{fold}.csv")
        log.save(metrics_path)
        ssr_path = os.path.join(out_dir, f"ssr_fold{fold}.json")
        _dump_ssr(target, plan, fold, state, cfg, ssr_path)
        accs.append(_final_accuracy(log))
        metric_paths.append(metrics_path)
        ssr_paths.append(ssr_path)
        teacher_checksums.append(state.teacher.checksum())
    mean, std = _mean_std(accs)
    results = {"per_fold_accuracy": accs, "mean_accuracy": mean,
               "std_accuracy": std, "ablation": cfg.ablation}
    report = {
        "command": "adapt",
        "config": cfg.as_dict(),
        "config_fingerprint": fingerprint,
        **results,
        "metrics_paths": metric_paths,
        "ssr_paths": ssr_paths,
        "teacher_checksums": teacher_checksums,
        "report_fingerprint": _report_fingerprint(results),
    }
    _write_report(os.path.join(out_dir, "report.json"), report)
    return report


def _dump_ssr(target, plan, fold, state, cfg, path):
    from .ssr import compute_ssr
    from .training import teacher_confidences

    if cfg.ablation == "no-ssr":
        blob = {"ablated": True}
        with open(path, "w", encoding="ascii") as fh:
            json.dump(blob, fh, indent=1)
            fh.write("\n")
        return
    conf = teacher_confidences(target, plan.train_indices(fold), state,
                               list(cfg.views), target.name)
    ssr = compute_ssr(conf, target.labels()[plan.train_indices(fold)],
                      target.num_classes)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(ssr.to_json())
        fh.write("\n")


def cmd_ablate(cfg: RunConfig) -> dict:
    """Shared pretrain, then one adaptation per ablation flag."""
    from dataclasses import replace

    pre_report = cmd_pretrain(cfg)
    checkpoint_dir = os.path.join(cfg.output_dir, "pretrain")
    rows = []
    for flag in ("none", "no-ib", "no-hsic", "no-ssr", "full-finetune"):
        sub = replace(cfg, ablation=flag)
        rep = cmd_adapt(sub, checkpoint_dir, tag=flag)
        rows.append({"ablation": flag,
                     "mean_accuracy": rep["mean_accuracy"],
                     "std_accuracy": rep["std_accuracy"],
                     "per_fold_accuracy": rep["per_fold_accuracy"]})
    table_path = os.path.join(cfg.output_dir, "ablation_table.csv")
    with open(table_path, "w", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["ablation", "mean_accuracy", "std_accuracy"])
        for row in rows:
            writer.writerow([row["ablation"], repr(row["mean_accuracy"]),
                             repr(row["std_accuracy"])])
    report = {"command": "ablate", "config": cfg.as_dict(),
              "config_fingerprint": cfg.fingerprint(),
              "pretrain": pre_report, "rows": rows,
              "table_path": table_path}
    _write_report(os.path.join(cfg.output_dir, "ablation_report.json"), report)
    return report


MI_COLUMNS = ("I_zvs_x_proxy", "I_zvs_y", "I_zvr_y")


def cmd_mi_curve(log_paths: list[str]) -> str:
    """Merge metrics CSVs into one epoch-indexed information-dynamics CSV."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("epoch",) + MI_COLUMNS)
    for path in log_paths:
        if not os.path.isfile(path):
            raise DataIOError(f"missing metrics log: {path}")
        with open(path, "r", encoding="ascii") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in ("epoch",) + MI_COLUMNS if c not in header]
            if missing:
                raise FormatError(f"{path} lacks column {missing[0]}")
            for row in reader:
                if all(row[c] != "" for c in MI_COLUMNS):
                    writer.writerow([row["epoch"]] + [row[c] for c in MI_COLUMNS])
    return out.getvalue()


def cmd_oracle_check(table_path: str | None = None) -> tuple[dict, int]:
    reports = run_all_checks()
    if table_path is not None:
        with open(table_path, "r", encoding="ascii") as fh:
            blob = json.load(fh)
        table = JointTable(blob["axes"], np.asarray(blob["probs"]))
        reports.append(check_redundancy_equivalence(table))
    payload = {"checks": reports,
               "all_passed": all(r["passed"] for r in reports)}
    code = EXIT_OK if payload["all_passed"] else EXIT_CHECK_FAILED
    return payload, code


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--adapt-epochs", type=int, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--ablation", default=None)


def _overrides(args) -> dict:
    return {"seed": args.seed, "output_dir": args.output_dir,
            "epochs": args.epochs, "adapt_epochs": args.adapt_epochs,
            "folds": args.folds, "ablation": args.ablation}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dibod",
        description="multi-view information-bottleneck distillation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_pre = sub.add_parser("pretrain", help="train teacher and students on the source")
    _add_config_args(p_pre)

    p_ada = sub.add_parser("adapt", help="frozen-teacher adaptation on the target")
    _add_config_args(p_ada)
    p_ada.add_argument("--checkpoint-dir", required=True,
                       help="directory with checkpoint_fold<k>.npz files")

    p_abl = sub.add_parser("ablate", help="run every ablation with shared seeds")
    _add_config_args(p_abl)

    p_mi = sub.add_parser("mi-curve", help="extract information-dynamics columns")
    p_mi.add_argument("--log", action="append", required=True, dest="logs")
    p_mi.add_argument("--out", default=None, help="output CSV (default stdout)")

    p_or = sub.add_parser("oracle-check", help="run the exact-probability checks")
    p_or.add_argument("--table", default=None,
                      help="optional JSON joint table to validate")

    args = parser.parse_args(argv)
    try:
        if args.command == "pretrain":
            cfg = load_config(args.config, _overrides(args))
            report = cmd_pretrain(cfg)
            print(json.dumps({"mean_accuracy": report["mean_accuracy"],
                              "std_accuracy": report["std_accuracy"],
                              "report_fingerprint": report["report_fingerprint"]},
                             sort_keys=True))
            return EXIT_OK
        if args.command == "adapt":
            cfg = load_config(args.config, _overrides(args))
            report = cmd_adapt(cfg, args.checkpoint_dir)
            print(json.dumps({"mean_accuracy": report["mean_accuracy"],
                              "std_accuracy": report["std_accuracy"],
                              "report_fingerprint": report["report_fingerprint"]},
                             sort_keys=True))
            return EXIT_OK
        if args.command == "ablate":
            cfg = load_config(args.config, _overrides(args))
            report = cmd_ablate(cfg)
            for row in report["rows"]:
                print(f"{row['ablation']},{row['mean_accuracy']},{row['std_accuracy']}")
            return EXIT_OK
        if args.command == "mi-curve":
            text = cmd_mi_curve(args.logs)
            if args.out:
                with open(args.out, "w", encoding="ascii") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        if args.command == "oracle-check":
            payload, code = cmd_oracle_check(args.table)
            print(json.dumps(payload, indent=1, sort_keys=True))
            return code
    except ConfigError as err:
        return _fail(str(err))
    except (DataIOError, FormatError) as err:
        return _fail(str(err))
    except TableValidationError as err:
        return _fail(f"table validation: {err}")
    except CheckpointMismatchError as err:
        return _fail(str(err))
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
