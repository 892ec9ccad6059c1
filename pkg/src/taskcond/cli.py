"""Command-line entry point.

Verbs: ``train`` (one task's models), ``run-protocol`` (full sequential
benchmark), ``eval`` (saved models against the test sets),
``export-embeddings`` (feature-space dump for external plotting), and
``merge`` (distill two experts into one and average their in-domain
models). Any flag can also come from a JSON config file (``--config``);
explicit flags win. The data directory falls back to the
``TASKCOND_DATA_DIR`` environment variable.

On failure the process exits nonzero after printing a single
machine-readable JSON error line to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .ensemble import EnsembleState, membership_matrix, predict_batch
from .indomain import embed, write_embeddings
from .merge import DistillConfig, distill_merge, merge_in_domain
from .metrics import classification_accuracy, membership_report
from .mnist import build_split_mnist, load_mnist
from .protocol import (
    DYNAMIC_METHODS,
    ENSEMBLE_METHODS,
    METHODS,
    ProtocolConfig,
    emit_report,
    run_protocol,
    stage_rng,
    _stage_models,
)
from .serialize import load_model, save_model

ENV_DATA_DIR = "TASKCOND_DATA_DIR"


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file supplying any of the flags below")
    p.add_argument("--data-dir", help=f"MNIST directory (default: ${ENV_DATA_DIR} or data/mnist)")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--runs", type=int)
    p.add_argument("--n-tasks", type=int)
    p.add_argument("--fe-epochs", type=int)
    p.add_argument("--fe-batch-pairs", type=int)
    p.add_argument("--fe-tau", type=float)
    p.add_argument("--fe-lr", type=float)
    p.add_argument("--fe-steps-per-epoch", type=int)
    p.add_argument("--embedding-dim", type=int)
    p.add_argument("--lof-k", type=int)
    p.add_argument("--lof-subsample", type=int)
    p.add_argument("--mahalanobis-eps", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--expert-epochs", type=int)
    p.add_argument("--expert-batch-size", type=int)
    p.add_argument("--expert-lr", type=float)


def _build_config(args) -> ProtocolConfig:
    values = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            values.update(json.load(fh))
    field_names = {f.name for f in dataclasses.fields(ProtocolConfig)}
    for name in field_names:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if "data_dir" not in values or values["data_dir"] is None:
        values["data_dir"] = os.environ.get(ENV_DATA_DIR, "data/mnist")
    return ProtocolConfig.from_dict(values)


def _load_tasks(cfg):
    return build_split_mnist(*load_mnist(cfg.data_dir), n_tasks=cfg.n_tasks)


def _cmd_run_protocol(args):
    cfg = _build_config(args)
    report = run_protocol(
        cfg,
        on_stage=lambda run, t: print(f"run {run}: training stage {t}", flush=True),
    )
    files = emit_report(report, args.out)
    print(f"average accuracy: {report.avg_accuracy_mean:.2f}% "
          f"(std {report.avg_accuracy_std:.2f} over {cfg.runs} runs)")
    print(f"backward transfer: {report.bwt_mean:+.2f}%")
    if report.membership_accuracy_per_run:
        mean_m = float(np.mean(report.membership_accuracy_per_run))
        print(f"membership accuracy: {mean_m:.2f}%")
    print(f"report files in {args.out}: {', '.join(files)}")
    return 0


def _cmd_train(args):
    cfg = _build_config(args)
    tasks = _load_tasks(cfg)
    if not (0 <= args.task < cfg.n_tasks):
        raise ValueError(f"--task must be in [0, {cfg.n_tasks - 1}]")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    expert, indom = _stage_models(cfg.method, tasks, args.task, cfg, run=0)
    expert_path = out / f"expert_task{args.task}.tcn"
    save_model(expert_path, expert)
    print(f"saved {expert_path}")
    if indom is not None:
        indom_path = out / f"indomain_task{args.task}.tcn"
        save_model(indom_path, indom)
        print(f"saved {indom_path}")
    return 0


def _load_ensemble(models_dir, cfg):
    models_dir = Path(models_dir)
    experts, indoms = [], []
    for t in range(cfg.n_tasks):
        expert_path = models_dir / f"expert_task{t}.tcn"
        if not expert_path.exists():
            break
        experts.append(load_model(expert_path, expect_kind="expert"))
        indom_path = models_dir / f"indomain_task{t}.tcn"
        indoms.append(load_model(indom_path) if indom_path.exists() else None)
    if not experts:
        raise FileNotFoundError(f"no expert_task*.tcn files in {models_dir}")
    mode = "dynamic" if cfg.method in DYNAMIC_METHODS else (
        "manual" if cfg.method == "manual" else "equal")
    return EnsembleState(experts=experts, in_domain=indoms, fusion_mode=mode, beta=cfg.beta)


def _cmd_eval(args):
    cfg = _build_config(args)
    if cfg.method not in ENSEMBLE_METHODS:
        raise ValueError(f"eval fuses saved per-task models; method must be one of "
                         f"{ENSEMBLE_METHODS}")
    tasks = _load_tasks(cfg)
    ensemble = _load_ensemble(args.models, cfg)
    T = ensemble.n_tasks
    accs, rows, true_task = [], [], []
    for j in range(T):
        X, y = tasks[j].test.x, tasks[j].test.class_id
        manual = j if cfg.method == "manual" else None
        probs, M, _ = predict_batch(ensemble, X, manual_task_id=manual)
        accs.append(classification_accuracy(probs, y))
        rows.append(M)
        true_task.append(np.full(len(y), j))
        print(f"task {j}: accuracy {accs[-1]:.2f}%")
    print(f"average accuracy: {float(np.mean(accs)):.2f}%")
    if cfg.method in DYNAMIC_METHODS:
        rep = membership_report(np.concatenate(rows), np.concatenate(true_task), T)
        print(f"membership accuracy: {rep.accuracy:.2f}%")
    return 0


def _cmd_export_embeddings(args):
    cfg = _build_config(args)
    tasks = _load_tasks(cfg)
    model = load_model(args.model)
    if not hasattr(model, "fe"):
        raise ValueError("export needs an in-domain model file (it carries the extractor)")
    split = args.split
    sample_ids, task_ids, classes, emb = [], [], [], []
    for task in tasks:
        ss = task.train if split == "train" else task.test
        emb.append(embed(model.fe, model.center, ss.x))
        sample_ids.append(ss.source_index)
        task_ids.append(np.full(ss.n, task.task_id))
        classes.append(ss.class_id)
    write_embeddings(
        args.out,
        np.concatenate(sample_ids),
        np.concatenate(task_ids),
        np.concatenate(classes),
        np.concatenate(emb),
    )
    print(f"wrote embeddings for {sum(len(s) for s in sample_ids)} samples to {args.out}")
    return 0


def _cmd_merge(args):
    expert_paths = args.experts.split(",")
    indom_paths = args.in_domain.split(",")
    if len(expert_paths) != 2 or len(indom_paths) != 2:
        raise ValueError("--experts and --in-domain each take two comma-separated paths")
    teacher_a = load_model(expert_paths[0], expect_kind="expert")
    teacher_b = load_model(expert_paths[1], expect_kind="expert")
    dcfg = DistillConfig(samples_per_teacher=args.samples, epochs=args.epochs)
    student = distill_merge(teacher_a, teacher_b, dcfg, stage_rng(args.seed, 0, 0, 2))
    merged_dm = merge_in_domain(load_model(indom_paths[0]), load_model(indom_paths[1]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "merged_expert.tcn", student)
    save_model(out / "merged_indomain.tcn", merged_dm)
    print(f"saved {out / 'merged_expert.tcn'} and {out / 'merged_indomain.tcn'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="taskcond",
        description="Task-conditioned expert ensembles with outlier-score gating",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-protocol", help="run the sequential benchmark")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="directory for report files")
    p.set_defaults(fn=_cmd_run_protocol)

    p = sub.add_parser("train", help="train one task's expert (and in-domain model)")
    _add_config_flags(p)
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--out", required=True, help="directory for model files")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate saved per-task models")
    _add_config_flags(p)
    p.add_argument("--models", required=True, help="directory holding expert_task*.tcn")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("export-embeddings", help="dump embeddings for external plotting")
    _add_config_flags(p)
    p.add_argument("--model", required=True, help="in-domain model file supplying the extractor")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", required=True, help="output delimited text file")
    p.set_defaults(fn=_cmd_export_embeddings)

    p = sub.add_parser("merge", help="merge two tasks' experts and in-domain models")
    p.add_argument("--experts", required=True, help="two expert files, comma separated")
    p.add_argument("--in-domain", dest="in_domain", required=True,
                   help="two in-domain files, comma separated")
    p.add_argument("--samples", type=int, default=10_000, help="synthetic samples per teacher")
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_merge)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # structured failure surface for scripts
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
