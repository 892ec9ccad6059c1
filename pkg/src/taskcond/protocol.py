"""Sequential five-task protocol: train per task, evaluate on everything seen.

One protocol run walks the task sequence once. At stage t the configured
method trains whatever it needs for task t (an expert, and for dynamic
fusion an in-domain model), then is evaluated on the test sets of all tasks
seen so far, filling row t of the accuracy matrix. Models trained at
earlier stages are never revisited except by the fine-tuning baseline,
whose whole point is that it mutates a single shared expert.

Every random draw derives from (seed, run, task, role), so skipping a
component (for example, the in-domain models under equal fusion) does not
shift the randomness of the others: expert weights are identical across the
ensemble fusion modes at equal seeds.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensemble import EnsembleState, membership_matrix, predict_batch
from .experts import ExpertConfig, expert_predict_batch, fine_tune, full_retrain, train_expert
from .indomain import fit_in_domain
from .losses import LossConfig
from .metrics import (
    average_accuracy,
    backward_transfer,
    classification_accuracy,
    membership_report,
)
from .mnist import build_split_mnist, load_mnist

METHODS = (
    "fe_dm_lof",
    "fe_dm_mahalanobis",
    "equal",
    "manual",
    "fine_tuned",
    "full_retrain",
    "pretrained_fe_dm",
)
ENSEMBLE_METHODS = ("fe_dm_lof", "fe_dm_mahalanobis", "equal", "manual", "pretrained_fe_dm")
DYNAMIC_METHODS = ("fe_dm_lof", "fe_dm_mahalanobis", "pretrained_fe_dm")

_ROLE_EXPERT = 0
_ROLE_FE = 1


@dataclass
class ProtocolConfig:
    """Run-level configuration; every field can come from a config file."""

    data_dir: str = "data/mnist"
    seed: int = 0
    method: str = "fe_dm_lof"
    runs: int = 3
    n_tasks: int = 5

    # feature-extractor training; lr must stay small enough that the
    # center-loss feedback does not diverge over long runs
    fe_epochs: int = 100
    fe_batch_pairs: int = 15
    fe_tau: float = 0.25
    fe_lr: float = 0.002
    fe_steps_per_epoch: int | None = None
    fe_hidden_dims: tuple = (512, 256)
    embedding_dim: int = 128

    # distance measure
    lof_k: int = 20
    lof_subsample: int | None = None
    mahalanobis_eps: float = 1e-2
    beta: float = 1.0

    # expert training
    expert_hidden_dims: tuple = (400, 400)
    expert_epochs: int = 4
    expert_batch_size: int = 128
    expert_optimizer: str = "adam"
    expert_lr: float = 1e-3

    histogram_bins: int = 50

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.runs <= 0 or self.n_tasks <= 0:
            raise ValueError("runs and n_tasks must be positive")
        for name in ("fe_batch_pairs", "fe_tau", "fe_lr", "lof_k", "mahalanobis_eps",
                     "beta", "expert_batch_size", "expert_lr", "histogram_bins"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def loss_config(self):
        return LossConfig(
            tau=self.fe_tau,
            epochs=self.fe_epochs,
            batch_pairs=self.fe_batch_pairs,
            lr=self.fe_lr,
            steps_per_epoch=self.fe_steps_per_epoch,
            hidden_dims=tuple(self.fe_hidden_dims),
            embedding_dim=self.embedding_dim,
        )

    def expert_config(self):
        return ExpertConfig(
            hidden_dims=tuple(self.expert_hidden_dims),
            epochs=self.expert_epochs,
            batch_size=self.expert_batch_size,
            optimizer=self.expert_optimizer,
            lr=self.expert_lr,
        )

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["fe_hidden_dims"] = list(self.fe_hidden_dims)
        d["expert_hidden_dims"] = list(self.expert_hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("fe_hidden_dims", "expert_hidden_dims"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def stage_rng(seed, run, task, role):
    """Independent generator per (seed, run, task, role) tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), run, task, role]))


@dataclass
class RunReport:
    """Everything a protocol run produced, minus the trained models."""

    config: dict
    acc_matrices: list  # per run: (T, T) array, NaN above the diagonal
    avg_accuracy_per_run: list
    avg_accuracy_mean: float
    avg_accuracy_std: float
    bwt_per_run: list
    bwt_mean: float
    membership_accuracy_per_run: list | None
    histogram_bin_edges: np.ndarray | None
    histogram_counts: np.ndarray | None  # (T, bins) summed over runs
    expert_fingerprints: list = field(default_factory=list)  # per run: list per stage
    stage_seconds: list = field(default_factory=list)  # per run: list per stage

    def canonical_text(self):
        """Deterministic key=value rendering; excludes wall-clock timing."""
        lines = [f"config={json.dumps(self.config, sort_keys=True)}"]
        for r, matrix in enumerate(self.acc_matrices):
            T = matrix.shape[0]
            for i in range(T):
                for j in range(i + 1):
                    lines.append(f"acc[run={r}][stage={i}][task={j}]={float(matrix[i, j])!r}")
        for r, v in enumerate(self.avg_accuracy_per_run):
            lines.append(f"avg_accuracy[run={r}]={v!r}")
        lines.append(f"avg_accuracy_mean={self.avg_accuracy_mean!r}")
        lines.append(f"avg_accuracy_std={self.avg_accuracy_std!r}")
        for r, v in enumerate(self.bwt_per_run):
            lines.append(f"bwt[run={r}]={v!r}")
        lines.append(f"bwt_mean={self.bwt_mean!r}")
        if self.membership_accuracy_per_run is not None:
            for r, v in enumerate(self.membership_accuracy_per_run):
                lines.append(f"membership_accuracy[run={r}]={v!r}")
        for r, fps in enumerate(self.expert_fingerprints):
            for t, fp in enumerate(fps):
                lines.append(f"expert_fingerprint[run={r}][task={t}]={fp}")
        return "\n".join(lines) + "\n"


def _stage_models(method, tasks, t, cfg, run):
    """Train whatever stage t requires; returns (expert_or_none, indom_or_none)."""
    expert_rng = stage_rng(cfg.seed, run, t, _ROLE_EXPERT)
    indom = None
    if method in DYNAMIC_METHODS:
        loss_cfg = cfg.loss_config()
        if method == "pretrained_fe_dm":
            # frozen random-init extractor standing in for a generic
            # pretrained backbone; only the distance measure is fitted
            loss_cfg = dataclasses.replace(loss_cfg, epochs=0)
        dm_kind = "mahalanobis" if method == "fe_dm_mahalanobis" else "lof"
        indom = fit_in_domain(
            tasks[t].train,
            loss_cfg,
            stage_rng(cfg.seed, run, t, _ROLE_FE),
            dm_kind=dm_kind,
            lof_k=cfg.lof_k,
            mahalanobis_eps=cfg.mahalanobis_eps,
            lof_subsample=cfg.lof_subsample,
        )
    expert = train_expert(tasks[t].train, cfg.expert_config(), expert_rng, task_id=t)
    return expert, indom


def _evaluate(method, ensemble, single_expert, tasks_seen):
    """Accuracy on each seen task's test set under the configured method."""
    accs = []
    for j, task in enumerate(tasks_seen):
        X, y = task.test.x, task.test.class_id
        if method in ("fine_tuned", "full_retrain"):
            probs = expert_predict_batch(single_expert, X)
        elif method == "manual":
            probs, _, _ = predict_batch(ensemble, X, manual_task_id=j)
        else:
            probs, _, _ = predict_batch(ensemble, X)
        accs.append(classification_accuracy(probs, y))
    return accs


def _run_once(tasks, cfg, run, on_stage=None):
    T = cfg.n_tasks
    method = cfg.method
    R = np.full((T, T), np.nan)
    fingerprints, seconds = [], []
    ensemble = EnsembleState(
        fusion_mode="equal" if method == "equal" else ("manual" if method == "manual" else "dynamic"),
        beta=cfg.beta,
    )
    single_expert = None
    for t in range(T):
        if on_stage is not None:
            on_stage(run, t)
        t0 = time.perf_counter()
        if method == "fine_tuned":
            if t == 0:
                single_expert = train_expert(
                    tasks[0].train, cfg.expert_config(),
                    stage_rng(cfg.seed, run, 0, _ROLE_EXPERT), task_id=0,
                )
            else:
                single_expert = fine_tune(
                    single_expert, tasks[t], cfg.expert_config(),
                    stage_rng(cfg.seed, run, t, _ROLE_EXPERT),
                )
            fingerprints.append(single_expert.fingerprint())
        elif method == "full_retrain":
            single_expert = full_retrain(
                tasks[: t + 1], cfg.expert_config(),
                stage_rng(cfg.seed, run, t, _ROLE_EXPERT),
            )
            fingerprints.append(single_expert.fingerprint())
        else:
            expert, indom = _stage_models(method, tasks, t, cfg, run)
            ensemble.add_task(expert, indom)
            fingerprints.append(expert.fingerprint())
        R[t, : t + 1] = _evaluate(method, ensemble, single_expert, tasks[: t + 1])
        seconds.append(time.perf_counter() - t0)

    membership_acc = None
    hist = None
    if method in ENSEMBLE_METHODS:
        rows, true_task = [], []
        for j, task in enumerate(tasks[:T]):
            M = membership_matrix(
                ensemble, task.test.x, manual_task_id=j if method == "manual" else None
            )
            rows.append(M)
            true_task.append(np.full(task.test.n, j))
        report = membership_report(
            np.concatenate(rows), np.concatenate(true_task), T, bins=cfg.histogram_bins
        )
        membership_acc = report.accuracy
        hist = report
    return R, fingerprints, seconds, membership_acc, hist


def run_protocol(cfg: ProtocolConfig, tasks=None, on_stage=None) -> RunReport:
    """Execute ``cfg.runs`` independent runs and aggregate a report.

    ``tasks`` can inject pre-built task datasets; by default the five-task
    split is built from the MNIST files in ``cfg.data_dir``.
    """
    if tasks is None:
        tasks = build_split_mnist(*load_mnist(cfg.data_dir), n_tasks=cfg.n_tasks)
    if len(tasks) < cfg.n_tasks:
        raise ValueError(f"need {cfg.n_tasks} tasks, got {len(tasks)}")

    matrices, fingerprints, seconds = [], [], []
    membership_accs = []
    hist_counts = None
    hist_edges = None
    for run in range(cfg.runs):
        R, fps, secs, m_acc, hist = _run_once(tasks, cfg, run, on_stage=on_stage)
        matrices.append(R)
        fingerprints.append(fps)
        seconds.append(secs)
        if m_acc is not None:
            membership_accs.append(m_acc)
            if hist_counts is None:
                hist_counts = hist.counts_by_task.copy()
                hist_edges = hist.bin_edges
            else:
                hist_counts += hist.counts_by_task

    avgs = [average_accuracy(R[cfg.n_tasks - 1, :]) for R in matrices]
    bwts = [backward_transfer(R) for R in matrices] if cfg.n_tasks >= 2 else [0.0]
    std = float(np.std(avgs, ddof=1)) if len(avgs) > 1 else 0.0
    return RunReport(
        config=cfg.to_dict(),
        acc_matrices=matrices,
        avg_accuracy_per_run=avgs,
        avg_accuracy_mean=float(np.mean(avgs)),
        avg_accuracy_std=std,
        bwt_per_run=bwts,
        bwt_mean=float(np.mean(bwts)),
        membership_accuracy_per_run=membership_accs if membership_accs else None,
        histogram_bin_edges=hist_edges,
        histogram_counts=hist_counts,
        expert_fingerprints=fingerprints,
        stage_seconds=seconds,
    )


def emit_report(report: RunReport, out_dir):
    """Write the report files; identical report objects yield identical bytes.

    Wall-clock timing goes to its own file so every other artifact is
    byte-stable across replays of the same config and seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text(report.canonical_text(), encoding="ascii")
    (out / "config.json").write_text(
        json.dumps(report.config, sort_keys=True, indent=2) + "\n", encoding="ascii"
    )
    T = report.acc_matrices[0].shape[0]
    for r, matrix in enumerate(report.acc_matrices):
        lines = [",".join(f"task_{j}" for j in range(T))]
        for i in range(T):
            lines.append(",".join("" if np.isnan(matrix[i, j]) else repr(float(matrix[i, j]))
                                  for j in range(T)))
        (out / f"accuracy_matrix_run{r}.csv").write_text("\n".join(lines) + "\n",
                                                         encoding="ascii")
    hist_lines = ["method,true_task,bin_lo,bin_hi,count"]
    if report.histogram_counts is not None:
        edges = report.histogram_bin_edges
        method = report.config["method"]
        for task in range(report.histogram_counts.shape[0]):
            for b in range(report.histogram_counts.shape[1]):
                hist_lines.append(
                    f"{method},{task},{float(edges[b])!r},{float(edges[b + 1])!r},"
                    f"{int(report.histogram_counts[task, b])}"
                )
    (out / "membership_histograms.csv").write_text("\n".join(hist_lines) + "\n",
                                                   encoding="ascii")
    timing = [
        f"stage_seconds[run={r}][task={t}]={s:.6f}"
        for r, secs in enumerate(report.stage_seconds)
        for t, s in enumerate(secs)
    ]
    (out / "timing.txt").write_text("\n".join(timing) + "\n", encoding="ascii")
    return sorted(p.name for p in out.iterdir())
