"""Per-task expert classifiers.

An expert is a dense softmax classifier trained on exactly one task's data
(or, for the baselines, fine-tuned across tasks or retrained on a pool).
Training minimizes mean cross-entropy. Per-dimension input statistics are
recorded at training time so the expert can later serve as a distillation
teacher without access to its original data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mnist import SampleSet
from .nn import DenseNet, as_rng, make_optimizer, optimizer_step


@dataclass
class ExpertConfig:
    hidden_dims: tuple = (400, 400)
    epochs: int = 4
    batch_size: int = 128
    optimizer: str = "adam"
    lr: float = 1e-3

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0, batch_size and lr positive")


@dataclass
class InputStats:
    """Per-dimension mean and standard deviation of a training input set."""

    mean: np.ndarray
    std: np.ndarray


def input_stats(X):
    X = np.asarray(X, dtype=np.float64)
    return InputStats(mean=X.mean(axis=0), std=X.std(axis=0))


@dataclass
class ExpertModel:
    net: DenseNet
    class_count: int
    task_id: int
    stats: InputStats

    def fingerprint(self):
        return self.net.fingerprint()


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_grad(logits, targets):
    """Mean cross-entropy of softmax(logits) against targets, plus d/d(logits).

    ``targets`` is either an (n,) int class vector or an (n, k) matrix of
    soft target distributions.
    """
    probs = softmax(logits)
    n = probs.shape[0]
    if targets.ndim == 1:
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), targets] = 1.0
    else:
        onehot = targets
    logp = np.log(np.clip(probs, 1e-300, None))
    loss = float(-(onehot * logp).sum() / n)
    return loss, (probs - onehot) / n


def _fit(net, X, y, cfg, rng):
    """Shuffled minibatch training of ``net`` in place; y may be soft targets."""
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    n = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, cache = net.forward(X[idx])
            _, grad_logits = cross_entropy_grad(logits, y[idx])
            grads, _ = net.backward(cache, grad_logits)
            optimizer_step(opt, net.params(), grads)
        net.assert_finite()
    return net


def train_expert(task_train: SampleSet, cfg: ExpertConfig, rng, class_count=2,
                 task_id=None) -> ExpertModel:
    """Fresh expert on one task's training set; deterministic given the seed."""
    rng = as_rng(rng)
    if np.unique(task_train.class_id).size < 2:
        raise ValueError("single-class training set: cannot train a classifier")
    dims = (task_train.x.shape[1], *cfg.hidden_dims, class_count)
    net = DenseNet.init(dims, rng)
    _fit(net, task_train.x, task_train.class_id, cfg, rng)
    return ExpertModel(
        net=net,
        class_count=class_count,
        task_id=-1 if task_id is None else task_id,
        stats=input_stats(task_train.x),
    )


def expert_predict_batch(expert: ExpertModel, X):
    logits, _ = expert.net.forward(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return softmax(logits)


def expert_predict(expert: ExpertModel, x):
    return expert_predict_batch(expert, np.asarray(x, dtype=np.float64)[None, :])[0]


def fine_tune(expert: ExpertModel, new_task, cfg: ExpertConfig, rng) -> ExpertModel:
    """Continue optimizing an existing expert on new task data only.

    Parameters carry over; optimizer state starts fresh. The input expert is
    left untouched.
    """
    rng = as_rng(rng)
    if np.unique(new_task.train.class_id).size < 2:
        raise ValueError("single-class training set: cannot fine-tune a classifier")
    net = expert.net.copy()
    _fit(net, new_task.train.x, new_task.train.class_id, cfg, rng)
    return ExpertModel(
        net=net,
        class_count=expert.class_count,
        task_id=new_task.task_id,
        stats=input_stats(new_task.train.x),
    )


def full_retrain(tasks, cfg: ExpertConfig, rng, class_count=2) -> ExpertModel:
    """Fresh expert on the concatenation of every given task's training set.

    The pooled set is shuffled once with the given seed before training so
    the result does not depend on task order beyond that shuffle.
    """
    rng = as_rng(rng)
    if not tasks:
        raise ValueError("need at least one task")
    X = np.concatenate([t.train.x for t in tasks], axis=0)
    y = np.concatenate([t.train.class_id for t in tasks], axis=0)
    order = rng.permutation(X.shape[0])
    X, y = X[order], y[order]
    if np.unique(y).size < 2:
        raise ValueError("single-class training set: cannot train a classifier")
    dims = (X.shape[1], *cfg.hidden_dims, class_count)
    net = DenseNet.init(dims, rng)
    _fit(net, X, y, cfg, rng)
    return ExpertModel(
        net=net,
        class_count=class_count,
        task_id=tasks[-1].task_id,
        stats=InputStats(mean=X.mean(axis=0), std=X.std(axis=0)),
    )
