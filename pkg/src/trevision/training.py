"""Minibatch training with validation-based snapshot selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import StageConfig
from .correction import batch_objective, model_objective
from .numerics import MLP, Adam, SGDMomentum, logits_batch, softmax


def make_stage_optimizer(stage: StageConfig):
    if stage.optimizer == "adam":
        return Adam(stage.learning_rate)
    return SGDMomentum(stage.learning_rate, stage.momentum, stage.weight_decay)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def noisy_error(model: MLP, X, noisy_labels, T=None) -> float:
    """Classification error of ``argmax (T^T g)`` (or ``argmax g``) on noisy labels."""
    if len(noisy_labels) == 0:
        return 0.0
    g = softmax(logits_batch(model, X))
    p = g if T is None else g @ np.asarray(T, dtype=np.float64)
    return float(np.mean(np.argmax(p, axis=1) != noisy_labels))


def accuracy(model: MLP, X, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits_batch(model, X), axis=1) == labels))


def full_objective(kind, model, X, y, T=None) -> float:
    return batch_objective(kind, logits_batch(model, X), y, T)[0]


@dataclass
class FitResult:
    model: MLP
    best_epoch: int
    best_val_error: float
    history: list[dict] = field(default_factory=list)


def improves(value: float, best: float, ties: str) -> bool:
    """Selection test; ``ties='latest'`` lets a later equal error replace the snapshot."""
    return value <= best if ties == "latest" else value < best


def fit_fixed(model: MLP, X, y, Xv, yv, stage: StageConfig, *, kind="unweighted", T=None,
              weight_detach=True, seed=0, ties="earliest") -> FitResult:
    """Train ``model`` in place on a loss with a fixed transition matrix.

    Epoch 0 records the starting point. The returned model is a copy of the
    snapshot with the lowest noisy-validation error; ``ties`` picks
    the earliest or latest of equal minima.
    """
    rng = np.random.default_rng(seed)
    opt = make_stage_optimizer(stage)
    T_eval = None if kind == "unweighted" else T

    def record(epoch):
        return {
            "epoch": epoch,
            "noisy_val_error": noisy_error(model, Xv, yv, T_eval),
            "train_risk": full_objective(kind, model, X, y, T),
        }

    history = [record(0)]
    best = (history[0]["noisy_val_error"], 0, model.copy())
    for epoch in range(stage.epochs):
        opt.learning_rate = stage.learning_rate_at(epoch)
        for idx in minibatches(len(y), stage.batch_size, rng):
            _, grads, _ = model_objective(kind, model, X[idx], y[idx], T, weight_detach=weight_detach)
            opt.step(model.params(), grads)
        history.append(record(epoch + 1))
        if improves(history[-1]["noisy_val_error"], best[0], ties):
            best = (history[-1]["noisy_val_error"], epoch + 1, model.copy())
    return FitResult(best[2], best[1], best[0], history)
