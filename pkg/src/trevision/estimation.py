"""First stage: fit the noisy class posterior, pick pseudo-anchors and read
off the initial transition matrix from their noisy posteriors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import StageConfig
from .datasets import Dataset
from .errors import PreconditionError
from .noise import project_to_valid
from .numerics import MLP, init_mlp, predict_proba
from .training import fit_fixed


@dataclass
class PosteriorModel:
    model: MLP
    trained_epochs: int
    best_val_error: float
    history: list[dict] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        return predict_proba(self.model, X)


@dataclass
class AnchorSet:
    """``indices[i]`` holds the k instances chosen for class i; ``scores[i]`` their posteriors."""

    indices: np.ndarray
    scores: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.indices.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "rank", "index", "score"])
            for c in range(self.indices.shape[0]):
                for r in range(self.indices.shape[1]):
                    w.writerow([c, r, int(self.indices[c, r]), repr(float(self.scores[c, r]))])


def train_noisy_posterior(train: Dataset, val: Dataset, stage: StageConfig, *, hidden=(64,),
                          seed=0, bias=True, dtype=np.float64, ties="earliest") -> PosteriorModel:
    """Minimise unweighted cross-entropy on the noisy labels.

    The parameters kept are those with the lowest classification error on
    the noisy validation labels.
    """
    if train.noisy_labels is None or val.noisy_labels is None:
        raise PreconditionError("stage 1 needs noisy labels on both training and validation sets")
    C = train.num_classes
    init_seed, shuffle_seed = np.random.SeedSequence(seed).generate_state(2)
    model = init_mlp([train.dim, *hidden, C], int(init_seed), bias=bias, dtype=dtype)
    res = fit_fixed(
        model, train.features, train.noisy_labels, val.features, val.noisy_labels, stage,
        kind="unweighted", seed=int(shuffle_seed), ties=ties,
    )
    return PosteriorModel(res.model, stage.epochs, res.best_val_error, res.history)


def select_pseudo_anchors(posteriors, k: int = 1) -> AnchorSet:
    """For each class i, the k instances with the largest ``posteriors[:, i]``.

    ``posteriors`` may come from a trained model or an exact oracle. Equal
    scores are resolved in favour of the lower index.
    """
    P = np.asarray(posteriors, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise PreconditionError("need a non-empty (n, C) posterior matrix")
    if k < 1 or k > P.shape[0]:
        raise PreconditionError(f"k={k} must lie in 1..{P.shape[0]}")
    C = P.shape[1]
    indices = np.empty((C, k), dtype=np.int64)
    for i in range(C):
        indices[i] = np.argsort(-P[:, i], kind="stable")[:k]
    scores = np.take_along_axis(P.T, indices, axis=1)
    return AnchorSet(indices, scores)


def init_transition(posteriors, anchors: AnchorSet) -> np.ndarray:
    """Row i is the mean noisy posterior over class i's anchors, then projected."""
    P = np.asarray(posteriors, dtype=np.float64)
    raw = np.stack([P[anchors.indices[i]].mean(axis=0) for i in range(anchors.num_classes)])
    return project_to_valid(raw)


def estimate_transition(pm: PosteriorModel, ds: Dataset, k: int = 1):
    """Pseudo-anchors and initial transition matrix from a fitted posterior model."""
    P = pm.predict(ds.features)
    anchors = select_pseudo_anchors(P, k)
    return init_transition(P, anchors), anchors
