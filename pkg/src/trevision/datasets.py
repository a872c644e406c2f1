"""Datasets: a synthetic Gaussian mixture with an exact posterior, the
anchor-removal modification, train/validation splitting, and IDX/CSV
ingestion.
"""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DataFormatError, DomainError, PreconditionError, ShapeError
from .numerics import softmax


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    clean_labels: np.ndarray | None = None
    noisy_labels: np.ndarray | None = None
    posterior_oracle: Callable[[np.ndarray], np.ndarray] | None = None
    num_classes: int | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"features must be 2-d, got shape {X.shape}")
        object.__setattr__(self, "features", X)
        C = self.num_classes
        for name in ("clean_labels", "noisy_labels"):
            y = getattr(self, name)
            if y is None:
                continue
            y = np.asarray(y, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise ShapeError(f"{name} has shape {y.shape}, expected ({X.shape[0]},)")
            if y.size and y.min() < 0:
                raise DomainError(f"{name} contains negative labels")
            object.__setattr__(self, name, y)
        if C is None:
            seen = [y.max() + 1 for y in (self.clean_labels, self.noisy_labels) if y is not None and y.size]
            C = int(max(seen)) if seen else None
            object.__setattr__(self, "num_classes", C)
        for y in (self.clean_labels, self.noisy_labels):
            if y is not None and y.size and C is not None and y.max() >= C:
                raise DomainError(f"labels must lie in 0..{C - 1}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        pick = lambda y: None if y is None else y[index]  # noqa: E731
        return replace(
            self,
            features=self.features[index],
            clean_labels=pick(self.clean_labels),
            noisy_labels=pick(self.noisy_labels),
        )

    def with_noisy_labels(self, noisy) -> "Dataset":
        return replace(self, noisy_labels=noisy)

    def oracle_posteriors(self) -> np.ndarray:
        if self.posterior_oracle is None:
            raise PreconditionError("dataset has no posterior oracle")
        return self.posterior_oracle(self.features)


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Isotropic Gaussian classes sharing one standard deviation."""

    means: np.ndarray
    sigma: float
    priors: np.ndarray | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "means", means)
        C = means.shape[0]
        priors = np.full(C, 1.0 / C) if self.priors is None else np.asarray(self.priors, dtype=np.float64)
        object.__setattr__(self, "priors", priors)
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if priors.shape != (C,) or np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-12:
            raise DomainError("priors must be a probability vector with one entry per class")

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def posterior(self, X) -> np.ndarray:
        """Exact ``P(Y = i | x)`` for each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        sq = ((X[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=2)
        with np.errstate(divide="ignore"):
            logp = np.log(self.priors)[None, :] - sq / (2.0 * self.sigma**2)
        return softmax(logp)


def polygon_means(num_classes: int, radius: float, dim: int = 2) -> np.ndarray:
    """Class means evenly spaced on a circle in the first two coordinates."""
    if dim < 2:
        raise DomainError("polygon layout needs at least two dimensions")
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def generate_gaussian_mixture(spec: GaussianMixtureSpec, n: int, seed: int) -> Dataset:
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = np.random.default_rng(seed)
    y = rng.choice(spec.num_classes, size=n, p=spec.priors)
    X = spec.means[y] + spec.sigma * rng.standard_normal((n, spec.dim))
    return Dataset(X, clean_labels=y, posterior_oracle=spec.posterior, num_classes=spec.num_classes)


def _max_scores(scores, n):
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 2:
        s = s.max(axis=1)
    if s.shape != (n,):
        raise ShapeError(f"expected {n} scores, got shape {np.shape(scores)}")
    return s


def remove_top_posterior(ds: Dataset, fraction: float, scores) -> Dataset:
    """Drop the ``ceil(fraction * n_c)`` highest-scoring instances of each clean class.

    ``scores`` is either one score per instance or an ``(n, C)`` posterior
    matrix, in which case the row maximum is used. Among equal scores the
    lower instance index is dropped first.
    """
    if not 0.0 <= fraction < 1.0:
        raise DomainError("fraction must lie in [0, 1)")
    if ds.clean_labels is None:
        raise PreconditionError("anchor removal needs clean labels")
    s = _max_scores(scores, len(ds))
    drop = []
    for c in np.unique(ds.clean_labels):
        members = np.flatnonzero(ds.clean_labels == c)
        k = math.ceil(fraction * members.size)
        if k:
            order = np.argsort(-s[members], kind="stable")
            drop.append(members[order[:k]])
    if not drop:
        return ds
    keep = np.setdiff1d(np.arange(len(ds)), np.concatenate(drop))
    return ds.subset(keep)


def remove_above_posterior(ds: Dataset, threshold: float, scores) -> Dataset:
    """Keep only instances whose max posterior score is at most ``threshold``."""
    s = _max_scores(scores, len(ds))
    return ds.subset(np.flatnonzero(s <= threshold))


def split_train_val(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle and split off ``n - floor(n * (1 - fraction))`` validation instances."""
    if not 0.0 < fraction < 1.0:
        raise DomainError("fraction must lie in (0, 1)")
    n = len(ds)
    if n < 2:
        raise DomainError("need at least two instances to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(n * (1.0 - fraction))
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train:])


# -- IDX -------------------------------------------------------------------

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _open_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _read_idx(path, magic: int):
    raw = _open_bytes(path)
    if len(raw) < 4:
        raise DataFormatError(f"expected at least 4 header bytes, got {len(raw)}", path=path, offset=0)
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise DataFormatError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", path=path, offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"truncated header: expected {header} bytes, got {len(raw)}", path=path, offset=4)
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    expected = header + math.prod(dims)
    if len(raw) != expected:
        raise DataFormatError(
            f"expected {expected} bytes for dimensions {dims}, got {len(raw)}",
            path=path,
            offset=min(len(raw), expected),
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1].

    Labels are stored as clean labels.
    """
    images = _read_idx(images_path, IMAGES_MAGIC)
    labels = _read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", path=labels_path, offset=4
        )
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, clean_labels=labels.astype(np.int64))


def save_idx(images, labels, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ShapeError("images must have shape (n, rows, cols)")
    for path, arr, magic in ((images_path, images, IMAGES_MAGIC), (labels_path, labels, LABELS_MAGIC)):
        head = struct.pack(">I" + "I" * arr.ndim, magic, *arr.shape)
        opener = gzip.open if Path(path).suffix == ".gz" else open
        with opener(path, "wb") as fh:
            fh.write(head + arr.tobytes())


# -- CSV -------------------------------------------------------------------


def load_csv(path, *, label_kind="clean", num_classes=None) -> Dataset:
    """Read ``label,f1,...,fd`` rows. ``label_kind`` says which label slot to fill."""
    if label_kind not in ("clean", "noisy"):
        raise DomainError("label_kind must be 'clean' or 'noisy'")
    labels, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise DataFormatError("header must start with 'label'", path=path, line=1)
        d = len(header) - 1
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != d + 1:
                raise DataFormatError(f"expected {d + 1} fields, found {len(rec)}", path=path, line=lineno)
            try:
                labels.append(int(rec[0]))
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise DataFormatError(str(exc), path=path, line=lineno) from None
    X = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    y = np.array(labels, dtype=np.int64)
    kw = {"clean_labels": y} if label_kind == "clean" else {"noisy_labels": y}
    return Dataset(X, num_classes=num_classes, **kw)


def save_csv(ds: Dataset, path, *, label_kind="clean") -> None:
    y = ds.clean_labels if label_kind == "clean" else ds.noisy_labels
    if y is None:
        raise PreconditionError(f"dataset has no {label_kind} labels")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["label"] + [f"f{j + 1}" for j in range(ds.dim)]) + "\n")
        for label, row in zip(y, ds.features):
            fh.write(",".join([str(int(label))] + [f"{v:.17g}" for v in row]) + "\n")
