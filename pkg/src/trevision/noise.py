"""Noise transition matrices: construction, validation, label corruption,
projection back onto valid matrices, and comparison.

A transition matrix ``T`` is a plain ``(C, C)`` float array with
``T[i, j] = P(noisy = j | clean = i)``. Class labels are 0-based.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataFormatError, DomainError, NumericError, ShapeError
from .numerics import solve_linear

ROW_TOL = 1e-9


def validate_transition(T, *, diagonally_dominant=False) -> np.ndarray:
    """Return ``T`` as a float array after checking it is row-stochastic."""
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] < 1:
        raise ShapeError(f"transition matrix must be square, got shape {T.shape}")
    if not np.all(np.isfinite(T)):
        raise DomainError("transition matrix has non-finite entries")
    if np.any(T < 0) or np.any(T > 1):
        raise DomainError("transition matrix entries must lie in [0, 1]")
    if np.any(np.abs(T.sum(axis=1) - 1.0) > ROW_TOL):
        raise DomainError("transition matrix rows must sum to 1")
    if diagonally_dominant and not is_diagonally_dominant(T):
        raise DomainError("transition matrix is not diagonally dominant")
    return T


def is_diagonally_dominant(T) -> bool:
    off = np.array(T, dtype=np.float64)
    np.fill_diagonal(off, -np.inf)
    return bool(np.all(np.diag(np.asarray(T)) > off.max(axis=1)))


def build_symmetric(rate: float, num_classes: int) -> np.ndarray:
    """Symmetric flipping: ``1 - rate`` on the diagonal, ``rate/(C-1)`` elsewhere."""
    if num_classes < 2:
        raise DomainError("symmetric noise needs at least two classes")
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"noise rate must lie in [0, 1), got {rate}")
    T = np.full((num_classes, num_classes), rate / (num_classes - 1))
    np.fill_diagonal(T, 1.0 - rate)
    return T


def corrupt_labels(clean_labels, T, seed: int) -> np.ndarray:
    """Draw ``noisy[i] ~ Categorical(T[clean[i]])`` by inverse CDF.

    The i-th uniform comes from a counter-based generator keyed on
    ``seed``, so the draw for example i depends only on ``(seed, i)``.
    """
    T = validate_transition(T)
    y = np.asarray(clean_labels, dtype=np.int64)
    C = T.shape[0]
    if y.size and (y.min() < 0 or y.max() >= C):
        raise DomainError(f"labels must lie in 0..{C - 1}")
    u = np.random.Generator(np.random.Philox(key=int(seed))).random(y.size)
    cdf = np.cumsum(T, axis=1)
    noisy = np.empty_like(y)
    for c in range(C):
        mask = y == c
        noisy[mask] = np.searchsorted(cdf[c], u[mask], side="right")
    return np.minimum(noisy, C - 1)


def project_to_valid(raw) -> np.ndarray:
    """Clamp negative entries to zero, then normalise each row to sum to one.

    Rows that are already valid (within ``ROW_TOL``) are returned as they
    are, which makes the projection exactly idempotent.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ShapeError(f"transition matrix must be square, got shape {raw.shape}")
    P = np.maximum(raw, 0.0)
    sums = P.sum(axis=1, keepdims=True)
    bad = np.flatnonzero(~(sums[:, 0] > 0))
    if bad.size:
        raise NumericError(f"rows {bad.tolist()} have no positive entry")
    keep = np.all(raw >= 0, axis=1, keepdims=True) & (np.abs(sums - 1.0) <= ROW_TOL)
    return np.where(keep, P, P / sums)


def estimation_error(T_true, T_hat, delta_T=None) -> float:
    """``||T - T_hat - delta_T||_1 / ||T||_1`` with the entrywise L1 norm."""
    T_true = np.asarray(T_true, dtype=np.float64)
    T_hat = np.asarray(T_hat, dtype=np.float64)
    if T_hat.shape != T_true.shape:
        raise ShapeError(f"shape mismatch {T_true.shape} vs {T_hat.shape}")
    diff = T_true - T_hat
    if delta_T is not None:
        delta_T = np.asarray(delta_T, dtype=np.float64)
        if delta_T.shape != T_true.shape:
            raise ShapeError(f"shape mismatch {T_true.shape} vs {delta_T.shape}")
        diff = diff - delta_T
    return float(np.abs(diff).sum() / np.abs(T_true).sum())


def infer_clean_posterior(T, noisy_posterior) -> tuple[np.ndarray, bool]:
    """Solve ``T^T p = noisy_posterior`` for the clean posterior ``p``.

    No clipping or renormalisation is done: a misspecified ``T`` can give a
    vector off the simplex, which the returned flag reports.
    """
    T = np.asarray(T, dtype=np.float64)
    p = solve_linear(T.T, noisy_posterior)
    in_simplex = bool(np.all(p >= -ROW_TOL) and abs(p.sum() - 1.0) <= ROW_TOL)
    return p, in_simplex


def format_transition(T) -> str:
    T = np.asarray(T, dtype=np.float64)
    lines = [str(T.shape[0])]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in T]
    return "\n".join(lines) + "\n"


def parse_transition(text: str, path=None) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataFormatError("empty transition file", path=path, line=1)
    try:
        C = int(lines[0])
    except ValueError:
        raise DataFormatError(f"expected class count, got {lines[0]!r}", path=path, line=1) from None
    if len(lines) != C + 1:
        raise DataFormatError(f"expected {C} rows, found {len(lines) - 1}", path=path, line=len(lines))
    rows = []
    for k, ln in enumerate(lines[1:], start=2):
        try:
            row = [float(v) for v in ln.split()]
        except ValueError:
            raise DataFormatError("non-numeric entry", path=path, line=k) from None
        if len(row) != C:
            raise DataFormatError(f"expected {C} entries, found {len(row)}", path=path, line=k)
        rows.append(row)
    return np.array(rows, dtype=np.float64)


def save_transition(T, path) -> None:
    Path(path).write_text(format_transition(T))


def load_transition(path) -> np.ndarray:
    return parse_transition(Path(path).read_text(), path=path)
