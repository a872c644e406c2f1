"""Loss corrections for class-conditional label noise.

Four objectives share one interface, :func:`batch_objective`, which returns
the mean loss over a batch together with its gradient w.r.t. the logits
and (for the transition-aware losses) w.r.t. the transition matrix:

* ``unweighted``: plain cross-entropy on the noisy label.
* ``forward``: cross-entropy of ``T^T g`` (noise adaptation layer).
* ``backward``: the ``(T^T)^{-1}``-corrected loss vector.
* ``reweight``: cross-entropy scaled by ``g_y / (T^T g)_y``.

``g`` is the softmax output, ``y`` the observed noisy label.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, NumericError, SingularMatrixError
from .numerics import EPS_LOG, MAX_CONDITION, MLP, backward, cross_entropy, logits_batch, softmax

EPS_DEN = 1e-12

LOSS_KINDS = ("unweighted", "forward", "backward", "reweight")


def reweight_loss(g, y, T_eff, eps_den=EPS_DEN) -> tuple[float, float]:
    """Importance-reweighted cross-entropy for one sample; returns ``(loss, weight)``."""
    g = np.asarray(g, dtype=np.float64)
    T_eff = np.asarray(T_eff, dtype=np.float64)
    den = float(g @ T_eff[:, y])
    if not den > eps_den:
        raise NumericError(f"reweighting denominator {den:.3e} is not above {eps_den:g}")
    w = g[y] / den
    return float(w * cross_entropy(g, y)), float(w)


def forward_loss(g, y, T) -> float:
    g = np.asarray(g, dtype=np.float64)
    return float(-np.log(max(float(g @ np.asarray(T, dtype=np.float64)[:, y]), EPS_LOG)))


def backward_loss(per_class_losses, y, T) -> float:
    """Component ``y`` of ``(T^T)^{-1} L``; may be negative."""
    A = _inverse_transpose(T)
    return float(A[y] @ np.asarray(per_class_losses, dtype=np.float64))


def _inverse_transpose(T) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(T)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError(float(cond) if np.isfinite(cond) else float("inf"))
    return np.linalg.inv(T.T)


def per_sample_losses(kind, g, y, T=None) -> np.ndarray:
    """Per-sample values of the chosen loss for a batch of softmax outputs."""
    g = np.asarray(g, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rows = np.arange(g.shape[0])
    ce = cross_entropy(g, y)
    if kind == "unweighted":
        return ce
    T = np.asarray(T, dtype=np.float64)
    if kind == "forward":
        p = (g @ T)[rows, y]
        return -np.log(np.maximum(p, EPS_LOG))
    if kind == "reweight":
        p = (g @ T)[rows, y]
        if np.any(~(p > EPS_DEN)):
            raise NumericError("reweighting denominator vanished; transition matrix is degenerate")
        return g[rows, y] / p * ce
    if kind == "backward":
        L = -np.log(np.maximum(g, EPS_LOG))
        return (L @ _inverse_transpose(T).T)[rows, y]
    raise DomainError(f"unknown loss kind {kind!r}")


def batch_objective(kind, logits, y, T=None, *, weight_detach=True, need_T_grad=False):
    """Mean loss over the batch with gradients.

    Returns ``(loss, dlogits, dT)``. ``dlogits`` has the batch shape;
    ``dT`` is ``None`` unless ``need_T_grad`` and the loss depends on ``T``
    through a differentiable path (forward and reweight).
    """
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, C = logits.shape
    rows = np.arange(n)
    g = softmax(logits)
    gy = g[rows, y]
    live = gy > EPS_LOG  # inside the log clamp the cross-entropy is constant
    ce = -np.log(np.maximum(gy, EPS_LOG))
    onehot = np.zeros_like(g)
    onehot[rows, y] = 1.0
    dce = (g - onehot) * live[:, None]
    dT = None

    if kind == "unweighted":
        losses, dh = ce, dce
    elif kind == "forward":
        T = np.asarray(T, dtype=np.float64)
        Ty = T[:, y].T  # (n, C): column y of T for each sample
        p = np.einsum("nc,nc->n", g, Ty)
        ok = p > EPS_LOG
        losses = -np.log(np.maximum(p, EPS_LOG))
        u = -Ty / np.where(ok, p, 1.0)[:, None] * ok[:, None]
        dh = _softmax_vjp(g, u)
        if need_T_grad:
            dT = _scatter_columns(-g / np.where(ok, p, 1.0)[:, None] * ok[:, None], y, C)
    elif kind == "reweight":
        T = np.asarray(T, dtype=np.float64)
        Ty = T[:, y].T
        p = np.einsum("nc,nc->n", g, Ty)
        if np.any(~(p > EPS_DEN)):
            raise NumericError("reweighting denominator vanished; transition matrix is degenerate")
        w = gy / p
        losses = w * ce
        dh = w[:, None] * dce
        if not weight_detach:
            v = -(gy / p**2)[:, None] * Ty
            v[rows, y] += 1.0 / p
            dh = dh + ce[:, None] * _softmax_vjp(g, v)
        if need_T_grad:
            dT = _scatter_columns(-(w * ce / p)[:, None] * g, y, C)
    elif kind == "backward":
        A = _inverse_transpose(T)
        a = A[y]  # coefficients of the per-class losses for each sample
        L = -np.log(np.maximum(g, EPS_LOG))
        losses = np.einsum("nc,nc->n", a, L)
        m = a * (g > EPS_LOG)
        dh = m.sum(axis=1, keepdims=True) * g - m
    else:
        raise DomainError(f"unknown loss kind {kind!r}")

    return float(losses.mean()), dh / n, (None if dT is None else dT / n)


def _softmax_vjp(g, u):
    """Pull a gradient ``u`` on the softmax output back to the logits."""
    return g * (u - np.einsum("nc,nc->n", g, u)[:, None])


def _scatter_columns(contrib, y, C):
    """Accumulate per-sample column vectors into column ``y[i]`` of a C x C matrix.

    Summation runs in index order so the result is bit-reproducible.
    """
    dT = np.zeros((C, C))
    for j in range(C):
        mask = y == j
        if mask.any():
            dT[:, j] = contrib[mask].sum(axis=0)
    return dT


def model_objective(kind, model: MLP, X, y, T=None, *, weight_detach=True, need_T_grad=False):
    """Loss, parameter gradients (aligned with ``model.params()``) and ``dT``."""
    h = logits_batch(model, X)
    loss, dh, dT = batch_objective(kind, h, y, T, weight_detach=weight_detach, need_T_grad=need_T_grad)
    return loss, backward(model, X, dh), dT


def reweight_grads(model: MLP, X, y, T_hat, delta_T, *, weight_detach=True):
    """Gradients of the mean reweighted loss w.r.t. the parameters and ``delta_T``."""
    T_eff = np.asarray(T_hat, dtype=np.float64) + np.asarray(delta_T, dtype=np.float64)
    loss, grads, dT = model_objective(
        "reweight", model, X, y, T_eff, weight_detach=weight_detach, need_T_grad=True
    )
    return loss, grads, dT
