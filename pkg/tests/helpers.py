"""Shared fixtures for building random problems and finite-difference oracles."""

import numpy as np

from trevision.correction import batch_objective, per_sample_losses
from trevision.numerics import backward, init_mlp, logits_batch, softmax


def random_transition(rng, C, dominance=3.0):
    T = rng.random((C, C)) + dominance * np.eye(C)
    return T / T.sum(axis=1, keepdims=True)


def random_problem(seed, C=3, d=4, n=6, hidden=5):
    rng = np.random.default_rng(seed)
    model = init_mlp([d, hidden, C], int(rng.integers(2**31)))
    for b in model.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    X = rng.normal(size=(n, d))
    y = rng.integers(0, C, n)
    T = random_transition(rng, C)
    return rng, model, X, y, T


def param_objective(kind, model, X, y, T, weight_detach):
    """``fun(params) -> (loss, grads)`` for :func:`finite_diff_check`.

    In detach mode the reweighting factor is frozen at the starting
    parameters, so the numeric reference differentiates ``sum(w0 * CE)``.
    """
    w0 = None
    if kind == "reweight" and weight_detach:
        g = softmax(logits_batch(model, X))
        p = (g @ T)[np.arange(len(y)), y]
        w0 = g[np.arange(len(y)), y] / p

    def fun(params):
        model.set_params(params)
        h = logits_batch(model, X)
        _, dh, _ = batch_objective(kind, h, y, T, weight_detach=weight_detach)
        if w0 is not None:
            loss = float(np.mean(w0 * per_sample_losses("unweighted", softmax(h), y)))
        else:
            loss = float(np.mean(per_sample_losses(kind, softmax(h), y, T)))
        return loss, backward(model, X, dh)

    return fun


def delta_objective(kind, logits, y, T_hat):
    def fun(params):
        loss, _, dT = batch_objective(kind, logits, y, T_hat + params[0], need_T_grad=True)
        return loss, [dT]

    return fun
