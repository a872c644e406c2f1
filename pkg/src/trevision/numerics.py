"""Dense numerics: a small feedforward network, softmax/cross-entropy,
first-order optimizers, a guarded linear solver and a central-difference
gradient checker.

Weights are stored as ``(out_features, in_features)`` arrays so a layer
computes ``W @ x + b``; batches are row-major ``(n, features)``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError, ShapeError, SingularMatrixError

EPS_LOG = 1e-12
MAX_CONDITION = 1e12

ACTIVATIONS = ("relu", "identity")


@dataclass
class MLP:
    """Feedforward network ``h(x) = W_d s(W_{d-1} ... s(W_1 x + b_1) ...) + b_d``.

    ``biases`` is ``None`` for the bias-free networks of the generalization
    bound; otherwise it holds one vector per layer.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray] | None = None
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if not self.weights:
            raise ShapeError("network needs at least one layer")
        for k in range(1, len(self.weights)):
            if self.weights[k].shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k} expects {self.weights[k].shape[1]} inputs, "
                    f"layer {k - 1} produces {self.weights[k - 1].shape[0]}"
                )
        if self.biases is not None:
            if len(self.biases) != len(self.weights):
                raise ShapeError("one bias vector per layer required")
            for W, b in zip(self.weights, self.biases):
                if b.shape != (W.shape[0],):
                    raise ShapeError(f"bias shape {b.shape} does not match {W.shape}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: all weights, then all biases."""
        return list(self.weights) + (list(self.biases) if self.biases is not None else [])

    def set_params(self, params) -> None:
        d = self.depth
        self.weights = [np.array(p) for p in params[:d]]
        if self.biases is not None:
            self.biases = [np.array(p) for p in params[d:]]

    def copy(self) -> "MLP":
        return copy.deepcopy(self)

    def frobenius_norms(self) -> list[float]:
        """Per-layer weight Frobenius norms (biases are not included)."""
        return [float(np.linalg.norm(W)) for W in self.weights]


def init_mlp(layer_sizes, seed=0, *, activation="relu", bias=True, dtype=np.float64) -> MLP:
    """He-initialised network with ``layer_sizes = [d_in, h_1, ..., C]``."""
    if len(layer_sizes) < 2:
        raise ShapeError("layer_sizes needs input and output dimensions")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        weights.append(W.astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MLP(weights, biases if bias else None, activation)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction (works on 1-d or 2-d input)."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _act(z, activation):
    return np.maximum(z, 0.0) if activation == "relu" else z


def _forward_cache(model: MLP, X: np.ndarray):
    """Return per-layer inputs (for backprop) and the final logits."""
    inputs = []
    a = X
    last = model.depth - 1
    for k, W in enumerate(model.weights):
        inputs.append(a)
        z = a @ W.T
        if model.biases is not None:
            z = z + model.biases[k]
        a = z if k == last else _act(z, model.activation)
    return inputs, a


def logits_batch(model: MLP, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=model.dtype)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ShapeError(f"expected (n, {model.input_dim}) features, got {X.shape}")
    return _forward_cache(model, X)[1]


def predict_proba(model: MLP, X: np.ndarray) -> np.ndarray:
    return softmax(logits_batch(model, X))


def forward(model: MLP, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and softmax output for a single feature vector."""
    x = np.asarray(x, dtype=model.dtype)
    if x.shape != (model.input_dim,):
        raise ShapeError(f"expected feature vector of length {model.input_dim}, got shape {x.shape}")
    h = logits_batch(model, x[None, :])[0]
    return h, softmax(h)


def argmax_lowest(p: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index (numpy's rule)."""
    return np.argmax(p, axis=-1)


def cross_entropy(g: np.ndarray, label) -> np.ndarray:
    """``-log(max(g[label], EPS_LOG))``; vectorised over leading axes."""
    g = np.asarray(g)
    label = np.asarray(label)
    C = g.shape[-1]
    if np.any(label < 0) or np.any(label >= C):
        raise DomainError(f"label out of range 0..{C - 1}")
    if g.ndim == 1:
        return -np.log(max(g[int(label)], EPS_LOG))
    picked = g[np.arange(g.shape[0]), label]
    return -np.log(np.maximum(picked, EPS_LOG))


def backward(model: MLP, X: np.ndarray, dlogits: np.ndarray):
    """Gradients of ``sum(dlogits * logits(X))`` w.r.t. the parameters.

    Returns a list aligned with :meth:`MLP.params`.
    """
    X = np.asarray(X, dtype=model.dtype)
    dlogits = np.asarray(dlogits, dtype=model.dtype)
    if X.ndim == 1:
        X, dlogits = X[None, :], dlogits[None, :]
    if X.shape[1] != model.input_dim or dlogits.shape != (X.shape[0], model.output_dim):
        raise ShapeError(f"inconsistent shapes X={X.shape}, dlogits={dlogits.shape}")
    inputs, _ = _forward_cache(model, X)
    gw = [None] * model.depth
    gb = [None] * model.depth
    delta = dlogits
    for k in range(model.depth - 1, -1, -1):
        a = inputs[k]
        gw[k] = delta.T @ a
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ model.weights[k]
            if model.activation == "relu":
                delta = delta * (a > 0)
    return gw + (gb if model.biases is not None else [])


def finite_diff_check(fun, params, step=1e-5) -> float:
    """Compare an analytic gradient against central differences.

    ``fun(params) -> (loss, grads)`` where ``params`` and ``grads`` are lists
    of arrays of equal shapes. Returns the maximum over coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if step <= 0:
        raise DomainError("step must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]
    loss, grads = fun(params)
    if not np.isfinite(loss):
        raise NumericError("loss is not finite at the base point")
    worst = 0.0
    for p, g in zip(params, grads):
        g = np.asarray(g)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fun(params)[0]
            flat[i] = orig - step
            fm = fun(params)[0]
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("loss is not finite under perturbation")
            num = (fp - fm) / (2 * step)
            worst = max(worst, abs(gflat[i] - num) / max(1.0, abs(num)))
    return worst


def solve_linear(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` (LU with partial pivoting) behind a condition guard."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"square matrix required, got {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ShapeError(f"right-hand side of length {b.shape[0]} for {A.shape} system")
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError(float(cond) if np.isfinite(cond) else float("inf"))
    return np.linalg.solve(A, b)


@dataclass
class SGDMomentum:
    """``v <- mu v - lr (g + wd p);  p <- p + v``."""

    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        _check_shapes(params, grads, self.velocity)
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v -= self.learning_rate * (g + self.weight_decay * p)
            p += v


@dataclass
class Adam:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] | None = field(default=None, repr=False)
    v: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        _check_shapes(params, grads, self.m)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def make_optimizer(kind: str, learning_rate: float, *, momentum=0.9, weight_decay=0.0):
    if kind == "sgd_momentum":
        return SGDMomentum(learning_rate, momentum, weight_decay)
    if kind == "adam":
        return Adam(learning_rate)
    raise DomainError(f"unknown optimizer {kind!r}")


def _check_shapes(params, grads, state):
    if not (len(params) == len(grads) == len(state)):
        raise ShapeError("parameter, gradient and state lists differ in length")
    for p, g, s in zip(params, grads, state):
        if p.shape != g.shape or p.shape != s.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {s.shape}")
