"""Second stage: train the classifier through the noise adaptation layer,
then learn a slack correction ``delta_T`` jointly with the network, and
the end-to-end pipeline tying both stages to data preparation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, StageConfig, TrainConfig
from .correction import model_objective
from .datasets import (
    Dataset,
    GaussianMixtureSpec,
    generate_gaussian_mixture,
    load_csv,
    load_idx,
    polygon_means,
    remove_above_posterior,
    remove_top_posterior,
    split_train_val,
)
from .errors import ConfigError, DomainError, NumericError, TRevisionError
from .estimation import AnchorSet, estimate_transition, train_noisy_posterior
from .noise import build_symmetric, corrupt_labels, estimation_error, project_to_valid, validate_transition
from .numerics import MLP, Adam, SGDMomentum, init_mlp, predict_proba
from .training import (
    accuracy, fit_fixed, full_objective, improves, make_stage_optimizer, minibatches, noisy_error,
)

LOSS_FOR_METHOD = {
    "unweighted": "unweighted",
    "forward": "forward",
    "forward-r": "forward",
    "backward": "backward",
    "reweight": "reweight",
    "reweight-r": "reweight",
}


def derive_seed(seed: int, tag: str) -> int:
    """Independent sub-seed for one consumer (data, stage 1, ...) of a run seed."""
    digest = hashlib.sha256(tag.encode()).digest()
    ss = np.random.SeedSequence([int(seed), int.from_bytes(digest[:4], "little")])
    return int(ss.generate_state(1)[0])


@dataclass
class RevisionState:
    T_hat: np.ndarray
    delta_T: np.ndarray | None = None
    enforce_valid: bool = False
    optimizer: Adam | SGDMomentum | None = None

    def __post_init__(self):
        self.T_hat = validate_transition(self.T_hat)
        if self.delta_T is None:
            self.delta_T = np.zeros_like(self.T_hat)

    @property
    def T_eff(self) -> np.ndarray:
        return self.T_hat + self.delta_T


def stage2_initialize(train: Dataset, val: Dataset, T_hat, config: TrainConfig, *, kind="reweight",
                      seed=0):
    """Fit a fresh network on the corrected loss with ``T_hat`` held fixed."""
    T_hat = validate_transition(T_hat)
    init_seed = derive_seed(seed, "stage2-init-weights")
    model = init_mlp(
        [train.dim, *config.hidden, train.num_classes], init_seed, bias=config.bias,
        dtype=np.float32 if config.float32 else np.float64,
    )
    return fit_fixed(
        model, train.features, train.noisy_labels, val.features, val.noisy_labels, config.stage2_init,
        kind=kind, T=T_hat, weight_detach=config.weight_detach, seed=derive_seed(seed, "stage2-init-shuffle"),
        ties=config.selection_ties,
    )


def stage2_revise(train: Dataset, val: Dataset, model: MLP, state: RevisionState, config: TrainConfig, *,
                  kind="reweight", learn_delta=True, seed=0, T_true=None, test: Dataset | None = None):
    """Jointly update the network and ``state.delta_T``.

    Every epoch (epoch 0 is the starting point) appends a history row; the
    returned model and slack are the snapshot with the lowest noisy
    validation error. With ``learn_delta=False`` the slack stays at zero
    and only the network trains, which gives the matching non-revised
    baseline.
    """
    stage: StageConfig = config.revision
    model = model.copy()
    rng = np.random.default_rng(derive_seed(seed, "revision-shuffle"))
    opt = state.optimizer or make_stage_optimizer(stage)
    delta_lr = config.delta_learning_rate or stage.learning_rate
    delta_opt = Adam(delta_lr) if stage.optimizer == "adam" else SGDMomentum(delta_lr, stage.momentum, 0.0)
    delta = state.delta_T
    X, y = train.features, train.noisy_labels

    def record(epoch):
        try:
            return measure(epoch)
        except NumericError as exc:
            raise NumericError(f"revision aborted at epoch {epoch}: {exc}") from exc

    def measure(epoch):
        T_eff = state.T_hat + delta
        row = {
            "epoch": epoch,
            "noisy_val_error": noisy_error(model, val.features, val.noisy_labels, T_eff),
            "reweighted_train_risk": full_objective(kind, model, X, y, T_eff),
        }
        if T_true is not None:
            row["estimation_error"] = estimation_error(T_true, state.T_hat, delta)
        if test is not None and test.clean_labels is not None and len(test):
            row["clean_test_accuracy"] = accuracy(model, test.features, test.clean_labels)
        return row

    history = [record(0)]
    best = (history[0]["noisy_val_error"], 0, model.copy(), delta.copy())
    for epoch in range(stage.epochs):
        opt.learning_rate = stage.learning_rate_at(epoch)
        delta_opt.learning_rate = delta_lr * opt.learning_rate / stage.learning_rate
        for idx in minibatches(len(y), stage.batch_size, rng):
            try:
                _, grads, dT = model_objective(
                    kind, model, X[idx], y[idx], state.T_hat + delta,
                    weight_detach=config.weight_detach, need_T_grad=learn_delta,
                )
            except NumericError as exc:
                raise NumericError(f"revision aborted at epoch {epoch + 1}: {exc}") from exc
            opt.step(model.params(), grads)
            if learn_delta:
                delta_opt.step([delta], [dT])
                if state.enforce_valid:
                    delta[...] = project_to_valid(state.T_hat + delta) - state.T_hat
        history.append(record(epoch + 1))
        if improves(history[-1]["noisy_val_error"], best[0], config.selection_ties):
            best = (history[-1]["noisy_val_error"], epoch + 1, model.copy(), delta.copy())
    state.optimizer = opt
    return best[2], best[3], history, best[1]


# -- generalization bound ---------------------------------------------------


@dataclass
class BoundInputs:
    """Inputs of the reweighted-risk generalization bound.

    ``layer_norms`` are Frobenius-norm bounds on the weight matrices; the
    network depth is their count. Bias terms are outside the bound.
    """

    B: float
    C: int
    L: float
    M: float
    layer_norms: list[float]
    n: int
    delta: float

    def __post_init__(self):
        if min(self.B, self.C, self.L, self.M, self.n) <= 0 or not self.layer_norms:
            raise DomainError("B, C, L, M, n must be positive and layer_norms non-empty")
        if any(m <= 0 for m in self.layer_norms):
            raise DomainError("layer norm bounds must be positive")
        if not 0 < self.delta < 1:
            raise DomainError("delta must lie in (0, 1)")


def bound_terms(b: BoundInputs) -> tuple[float, float]:
    """The complexity term and the confidence term of the bound (natural logs)."""
    d = len(b.layer_norms)
    complexity = 2 * b.B * b.C * b.L * (math.sqrt(2 * d * math.log(2)) + 1) * math.prod(b.layer_norms)
    complexity /= math.sqrt(b.n)
    confidence = b.C * b.M * math.sqrt(math.log(1 / b.delta) / (2 * b.n))
    return complexity, confidence


def generalization_bound(b: BoundInputs) -> float:
    return sum(bound_terms(b))


def bound_inputs_for(model: MLP, X, *, n=None, delta=0.05, M=None, L=1.0) -> BoundInputs:
    """Bound inputs read off a trained network and its training features.

    ``M`` defaults to the largest cross-entropy the network attains on ``X``.
    """
    X = np.asarray(X, dtype=np.float64)
    B = float(np.linalg.norm(X, axis=1).max())
    if M is None:
        M = float(-np.log(predict_proba(model, X).min()))
    return BoundInputs(B, model.output_dim, L, M, model.frobenius_norms(), n or len(X), delta)


# -- pipeline ---------------------------------------------------------------


@dataclass
class PreparedData:
    train: Dataset
    val: Dataset
    test: Dataset | None
    T_true: np.ndarray | None
    removed: int = 0


@dataclass
class RunReport:
    method: str
    seed: int
    T_hat: np.ndarray | None
    delta_T: np.ndarray | None
    model: MLP
    history: list[dict]
    selected_epoch: int
    T_true: np.ndarray | None = None
    anchors: AnchorSet | None = None
    stage1_history: list[dict] = field(default_factory=list)
    init_history: list[dict] = field(default_factory=list)
    test_accuracy: float = float("nan")
    fingerprint: str = ""
    n_train: int = 0
    n_val: int = 0
    removed: int = 0

    @property
    def T_revised(self):
        if self.T_hat is None:
            return None
        return self.T_hat + self.delta_T

    def init_estimation_error(self):
        if self.T_true is None or self.T_hat is None:
            return None
        return estimation_error(self.T_true, self.T_hat)

    def final_estimation_error(self):
        if self.T_true is None or self.T_hat is None:
            return None
        return estimation_error(self.T_true, self.T_hat, self.delta_T)


def data_fingerprint(config: ExperimentConfig) -> str:
    """Hash of everything that defines the data distribution and noise.

    Runs with equal fingerprints are comparable; method, seeds and
    optimiser settings are deliberately excluded.
    """
    payload = {"data": config.to_dict()["data"], "noise": config.to_dict()["noise"],
               "anchor_removal": config.to_dict()["anchor_removal"]}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def true_transition(config: ExperimentConfig, num_classes: int) -> np.ndarray:
    if config.noise.kind == "symmetric":
        return build_symmetric(config.noise.rate, num_classes)
    T = validate_transition(config.noise.custom)
    if T.shape[0] != num_classes:
        raise ConfigError(f"custom transition is {T.shape[0]}x{T.shape[0]} but data has {num_classes} classes")
    return T


def gaussian_spec(config: ExperimentConfig) -> GaussianMixtureSpec:
    dc = config.data
    means = np.asarray(dc.means) if dc.means is not None else polygon_means(dc.num_classes, dc.radius, dc.dim)
    return GaussianMixtureSpec(means, dc.sigma, None if dc.priors is None else np.asarray(dc.priors))


def load_source(config: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset | None]:
    """Clean training pool and optional clean test set for one run seed."""
    dc = config.data
    if dc.source == "gaussian":
        spec = gaussian_spec(config)
        pool = generate_gaussian_mixture(spec, dc.n, derive_seed(seed, "data-pool"))
        test = generate_gaussian_mixture(spec, dc.n_test, derive_seed(seed, "data-test")) if dc.n_test else None
        return pool, test
    kind = "noisy" if dc.labels_are_noisy else "clean"
    if dc.source == "idx":
        pool = load_idx(dc.train_images, dc.train_labels)
        if dc.labels_are_noisy:
            pool = Dataset(pool.features, noisy_labels=pool.clean_labels)
        test = load_idx(dc.test_images, dc.test_labels) if dc.test_images and dc.test_labels else None
    else:
        pool = load_csv(dc.train_csv, label_kind=kind)
        test = load_csv(dc.test_csv) if dc.test_csv else None
    if dc.max_train is not None:
        pool = pool.subset(np.arange(min(dc.max_train, len(pool))))
    C = max(pool.num_classes, test.num_classes if test is not None else 0)
    pool = Dataset(pool.features, pool.clean_labels, pool.noisy_labels, num_classes=C)
    if test is not None:
        test = Dataset(test.features, test.clean_labels, num_classes=C)
    return pool, test


def anchor_scores(pool: Dataset, config: ExperimentConfig, seed: int) -> np.ndarray:
    """Clean posteriors used to locate likely anchors: the oracle when there
    is one, otherwise a network fitted to the clean labels."""
    if pool.posterior_oracle is not None:
        return pool.oracle_posteriors()
    clean = pool.with_noisy_labels(pool.clean_labels)
    tr, va = split_train_val(clean, config.train.val_fraction, derive_seed(seed, "anchor-split"))
    pm = train_noisy_posterior(tr, va, config.train.stage1, hidden=config.train.hidden,
                               seed=derive_seed(seed, "anchor-model"), bias=config.train.bias)
    return pm.predict(pool.features)


def prepare_data(config: ExperimentConfig, seed: int) -> PreparedData:
    pool, test = load_source(config, seed)
    removed = 0
    ar = config.anchor_removal
    if ar.mode != "none":
        scores = anchor_scores(pool, config, seed)
        before = len(pool)
        if ar.mode == "fraction":
            pool = remove_top_posterior(pool, ar.fraction, scores)
        else:
            pool = remove_above_posterior(pool, ar.cap, scores)
        removed = before - len(pool)
    if config.data.labels_are_noisy:
        T_true = None
    else:
        T_true = true_transition(config, pool.num_classes)
        pool = pool.with_noisy_labels(corrupt_labels(pool.clean_labels, T_true, derive_seed(seed, "noise")))
    train, val = split_train_val(pool, config.train.val_fraction, derive_seed(seed, "split"))
    return PreparedData(train, val, test, T_true, removed)


def run_t_revision(config: ExperimentConfig, seed: int | None = None, data: PreparedData | None = None) -> RunReport:
    """Run the configured method for one seed (default: the first config seed)."""
    seed = config.seeds[0] if seed is None else seed
    tc = config.train
    dtype = np.float32 if tc.float32 else np.float64
    stage = "data preparation"
    try:
        data = data or prepare_data(config, seed)
        train, val, test = data.train, data.val, data.test
        stage = "stage 1"
        pm = train_noisy_posterior(train, val, tc.stage1, hidden=tc.hidden, seed=derive_seed(seed, "stage1"),
                                   bias=tc.bias, dtype=dtype, ties=tc.selection_ties)
        common = dict(method=config.method, seed=seed, T_true=data.T_true, stage1_history=pm.history,
                      fingerprint=data_fingerprint(config), n_train=len(train), n_val=len(val),
                      removed=data.removed)
        if config.method == "unweighted":
            acc = accuracy(pm.model, test.features, test.clean_labels) if test is not None else float("nan")
            history = [{"epoch": h["epoch"], "noisy_val_error": h["noisy_val_error"],
                        "reweighted_train_risk": h["train_risk"]} for h in pm.history]
            errs = np.array([h["noisy_val_error"] for h in history])
            ties = np.flatnonzero(errs == errs.min())
            sel = int(ties[-1] if tc.selection_ties == "latest" else ties[0])
            return RunReport(T_hat=None, delta_T=None, model=pm.model, history=history, selected_epoch=sel,
                             test_accuracy=acc, **common)
        T_hat, anchors = estimate_transition(pm, train, tc.anchors_k)
        kind = LOSS_FOR_METHOD[config.method]
        stage = "stage 2 initialisation"
        init = stage2_initialize(train, val, T_hat, tc, kind=kind, seed=seed)
        stage = "stage 2 revision"
        state = RevisionState(T_hat, enforce_valid=tc.enforce_valid)
        model, delta, history, sel = stage2_revise(
            train, val, init.model, state, tc, kind=kind, learn_delta=config.method.endswith("-r"),
            seed=seed, T_true=data.T_true, test=test,
        )
    except TRevisionError as exc:
        exc.stage = stage
        exc.args = (f"{stage} failed: {exc}",)
        raise
    acc = accuracy(model, test.features, test.clean_labels) if test is not None else float("nan")
    return RunReport(T_hat=T_hat, delta_T=delta, model=model, history=history, selected_epoch=sel,
                     anchors=anchors, init_history=init.history, test_accuracy=acc, **common)
