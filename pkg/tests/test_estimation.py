import numpy as np
import pytest

from trevision.config import StageConfig
from trevision.datasets import Dataset, GaussianMixtureSpec, generate_gaussian_mixture, split_train_val
from trevision.errors import NumericError, PreconditionError
from trevision.estimation import (
    AnchorSet,
    estimate_transition,
    init_transition,
    select_pseudo_anchors,
    train_noisy_posterior,
)
from trevision.noise import build_symmetric, estimation_error

T_ASYM = np.array([[0.7, 0.2, 0.1], [0.05, 0.8, 0.15], [0.1, 0.25, 0.65]])


def separable(n=600, seed=0):
    spec = GaussianMixtureSpec(np.array([[3.0, 0.0], [-3.0, 0.0]]), 0.7)
    ds = generate_gaussian_mixture(spec, n, seed)
    return split_train_val(ds.with_noisy_labels(ds.clean_labels), 0.1, seed)


def with_anchors(clean_posteriors):
    """Prepend one exact anchor per class to a matrix of clean posteriors."""
    C = clean_posteriors.shape[1]
    return np.vstack([np.eye(C), clean_posteriors])


class TestTrainNoisyPosterior:
    def test_separable_learns(self):
        tr, va = separable()
        pm = train_noisy_posterior(tr, va, StageConfig(epochs=50, learning_rate=0.05, milestones=[40]), seed=0)
        assert pm.best_val_error < 0.02

    def test_zero_epochs(self):
        tr, va = separable(n=100)
        pm = train_noisy_posterior(tr, va, StageConfig(epochs=0), seed=3)
        assert pm.trained_epochs == 0
        assert len(pm.history) == 1 and pm.history[0]["epoch"] == 0
        assert pm.best_val_error == pm.history[0]["noisy_val_error"]

    def test_deterministic(self):
        tr, va = separable(n=200)
        stage = StageConfig(epochs=5, learning_rate=0.05)
        a = train_noisy_posterior(tr, va, stage, seed=9)
        b = train_noisy_posterior(tr, va, stage, seed=9)
        assert a.best_val_error == b.best_val_error
        for p, q in zip(a.model.params(), b.model.params()):
            np.testing.assert_array_equal(p, q)

    def test_selected_snapshot_has_minimum_error(self):
        tr, va = separable(n=300, seed=2)
        pm = train_noisy_posterior(tr, va, StageConfig(epochs=8, learning_rate=0.05), seed=1)
        assert pm.best_val_error == min(h["noisy_val_error"] for h in pm.history)

    def test_needs_noisy_labels(self):
        ds = Dataset(np.zeros((4, 2)), clean_labels=[0, 1, 0, 1])
        with pytest.raises(PreconditionError):
            train_noisy_posterior(ds, ds, StageConfig(epochs=1))


class TestSelectAnchors:
    def test_oracle_argmax(self):
        P = np.random.default_rng(0).dirichlet(np.ones(3), size=50)
        a = select_pseudo_anchors(P, 1)
        for i in range(3):
            assert P[a.indices[i, 0], i] == P[:, i].max()

    def test_k_too_large(self):
        with pytest.raises(PreconditionError):
            select_pseudo_anchors(np.full((3, 2), 0.5), 4)

    def test_empty(self):
        with pytest.raises(PreconditionError):
            select_pseudo_anchors(np.zeros((0, 2)), 1)

    def test_ties_lower_index(self):
        P = np.array([[0.2, 0.8], [0.9, 0.1], [0.9, 0.1], [0.2, 0.8]])
        a = select_pseudo_anchors(P, 1)
        np.testing.assert_array_equal(a.indices[:, 0], [1, 0])

    def test_top_k_order(self):
        P = np.array([[0.1, 0.9], [0.7, 0.3], [0.8, 0.2], [0.6, 0.4]])
        np.testing.assert_array_equal(select_pseudo_anchors(P, 2).indices, [[2, 1], [0, 3]])

    def test_csv(self, tmp_path):
        AnchorSet(np.array([[1], [0]]), np.array([[0.9], [0.8]])).to_csv(tmp_path / "a.csv")
        assert (tmp_path / "a.csv").read_text().splitlines() == ["class,rank,index,score", "0,0,1,0.9", "1,0,0,0.8"]


class TestInitTransition:
    def test_oracle_true_anchors_exact(self):
        rng = np.random.default_rng(1)
        clean = with_anchors(rng.dirichlet(np.ones(3) * 0.5, size=40))
        noisy = clean @ T_ASYM
        T_hat = init_transition(noisy, select_pseudo_anchors(noisy, 1))
        # each column of T_ASYM peaks on the diagonal, so the anchors maximise the noisy posteriors
        assert estimation_error(T_ASYM, T_hat) < 1e-9

    def test_pseudo_anchor_mixes_rows(self):
        # clean posterior L e_i at the pseudo-anchor gives row i = sum_k L[k, i] T[k, :]
        L = np.array([[0.85, 0.1, 0.05], [0.1, 0.8, 0.1], [0.05, 0.1, 0.85]])  # columns are clean posteriors
        noisy = L.T @ T_ASYM  # row i is the noisy posterior of the anchor for class i
        anchors = AnchorSet(np.arange(3)[:, None], np.zeros((3, 1)))
        T_hat = init_transition(noisy, anchors)
        expected = np.stack([sum(L[k, i] * T_ASYM[k] for k in range(3)) for i in range(3)])
        np.testing.assert_allclose(T_hat, expected, rtol=0, atol=1e-12)

    def test_two_class_hand_value(self):
        T = build_symmetric(0.2, 2)
        noisy = np.array([[0.9, 0.1], [0.1, 0.9]]) @ T
        T_hat = init_transition(noisy, AnchorSet(np.array([[0], [1]]), np.zeros((2, 1))))
        np.testing.assert_allclose(T_hat[0], [0.74, 0.26], rtol=0, atol=1e-15)

    def test_error_grows_as_anchors_weaken(self):
        T = build_symmetric(0.2, 3)
        errors = []
        for p in (0.99, 0.9, 0.8):
            clean = np.full((3, 3), (1 - p) / 2)
            np.fill_diagonal(clean, p)
            noisy = clean @ T
            errors.append(estimation_error(T, init_transition(noisy, select_pseudo_anchors(noisy, 1))))
        assert 0 < errors[0] < errors[1] < errors[2]

    def test_rows_valid(self):
        P = np.random.default_rng(2).dirichlet(np.ones(4), size=30)
        T_hat = init_transition(P, select_pseudo_anchors(P, 3))
        np.testing.assert_allclose(T_hat.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(T_hat >= 0)

    def test_projection_error_propagates(self):
        with pytest.raises(NumericError):
            init_transition(np.array([[-1.0, -1.0], [0.5, 0.5]]), AnchorSet(np.array([[0], [1]]), np.zeros((2, 1))))


def test_estimate_transition_from_model():
    tr, va = separable(n=200)
    pm = train_noisy_posterior(tr, va, StageConfig(epochs=3, learning_rate=0.05), seed=0)
    T_hat, anchors = estimate_transition(pm, tr, k=2)
    assert T_hat.shape == (2, 2) and anchors.indices.shape == (2, 2)
    np.testing.assert_allclose(T_hat.sum(axis=1), 1.0, atol=1e-12)
