"""Multinomial logistic regression on node embeddings and the evaluation protocol."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import SplitError, ValidationError
from .metrics import f1_score


class LogisticRegressionGD(ClassifierMixin, BaseEstimator):
    """Softmax regression fit by full-batch accelerated gradient descent.

    Features are standardised with training statistics. The objective is the
    mean cross-entropy plus ``l2 / 2 * ||W||^2`` (the bias is not penalised).
    Iteration stops once the gradient norm drops to ``tol`` or after
    ``max_iter`` steps.
    """

    def __init__(self, l2=1e-2, max_iter=5000, tol=1e-5, random_state=None):
        self.l2 = l2
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _design(self, X):
        Xs = (np.asarray(X, dtype=np.float64) - self.mean_) / self.scale_
        return np.hstack([Xs, np.ones((Xs.shape[0], 1))])

    def _objective(self, W, X, Y):
        logits = X @ W
        loss = np.mean(logsumexp(logits, axis=1) - np.sum(logits * Y, axis=1))
        grad = X.T @ (softmax(logits, axis=1) - Y) / X.shape[0]
        grad[:-1] += self.l2 * W[:-1]
        return loss + 0.5 * self.l2 * np.sum(W[:-1] ** 2), grad

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2 or len(X) != len(y):
            raise ValidationError("X must be 2-d with one row per label")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValidationError("need at least two classes")
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 1e-12, scale, 1.0)
        Xd = self._design(X)
        m, p = Xd.shape
        k = len(self.classes_)
        Y = np.zeros((m, k))
        Y[np.arange(m), y_idx] = 1.0
        lipschitz = 0.5 * np.linalg.norm(Xd, 2) ** 2 / m + self.l2
        step = 1.0 / lipschitz
        rng = np.random.default_rng(self.random_state)
        W = 0.01 * rng.standard_normal((p, k))
        V, t = W.copy(), 1.0
        for it in range(1, self.max_iter + 1):
            _, grad = self._objective(V, Xd, Y)
            if np.linalg.norm(grad) <= self.tol:
                W = V
                break
            W_next = V - step * grad
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            if np.sum(grad * (W_next - W)) > 0:
                # gradient restart: momentum points uphill, drop it
                t_next = 1.0
                V = W_next.copy()
            else:
                V = W_next + ((t - 1.0) / t_next) * (W_next - W)
            W, t = W_next, t_next
        self.coef_ = W
        self.n_iter_ = it
        self.grad_norm_ = float(np.linalg.norm(self._objective(W, Xd, Y)[1]))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "coef_")
        return softmax(self._design(X) @ self.coef_, axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def stratified_split(labels, train_fraction=0.1, seed=0, exclude=None):
    """Per-class random split with at least one training node per class.

    Nodes in ``exclude`` are never placed in the training set.
    """
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train fraction must lie in (0, 1), got {train_fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    banned = np.zeros(len(labels), dtype=bool)
    if exclude is not None:
        banned[np.asarray(list(exclude), dtype=np.int64)] = True
    train = []
    for c in np.unique(labels):
        members = np.flatnonzero((labels == c) & ~banned)
        if len(members) == 0:
            raise SplitError(f"class {c} has no node eligible for training")
        take = max(1, int(round(train_fraction * np.sum(labels == c))))
        train.append(rng.permutation(members)[:take])
    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(len(labels)), train)
    return train, test


def train_logreg(Z, labels, train_fraction=0.1, seed=0, l2=1e-2, exclude=None):
    """Fit on a stratified split; returns ``(classifier, train_idx, test_idx)``."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValidationError("need at least two classes")
    train, test = stratified_split(labels, train_fraction, seed, exclude)
    clf = LogisticRegressionGD(l2=l2, random_state=seed).fit(Z[train], labels[train])
    return clf, train, test


def evaluate_node_classification(Z, labels, train_fraction=0.1, n_seeds=10, seed=0, l2=1e-2):
    """Micro/macro F1 on the held-out nodes, averaged over ``n_seeds`` splits."""
    micro, macro = [], []
    for s in range(seed, seed + n_seeds):
        clf, _, test = train_logreg(Z, labels, train_fraction, s, l2)
        pred = clf.predict(Z[test])
        micro.append(f1_score(pred, labels[test], "micro"))
        macro.append(f1_score(pred, labels[test], "macro"))
    return {
        "micro_f1": float(np.mean(micro)),
        "macro_f1": float(np.mean(macro)),
        "micro_f1_per_seed": micro,
        "macro_f1_per_seed": macro,
    }
