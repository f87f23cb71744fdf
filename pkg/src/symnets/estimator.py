"""scikit-learn compatible front end.

``SymNetClassifier`` takes labeled source data plus unlabeled target data at
``fit`` time::

    clf = SymNetClassifier(epochs=200, random_state=0)
    clf.fit(X_src, y_src, X_target=X_tgt)
    clf.predict(X_tgt)
    clf.transform(X_tgt)  # feature-extractor outputs
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .evaluation import reported_head
from .model import ModelConfig, forward_features, predict_proba
from .training import METHODS, ScheduleConfig, train


class SymNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Domain-adapted classifier trained with SymNets or one of its baselines.

    Parameters
    ----------
    method : str, default="symnet"
        Any training method (``symnet``, an ablation, or a baseline).
    hidden_dims : tuple of int, default=(64, 64)
    feature_dim : int, default=32
    epochs, batch_size, eta0, alpha, beta, gamma, momentum, classifier_lr_multiplier
        Optimizer and schedule settings.
    head : {"auto", "Cs", "Ct"}, default="auto"
        Classifier used by ``predict``; "auto" picks the one reported for ``method``.
    random_state : int, default=0
    """

    def __init__(self, method="symnet", hidden_dims=(64, 64), feature_dim=32, epochs=200,
                 batch_size=64, eta0=0.01, alpha=10.0, beta=0.75, gamma=10.0, momentum=0.9,
                 classifier_lr_multiplier=10.0, head="auto", random_state=0):
        self.method = method
        self.hidden_dims = hidden_dims
        self.feature_dim = feature_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.eta0 = eta0
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.momentum = momentum
        self.classifier_lr_multiplier = classifier_lr_multiplier
        self.head = head
        self.random_state = random_state

    def _schedule(self) -> ScheduleConfig:
        return ScheduleConfig(eta0=self.eta0, alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                              momentum=self.momentum, batch_size=self.batch_size,
                              classifier_lr_multiplier=self.classifier_lr_multiplier,
                              total_epochs=self.epochs, eval_every=max(1, self.epochs))

    def fit(self, X, y, X_target=None):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if X_target is None:
            raise ValueError("X_target (unlabeled target-domain samples) is required")
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        X_target = check_array(X_target, dtype=np.float64)
        if X_target.shape[1] != X.shape[1]:
            raise ValueError(f"X_target has {X_target.shape[1]} features, X has {X.shape[1]}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        K = self.classes_.size
        src = Dataset(X, y_idx, "source", K)
        # target labels are never read by training; placeholders satisfy Dataset
        tgt = Dataset(X_target, np.arange(X_target.shape[0]) % K, "target", K)
        mc = ModelConfig(X.shape[1], K, self.feature_dim, tuple(self.hidden_dims))
        self.report_, self.model_ = train(self.method, self._schedule(), src, tgt, self.random_state,
                                          model_config=mc)
        self.n_features_in_ = X.shape[1]
        return self

    def _head(self) -> str:
        head = reported_head(self.method) if self.head == "auto" else self.head
        if f"{head}.W" not in self.model_.params:
            raise ValueError(f"method {self.method!r} has no head {head!r}")
        return head

    def _check(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._check(X)
        return predict_proba(self.model_, X, self._head())

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def transform(self, X):
        X = self._check(X)
        return forward_features(self.model_, X)
