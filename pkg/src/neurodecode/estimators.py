"""Scikit-learn compatible wrappers around the regression and classifier networks.

Both estimators take ``X`` as a list of T_i x D arrays (variable length
allowed). They compose with ``sklearn.base.clone`` and ``get_params``; they
are not meant for sklearn's array-based cross-validation helpers, since the
inputs are ragged sequences.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .acoustic import TARGET_KINDS
from .errors import ParameterError
from .models import (REGIMES, TrainConfig, build_classifier, build_regression_model, evaluate_accuracy,
                     fit_model, predict_proba, predict_targets, transplant_weights)
from .validation import check_sequences


class EEGAcousticRegressor(RegressorMixin, BaseEstimator):
    """Frame-wise EEG -> acoustic feature regression (GRU, dropout, GRU, linear head)."""

    def __init__(self, target_kind="mfcc+gfcc", hidden=(256, 128), dropout=0.1, epochs=2000,
                 batch_size=100, lr=1e-3, decimate=1, seed=0):
        self.target_kind = target_kind
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.decimate = decimate
        self.seed = seed

    def _config(self):
        return TrainConfig.regression(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                                      decimate=self.decimate, lr=self.lr)

    def fit(self, X, Y, X_val=None, Y_val=None):
        if self.target_kind not in TARGET_KINDS:
            raise ParameterError(f"unknown target_kind {self.target_kind!r}")
        X = check_sequences(X)
        self.n_features_in_ = X[0].shape[1]
        self.model_ = build_regression_model(self.n_features_in_, self.target_kind, tuple(self.hidden),
                                             self.dropout, self.seed)
        self.report_ = fit_model(self.model_, X, Y, self._config(), X_val, Y_val)
        return self

    def predict(self, X):
        """Per-frame predictions in target units, on the (decimated) input clock."""
        check_is_fitted(self, "model_")
        return predict_targets(self.model_, X, self.batch_size)

    def score(self, X, Y, sample_weight=None):
        """Coefficient of determination over all frames and target columns."""
        preds = np.concatenate(self.predict(X))
        k = self.model_.meta.get("decimate", 1)
        truth = np.concatenate([y[::k] for y in check_sequences(Y, name="Y")])
        ss_res = np.sum((truth - preds) ** 2)
        ss_tot = np.sum((truth - truth.mean(axis=0)) ** 2)
        return float(1.0 - ss_res / ss_tot)


class SpeechClassifier(ClassifierMixin, BaseEstimator):
    """GRU + TCN sequence classifier; optionally starts from a fitted regressor's GRUs.

    With ``init_regime`` other than ``"random"``, ``pretrained`` must be a
    fitted :class:`EEGAcousticRegressor` trained on the matching target kind;
    its GRU weights are copied in and frozen before training.
    """

    def __init__(self, n_labels=None, init_regime="random", pretrained=None, hidden=(256, 128),
                 tcn_filters=32, kernel_size=3, dilation=1, dropout=0.1, epochs=1000,
                 batch_size=100, lr=1e-3, decimate=1, seed=0):
        self.n_labels = n_labels
        self.init_regime = init_regime
        self.pretrained = pretrained
        self.hidden = hidden
        self.tcn_filters = tcn_filters
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.decimate = decimate
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        if self.init_regime not in REGIMES:
            raise ParameterError(f"unknown init_regime {self.init_regime!r}")
        X = check_sequences(X)
        y = np.asarray(y)
        n_labels = self.n_labels or int(y.max()) + 1
        self.classes_ = np.arange(n_labels)
        self.n_features_in_ = X[0].shape[1]
        self.model_ = build_classifier(self.n_features_in_, n_labels, tuple(self.hidden), self.tcn_filters,
                                       self.kernel_size, self.dilation, self.dropout, self.seed)
        if self.init_regime != "random":
            if self.pretrained is None:
                raise ParameterError(f"init_regime {self.init_regime!r} needs a fitted pretrained regressor")
            check_is_fitted(self.pretrained, "model_")
            if self.pretrained.target_kind != self.init_regime:
                raise ParameterError(
                    f"pretrained regressor predicts {self.pretrained.target_kind}, regime is {self.init_regime}")
            transplant_weights(self.pretrained.model_, self.model_)
        cfg = TrainConfig.classifier(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                                     decimate=self.decimate, lr=self.lr)
        self.report_ = fit_model(self.model_, X, y, cfg, X_val, y_val)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, X, self.batch_size)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y, sample_weight=None):
        check_is_fitted(self, "model_")
        return evaluate_accuracy(self.model_, X, y, self.batch_size)
