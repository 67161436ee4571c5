"""scikit-learn compatible wrapper around the model and training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from .data import TimeSeriesDataset
from .model import ModelConfig, ModuleKind, build_model
from .training import TrainConfig, train


def check_panel(X, ensure_min_samples=1):
    """Validate a 3-d panel ``[n_samples, n_channels, n_timepoints]``.

    A 2-d array is read as a univariate panel.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError(f"expected a 3-d array [n_samples, n_channels, n_timepoints], got {X.ndim}-d")
    if X.shape[0] < ensure_min_samples:
        raise ValueError(f"found {X.shape[0]} samples, need at least {ensure_min_samples}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinity")
    return X


class FourierTransformerClassifier(ClassifierMixin, BaseEstimator):
    """Fourier-Transformer classifier for equal-length multivariate series.

    Parameters mirror :class:`ModelConfig` and :class:`TrainConfig`;
    ``remove`` lists module codes (``"MHA"``, ``"FFT"``, ...) to drop.
    Inputs follow the sktime numpy layout ``[n_samples, n_channels, n_timepoints]``.

    Examples
    --------
    >>> from fourier_mts.data import synth_dataset
    >>> tr, te = synth_dataset(0, n_classes=2, length=16, n_per_class=10, difficulty=0.0)
    >>> clf = FourierTransformerClassifier(max_epochs=5).fit(tr.X, tr.y)
    >>> clf.predict(te.X).shape
    (20,)
    """

    def __init__(self, embed_dim=16, num_heads=4, layers_fft=1, layers_ifft=1, layers_mha=1,
                 layers_ffn=1, remove=(), dropout=0.1, ffn_hidden_dim=32, embed_kernel=3,
                 spectral_norm="ortho", learning_rate=1e-3, batch_size=8, max_epochs=50,
                 val_fraction=0.2, early_stop_patience=None, random_state=0):
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.layers_fft = layers_fft
        self.layers_ifft = layers_ifft
        self.layers_mha = layers_mha
        self.layers_ffn = layers_ffn
        self.remove = remove
        self.dropout = dropout
        self.ffn_hidden_dim = ffn_hidden_dim
        self.embed_kernel = embed_kernel
        self.spectral_norm = spectral_norm
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.val_fraction = val_fraction
        self.early_stop_patience = early_stop_patience
        self.random_state = random_state

    def _model_config(self, n_channels, n_timepoints, n_classes):
        cfg = ModelConfig(
            input_dims=n_channels,
            seq_len=n_timepoints,
            num_classes=n_classes,
            embed_dim=self.embed_dim,
            num_heads=self.num_heads,
            layers_fft=self.layers_fft,
            layers_ifft=self.layers_ifft,
            layers_mha=self.layers_mha,
            layers_ffn=self.layers_ffn,
            dropout=self.dropout,
            ffn_hidden_dim=self.ffn_hidden_dim,
            embed_kernel=self.embed_kernel,
            spectral_norm=self.spectral_norm,
        )
        return cfg.without(*(ModuleKind(m) for m in self.remove)).validate()

    def fit(self, X, y):
        X = check_panel(X, ensure_min_samples=2)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} samples but y has {y.shape[0]}")
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        self.n_timepoints_ = X.shape[2]
        self.config_ = self._model_config(X.shape[1], X.shape[2], len(self.classes_))
        tcfg = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            seed=self.random_state,
            val_fraction=self.val_fraction if len(y) >= 5 else 0.0,
            early_stop_patience=self.early_stop_patience,
        )
        ds = TimeSeriesDataset("fit", X, y_idx, tuple(str(c) for c in self.classes_))
        model = build_model(self.config_, self.random_state)
        self.model_, self.history_ = train(model, ds, tcfg)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "model_")
        X = check_panel(X)
        if X.shape[1:] != (self.n_features_in_, self.n_timepoints_):
            raise ValueError(
                f"X has shape {X.shape[1:]} per sample, expected "
                f"{(self.n_features_in_, self.n_timepoints_)}"
            )
        return np.ascontiguousarray(X.transpose(0, 2, 1))

    def predict_proba(self, X):
        return self.model_.predict_proba(self._check_X(X))

    def decision_function(self, X):
        return self.model_.forward(self._check_X(X), training=False).data

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def transform(self, X):
        """Class probabilities, so the estimator can sit mid-pipeline."""
        return self.predict_proba(X)
