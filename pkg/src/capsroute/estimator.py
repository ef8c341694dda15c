"""scikit-learn style wrapper around :class:`CapsNet` and :func:`train`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .analysis import primary_activations
from .config import RunConfig
from .data import Dataset
from .layers import CapsNet
from .training import predict_labels, prepare_images, train

__all__ = ["CapsNetClassifier"]


class CapsNetClassifier(ClassifierMixin, BaseEstimator):
    """Capsule network classifier.

    ``X`` is ``[N, C, H, W]``, ``[N, H, W]`` (one channel) or flattened
    ``[N, C*H*W]``, with pixels in [0, 1].  ``y`` is either ``[N]`` class
    labels or ``[N, k]`` label sets; in the latter case :meth:`predict`
    returns the ``k`` highest-scoring classes per row, sorted.

    ``transform`` returns primary capsule lengths, one column per capsule.
    """

    def __init__(self, preset="desk_mnist", activation="squash", pa_n=6, ci_bar=6.5,
                 prim_channels=None, routing_iters=3, max_steps=1000, batch_size=None,
                 learning_rate=1e-3, weight_decay=0.0, dropout_keep=1.0, seed=0):
        self.preset = preset
        self.activation = activation
        self.pa_n = pa_n
        self.ci_bar = ci_bar
        self.prim_channels = prim_channels
        self.routing_iters = routing_iters
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.dropout_keep = dropout_keep
        self.seed = seed

    def _make_config(self, num_classes: int) -> RunConfig:
        overrides = dict(
            activation=self.activation, pa_n=self.pa_n, ci_bar=self.ci_bar,
            routing_iters=self.routing_iters, max_steps=self.max_steps,
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            dropout_keep=self.dropout_keep, seed=self.seed, num_classes=num_classes,
            log_every=max(1, self.max_steps), checkpoint_every=max(1, self.max_steps),
        )
        if self.prim_channels is not None:
            overrides["prim_channels"] = self.prim_channels
        if self.batch_size is not None:
            overrides["batch_size"] = self.batch_size
        return RunConfig.from_preset(self.preset, **overrides)

    def _images(self, X, config: RunConfig) -> np.ndarray:
        X = check_array(X, allow_nd=True, dtype=np.float64)
        c, s = config.input_channels, config.input_size
        if X.ndim == 2:
            if X.shape[1] != c * s * s:
                raise ValueError(f"flattened input needs {c * s * s} features, got {X.shape[1]}")
            X = X.reshape(-1, c, s, s)
        elif X.ndim == 3:
            X = X[:, None]
        if X.shape[1:] != (c, s, s):
            raise ValueError(f"expected images of shape [N, {c}, {s}, {s}], got {X.shape}")
        if X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        return X

    def fit(self, X, y):
        y = np.asarray(y)
        if y.ndim not in (1, 2):
            raise ValueError("y must be [N] labels or [N, k] label sets")
        self.classes_ = np.unique(y)
        self.multilabel_ = y.ndim == 2
        self.n_labels_ = y.shape[1] if self.multilabel_ else 1
        config = self._make_config(len(self.classes_))
        images = self._images(X, config)
        if len(images) != len(y):
            raise ValueError(f"X has {len(images)} samples but y has {len(y)}")
        encoded = np.searchsorted(self.classes_, y)
        data = Dataset(images, encoded, "train", len(self.classes_), "estimator")
        result = train(config, data)
        self.model_ = result.model
        self.config_ = config
        self.loss_curve_ = result.losses
        self.n_features_in_ = int(np.prod(images.shape[1:]))
        return self

    def decision_function(self, X) -> np.ndarray:
        """Class activations ``[N, n_classes]``."""
        check_is_fitted(self, "model_")
        images = prepare_images(self._images(X, self.config_), self.config_)
        return self.model_.predict_scores(images)

    def predict(self, X) -> np.ndarray:
        idx = predict_labels(self.decision_function(X), self.n_labels_)
        return self.classes_[idx]

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return primary_activations(self.model_, self._images(X, self.config_))

    def score(self, X, y, sample_weight=None) -> float:
        y = np.asarray(y)
        if not self.multilabel_:
            return super().score(X, y, sample_weight)
        hits = np.all(self.predict(X) == np.sort(y, axis=1), axis=1)
        return float(np.average(hits, weights=sample_weight))

    @property
    def network(self) -> CapsNet:
        check_is_fitted(self, "model_")
        return self.model_
