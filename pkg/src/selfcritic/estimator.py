"""scikit-learn style wrapper around a meta-trained checkpoint.

``fit`` stores one labelled support set; ``predict`` runs the full inner
loop (support steps, then critic steps on the very inputs being
predicted), so predictions are transductive in ``X``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .harness import Checkpoint, load_checkpoint
from .meta import predict as meta_predict


class SelfCritiqueClassifier(ClassifierMixin, BaseEstimator):
    """Few-shot classifier adapted per call on support and unlabelled inputs.

    Parameters
    ----------
    checkpoint : str, path or Checkpoint
        Meta-trained parameters and the config they were trained with.
    target_steps : int or None
        Overrides the number of critic steps; ``0`` gives plain MAML
        adaptation.
    """

    def __init__(self, checkpoint=None, target_steps=None):
        self.checkpoint = checkpoint
        self.target_steps = target_steps

    def _load(self) -> Checkpoint:
        if self.checkpoint is None:
            raise ValueError("SelfCritiqueClassifier needs a checkpoint")
        if isinstance(self.checkpoint, Checkpoint):
            return self.checkpoint
        return load_checkpoint(self.checkpoint)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        ckpt = self._load()
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) != ckpt.config.n_way:
            raise ValueError(f"support has {len(self.classes_)} classes, checkpoint is {ckpt.config.n_way}-way")
        dim = ckpt.params.theta["layer0.weight"].shape[0]
        if X.shape[1] != dim:
            raise ValueError(f"X has {X.shape[1]} features, checkpoint expects {dim}")
        config = ckpt.config
        if self.target_steps is not None:
            config = config.replace(n_target_steps=int(self.target_steps))
        if config.n_target_steps and ckpt.params.critic is None:
            raise ValueError("checkpoint has no critic; target_steps must be 0")
        self.config_ = config
        self.params_ = ckpt.params
        self.support_ = (X, codes)
        self.n_features_in_ = X.shape[1]
        return self

    def _logits(self, X) -> np.ndarray:
        check_is_fitted(self, "support_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        x_S, y_S = self.support_
        logits, _, _ = meta_predict(self.params_, x_S, y_S, X, self.config_)
        return logits

    def predict_proba(self, X) -> np.ndarray:
        z = self._logits(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        logits = self._logits(X)
        return self.classes_[np.argmax(logits, axis=1)]
