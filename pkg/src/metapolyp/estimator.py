"""Scikit-learn style estimator wrapping the segmentation network.

``MetaPolypSegmenter`` exposes fit/predict/score plus get_params/set_params
so the model drops into sklearn pipelines and searches. Input extents are
inferred from the data at fit time; defaults are desk-scale (tiny channels,
a short schedule) so fitting on a laptop is practical.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .augment import AugmentConfig
from .data import Sample
from .metrics import dice
from .model import MetaPolyp, ModelConfig
from .train import TrainConfig, predict as _predict, train as _train
from .validation import check_image_batch, check_mask_batch


class MetaPolypSegmenter(BaseEstimator):
    """Binary image segmenter with the fit/predict interface.

    Parameters mirror the model and recipe configuration; see ModelConfig
    and TrainConfig. ``X`` is (n, H, W, 3) float in [-1, 1] with H, W
    divisible by 32; ``y`` is (n, H, W) or (n, H, W, 1) binary.
    """

    def __init__(self, stage_channels=(8, 16, 32, 64), blocks_per_stage=(1, 1, 1, 1),
                 mlp_ratio=2.0, heads=2, decoder_channels=8, transpose_kernel=2,
                 epochs=30, batch_size=4, lr=1e-3, alpha=0.7, threshold=0.5,
                 augment=False, seed=0):
        self.stage_channels = stage_channels
        self.blocks_per_stage = blocks_per_stage
        self.mlp_ratio = mlp_ratio
        self.heads = heads
        self.decoder_channels = decoder_channels
        self.transpose_kernel = transpose_kernel
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.alpha = alpha
        self.threshold = threshold
        self.augment = augment
        self.seed = seed

    def fit(self, X, y):
        X = check_image_batch(X)
        y = check_mask_batch(y, X.shape[1:3])
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        config = ModelConfig(
            input_hw=X.shape[1:3],
            stage_channels=tuple(self.stage_channels),
            blocks_per_stage=tuple(self.blocks_per_stage),
            mlp_ratio=self.mlp_ratio,
            heads=self.heads,
            decoder_channels=self.decoder_channels,
            transpose_kernel=self.transpose_kernel,
            seed=self.seed)
        train_cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            alpha=self.alpha,
            lr_max=self.lr,
            seed=self.seed,
            threshold=self.threshold,
            augment=AugmentConfig() if self.augment else None)
        samples = [Sample(f"fit-{i:05d}", X[i], y[i]) for i in range(len(X))]
        self.model_ = MetaPolyp(config)
        _, history = _train(self.model_, (samples, []), train_cfg)
        self.history_ = history
        self.input_hw_ = X.shape[1:3]
        return self

    def _require_fitted(self) -> MetaPolyp:
        if not hasattr(self, "model_"):
            raise NotFittedError("this MetaPolypSegmenter instance is not fitted yet; "
                                 "call fit before predicting")
        return self.model_

    def predict_proba(self, X) -> np.ndarray:
        """Probability maps, shape (n, H, W), values in (0, 1)."""
        model = self._require_fitted()
        X = check_image_batch(X)
        if X.shape[1:3] != self.input_hw_:
            raise ValueError(f"images have extents {X.shape[1:3]}, "
                             f"fitted for {self.input_hw_}")
        return np.stack([_predict(model, img, self.threshold)[1][:, :, 0]
                         for img in X])

    def predict(self, X) -> np.ndarray:
        """Binary masks, shape (n, H, W), thresholded at ``threshold``."""
        return (self.predict_proba(X) >= self.threshold).astype(np.float32)

    def score(self, X, y) -> float:
        """Mean Dice coefficient over the batch."""
        preds = self.predict(X)
        y = check_mask_batch(y, preds.shape[1:3])
        return float(np.mean([dice(preds[i], y[i, :, :, 0])
                              for i in range(len(preds))]))
