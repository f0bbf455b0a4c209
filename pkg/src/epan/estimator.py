"""scikit-learn style wrappers around the edge detector and the deblurring network."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .edges import CannyParams, canny
from .inference import deblur
from .losses import LossWeights
from .metrics import psnr
from .model import ModelConfig, build_model
from .trainer import EpochStats, TrainConfig, Trainer, make_sample
from .validation import check_image_batch, check_paired_batches


class CannyEdgeDetector(TransformerMixin, BaseEstimator):
    """Map (N, C, H, W) images to (N, 1, H, W) binary edge maps."""

    def __init__(self, sigma: float = 1.4, low_threshold: float = 0.1, high_threshold: float = 0.2,
                 soften_sigma: float | None = None):
        self.sigma = sigma
        self.low_threshold = low_threshold
        self.high_threshold = high_threshold
        self.soften_sigma = soften_sigma

    def _params(self) -> CannyParams:
        return CannyParams(self.sigma, self.low_threshold, self.high_threshold, self.soften_sigma)

    def fit(self, X, y=None):
        check_image_batch(X, channels=(1, 3))
        self.params_ = self._params()
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_image_batch(X, channels=(1, 3))
        return np.stack([canny(img, self.params_)[None] for img in X])


class EPANDeblurrer(BaseEstimator):
    """Train and apply an edge-guided deblurring network.

    ``fit(X, y)`` takes blurry images ``X`` and their sharp counterparts ``y``
    as (N, 3, H, W) arrays in [0, 1]; ``predict`` returns deblurred images of
    the same shape and ``score`` the mean PSNR in dB.
    """

    def __init__(self, variant: str = "epan", levels: int = 3, cdn_base_channels: int = 32,
                 epochs: int = 1500, max_steps: int | None = None, batch_size: int = 4, crop_size: int = 64,
                 lr_start: float = 1e-3, lr_end: float = 1e-6, schedule: str = "warped_log",
                 decay_power: float = 0.3, lambda_c: float = 4.0, lambda_e: float = 4.0,
                 flip_prob: float = 0.5, rotate_prob: float = 0.5, edge_detector: CannyEdgeDetector | None = None,
                 random_state: int = 0):
        self.variant = variant
        self.levels = levels
        self.cdn_base_channels = cdn_base_channels
        self.epochs = epochs
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.crop_size = crop_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.schedule = schedule
        self.decay_power = decay_power
        self.lambda_c = lambda_c
        self.lambda_e = lambda_e
        self.flip_prob = flip_prob
        self.rotate_prob = rotate_prob
        self.edge_detector = edge_detector
        self.random_state = random_state

    def _canny(self) -> CannyParams:
        det = self.edge_detector if self.edge_detector is not None else CannyEdgeDetector()
        return det._params()

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        model = ModelConfig(variant=self.variant, levels=self.levels, cdn_base_channels=self.cdn_base_channels)
        train = TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, lr_start=self.lr_start, lr_end=self.lr_end,
            decay_power=self.decay_power, schedule=self.schedule, crop_h=self.crop_size, crop_w=self.crop_size,
            flip_prob=self.flip_prob, rotate_prob=self.rotate_prob, seed=self.random_state,
            weights=LossWeights(self.lambda_c, self.lambda_e), max_steps=self.max_steps)
        train.check_model(model)
        return model, train

    def fit(self, X, y) -> EPANDeblurrer:
        X, y = check_paired_batches(X, y, channels=(3,))
        model_cfg, train_cfg = self._configs()
        canny_params = self._canny()
        samples = [make_sample(b, s, canny_params) for b, s in zip(X, y)]
        trainer = Trainer(build_model(model_cfg, seed=self.random_state), train_cfg)
        self.history_: list[EpochStats] = trainer.run(samples)
        self.network_ = trainer.network
        self.n_steps_ = trainer.steps
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = check_image_batch(X, channels=(3,))
        canny_params = self._canny()
        return np.stack([deblur(self.network_, img, canny_params) for img in X])

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of the predictions against ``y``."""
        X, y = check_paired_batches(X, y, channels=(3,))
        return float(np.mean([psnr(p, t) for p, t in zip(self.predict(X), y)]))

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "network_")
        save_checkpoint(path, self.network_, len(self.history_), meta={"estimator_params": _jsonable(self)})

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> EPANDeblurrer:
        ck = load_checkpoint(path)
        params = dict(ck.meta.get("estimator_params", {}))
        params.update(variant=ck.config.variant, levels=ck.config.levels,
                      cdn_base_channels=ck.config.cdn_base_channels)
        est = cls(**{k: v for k, v in params.items() if k != "edge_detector"})
        est.network_ = ck.network
        est.history_ = []
        est.n_steps_ = int(ck.meta.get("steps", 0))
        return est


def _jsonable(est: EPANDeblurrer) -> dict:
    return {k: v for k, v in est.get_params(deep=False).items() if k != "edge_detector"}


__all__ = ["CannyEdgeDetector", "EPANDeblurrer"]
