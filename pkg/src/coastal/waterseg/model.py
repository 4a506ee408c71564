"""
A per-pixel logistic segmenter over a fixed 13-feature stack.

The model is deliberately linear in its features: every gradient of the
robust objective with respect to its weights is a chain rule through one
sigmoid, which keeps the whole training path checkable by finite differences.
"""
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np
from scipy.special import expit

from .grids import Grid2D, HsvImage, ProbMask, RgbImage, local_mean, rgb_to_hsv
from .losses import HsvPriorParams
from .utils import InvalidParameter, deserialize, serialize


CHANNELS = ("r", "g", "b", "h", "s", "v")
FEATURE_NAMES: Tuple[str, ...] = (
    CHANNELS + tuple(f"mean3_{c}" for c in CHANNELS) + ("bias",)
)
FEATURE_COUNT = len(FEATURE_NAMES)
BIAS = FEATURE_COUNT - 1


@dataclass(frozen=True)
class FeatureStack:
    values: np.ndarray
    hsv: HsvImage

    @classmethod
    def from_image(cls, image: RgbImage) -> "FeatureStack":
        hsv = rgb_to_hsv(image)
        planes = [image.r, image.g, image.b, hsv.h, hsv.s, hsv.v]
        planes += [local_mean(p, 3) for p in planes]
        planes.append(np.ones_like(image.r))
        return cls(np.stack(planes, axis=-1), hsv)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape[:2]


@dataclass(frozen=True)
class ToySegmenter:
    theta: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_COUNT))
    hsv_params: HsvPriorParams = field(default_factory=HsvPriorParams)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.shape != (FEATURE_COUNT,) or not np.all(np.isfinite(theta)):
            raise InvalidParameter(f"theta must hold {FEATURE_COUNT} finite weights")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def seeded(cls, seed: int, scale: float = 0.1, **kwargs) -> "ToySegmenter":
        rng = np.random.default_rng(seed)
        return cls(theta=scale * rng.standard_normal(FEATURE_COUNT), **kwargs)

    def with_parameters(self, theta: np.ndarray, hsv_coefficients: np.ndarray) -> "ToySegmenter":
        return replace(
            self, theta=theta, hsv_params=self.hsv_params.with_coefficients(hsv_coefficients)
        )

    @property
    def parameters(self) -> np.ndarray:
        """theta followed by (alpha_h, alpha_s, alpha_v, beta)."""
        return np.concatenate([self.theta, self.hsv_params.coefficients])

    def predict_features(self, features: FeatureStack) -> ProbMask:
        return expit(features.values @ self.theta)

    def to_json(self) -> str:
        return serialize(self)

    @classmethod
    def from_json(cls, text: str) -> "ToySegmenter":
        return deserialize(text, cls)


def predict(model: ToySegmenter, image: RgbImage) -> ProbMask:
    return model.predict_features(FeatureStack.from_image(image))


def theta_gradient(features: FeatureStack, mask: ProbMask, grad_mask: Grid2D) -> np.ndarray:
    """Chain rule from dL/dM through m = sigmoid(theta . phi) onto theta."""
    d_score = grad_mask * mask * (1.0 - mask)
    return np.tensordot(d_score, features.values, axes=([0, 1], [0, 1]))
