"""
Dense 2-D grids and the pixel operators every loss term is built from.

A grid is a 2-D `float64` numpy array. The image and mask types below only
validate and carry such arrays; every operator is a pure function.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .utils import InvalidGrid, require_odd_window


Grid2D = np.ndarray
ProbMask = np.ndarray
LabelMask = np.ndarray
BinaryMask = np.ndarray


def as_grid(values, name: str = "grid") -> Grid2D:
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise InvalidGrid(f"{name} must be a non-empty 2-D grid, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise InvalidGrid(f"{name} holds non-finite values")
    return grid


def as_prob_mask(values, name: str = "mask") -> ProbMask:
    grid = as_grid(values, name)
    if grid.min() < 0.0 or grid.max() > 1.0:
        raise InvalidGrid(f"{name} values must lie in [0, 1]")
    return grid


def as_label_mask(values, name: str = "labels") -> LabelMask:
    grid = as_grid(values, name)
    if not np.all((grid == 0.0) | (grid == 1.0)):
        raise InvalidGrid(f"{name} values must be exactly 0 or 1")
    return grid


as_binary_mask = as_label_mask


def require_same_shape(*grids: np.ndarray):
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise InvalidGrid(f"grid dimensions differ: {sorted(shapes)}")


@dataclass(frozen=True)
class RgbImage:
    r: Grid2D
    g: Grid2D
    b: Grid2D

    def __post_init__(self):
        for name in ("r", "g", "b"):
            object.__setattr__(self, name, as_prob_mask(getattr(self, name), name))
        require_same_shape(self.r, self.g, self.b)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "RgbImage":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3 or array.shape[2] != 3:
            raise InvalidGrid(f"expected an H x W x 3 array, got shape {array.shape}")
        return cls(array[:, :, 0], array[:, :, 1], array[:, :, 2])

    def to_array(self) -> np.ndarray:
        return np.stack([self.r, self.g, self.b], axis=-1)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.r.shape


@dataclass(frozen=True)
class HsvImage:
    h: Grid2D
    s: Grid2D
    v: Grid2D

    def __post_init__(self):
        h = as_grid(self.h, "h")
        if h.min() < 0.0 or h.max() >= 1.0:
            raise InvalidGrid("hue values must lie in [0, 1)")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "s", as_prob_mask(self.s, "s"))
        object.__setattr__(self, "v", as_prob_mask(self.v, "v"))
        require_same_shape(self.h, self.s, self.v)

    def to_array(self) -> np.ndarray:
        return np.stack([self.h, self.s, self.v], axis=-1)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.h.shape


def rgb_to_hsv(img: RgbImage) -> HsvImage:
    r, g, b = img.r, img.g, img.b
    v = np.maximum(np.maximum(r, g), b)
    delta = v - np.minimum(np.minimum(r, g), b)
    chromatic = delta > 0.0
    safe = np.where(chromatic, delta, 1.0)

    sector = np.where(
        v == r,
        np.mod((g - b) / safe, 6.0),
        np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(chromatic, sector / 6.0, 0.0)
    # rounding can land exactly on 1.0 for hues just below red
    h = np.where(h >= 1.0, 0.0, h)
    s = np.where(v > 0.0, delta / np.where(v > 0.0, v, 1.0), 0.0)
    return HsvImage(h, s, v)


def hsv_to_rgb(hsv: HsvImage) -> RgbImage:
    h, s, v = hsv.h, hsv.s, hsv.v
    scaled = h * 6.0
    sector = np.floor(scaled).astype(int) % 6
    f = scaled - np.floor(scaled)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)

    choices = [
        (v, t, p),
        (q, v, p),
        (p, v, t),
        (p, q, v),
        (t, p, v),
        (v, p, q),
    ]
    channels = [
        np.select([sector == i for i in range(6)], [c[k] for c in choices])
        for k in range(3)
    ]
    return RgbImage(*(np.clip(c, 0.0, 1.0) for c in channels))


def spatial_gradient(mask: ProbMask) -> Tuple[Grid2D, Grid2D]:
    """Forward differences; the last column of gx and last row of gy are 0."""
    gx = np.zeros_like(mask)
    gy = np.zeros_like(mask)
    gx[:, :-1] = mask[:, 1:] - mask[:, :-1]
    gy[:-1, :] = mask[1:, :] - mask[:-1, :]
    return gx, gy


def spatial_gradient_adjoint(gx_bar: Grid2D, gy_bar: Grid2D) -> Grid2D:
    """Pull upstream gradients on (gx, gy) back onto the mask."""
    out = np.zeros_like(gx_bar)
    out[:, 1:] += gx_bar[:, :-1]
    out[:, :-1] -= gx_bar[:, :-1]
    out[1:, :] += gy_bar[:-1, :]
    out[:-1, :] -= gy_bar[:-1, :]
    return out


def _windows(grid: Grid2D, window: int, fill: float) -> np.ndarray:
    radius = window // 2
    padded = np.pad(grid, radius, mode="constant", constant_values=fill)
    return sliding_window_view(padded, (window, window))


def window_counts(shape: Tuple[int, int], window: int) -> Grid2D:
    """Number of in-bounds pixels under each clipped window."""
    require_odd_window(window)
    radius = window // 2

    def axis_counts(n):
        idx = np.arange(n)
        return np.minimum(idx + radius, n - 1) - np.maximum(idx - radius, 0) + 1

    return np.outer(axis_counts(shape[0]), axis_counts(shape[1])).astype(np.float64)


def window_sum(grid: Grid2D, window: int) -> Grid2D:
    require_odd_window(window)
    return _windows(grid, window, 0.0).sum(axis=(-2, -1))


def local_mean(grid: Grid2D, window: int) -> Grid2D:
    """Mean over the clipped window centered on each pixel."""
    require_odd_window(window)
    return window_sum(grid, window) / window_counts(grid.shape, window)


def neighborhood_variance(mask: ProbMask, window: int) -> Grid2D:
    """
    Population variance of the mask over the clipped window centered on each
    pixel. Neighborhoods holding a single value report exactly 0.
    """
    require_odd_window(window)
    views = _windows(mask, window, np.nan)
    variance = np.nanvar(views, axis=(-2, -1))
    constant = np.nanmax(views, axis=(-2, -1)) == np.nanmin(views, axis=(-2, -1))
    return np.where(constant, 0.0, np.maximum(variance, 0.0))
