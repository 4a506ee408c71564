"""
Inference-time mask refinement: threshold, open/close, area filters and
column connectivity, applied in that order until the mask stops changing.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .common import MaskPipeline, MaskStep, Recorder
from .grids import BinaryMask, LabelMask, ProbMask, as_binary_mask, as_prob_mask
from .grids import require_same_shape
from .morphology import binarize, closing, column_runs, connected_components_2d, opening
from .utils import InvalidParameter, require_odd_window, require_open_unit


@dataclass(frozen=True)
class PostprocConfig:
    threshold: float = 0.5
    open_close_k: int = 3
    min_sea_area: int = 25
    min_land_area: int = 25
    enforce_column_connectivity: bool = True
    connectivity: int = 4
    max_passes: int = 16

    def __post_init__(self):
        require_open_unit(self.threshold)
        require_odd_window(self.open_close_k, "open_close_k")
        if self.min_sea_area < 1 or self.min_land_area < 1:
            raise InvalidParameter("minimum areas must be >= 1")
        if self.connectivity not in (4, 8):
            raise InvalidParameter(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.max_passes < 1:
            raise InvalidParameter("max_passes must be >= 1")

    @classmethod
    def disabled(cls, threshold: float = 0.5) -> "PostprocConfig":
        return cls(
            threshold=threshold,
            open_close_k=1,
            min_sea_area=1,
            min_land_area=1,
            enforce_column_connectivity=False,
        )


def remove_small_components(mask: BinaryMask, min_area: int, connectivity: int) -> BinaryMask:
    labeling = connected_components_2d(mask, connectivity)
    keep = np.zeros(labeling.component_count + 1, dtype=bool)
    keep[1:] = np.asarray(labeling.areas, dtype=np.int64) >= min_area
    return keep[labeling.labels].astype(np.float64)


def fill_small_holes(mask: BinaryMask, min_area: int, connectivity: int) -> BinaryMask:
    """Flip land components of area below `min_area` that do not touch the image border."""
    labeling = connected_components_2d(1.0 - mask, connectivity)
    fill = np.zeros(labeling.component_count + 1, dtype=bool)
    fill[1:] = np.asarray(labeling.areas, dtype=np.int64) < min_area
    border = np.concatenate(
        [labeling.labels[0, :], labeling.labels[-1, :], labeling.labels[:, 0], labeling.labels[:, -1]]
    )
    fill[border] = False
    fill[0] = False
    return np.where(fill[labeling.labels], 1.0, mask)


def keep_largest_column_runs(mask: BinaryMask) -> BinaryMask:
    out = np.zeros_like(mask)
    for col in range(mask.shape[1]):
        runs = column_runs(mask[:, col])
        if not runs:
            continue
        # max() keeps the first of equally long runs
        start, stop = max(runs, key=lambda run: run[1] - run[0])
        out[start:stop, col] = 1.0
    return out


class Threshold(MaskStep[PostprocConfig]):
    name = "threshold"

    def apply(self, mask, config):
        return binarize(mask, config.threshold)


class OpenClose(MaskStep[PostprocConfig]):
    name = "open_close"

    def skip(self, config):
        return config.open_close_k == 1

    def apply(self, mask, config):
        return closing(opening(mask, config.open_close_k), config.open_close_k)


class AreaFilter(MaskStep[PostprocConfig]):
    name = "area_filter"

    def skip(self, config):
        return config.min_sea_area == 1 and config.min_land_area == 1

    def apply(self, mask, config):
        if config.min_sea_area > 1:
            mask = remove_small_components(mask, config.min_sea_area, config.connectivity)
        if config.min_land_area > 1:
            mask = fill_small_holes(mask, config.min_land_area, config.connectivity)
        return mask


class ColumnConnectivity(MaskStep[PostprocConfig]):
    name = "column_connectivity"

    def skip(self, config):
        return not config.enforce_column_connectivity

    def apply(self, mask, config):
        return keep_largest_column_runs(mask)


class Refiner(MaskPipeline[PostprocConfig]):
    def __init__(self, recorder: Optional[Recorder] = None) -> None:
        super().__init__(
            [Threshold(), OpenClose(), AreaFilter(), ColumnConnectivity()], recorder=recorder
        )


def refine(mask: ProbMask, cfg: PostprocConfig, recorder: Optional[Recorder] = None) -> BinaryMask:
    return Refiner(recorder).run_to_fixed_point(as_prob_mask(mask), cfg, cfg.max_passes)


def count_false_components(mask: BinaryMask, labels: LabelMask, connectivity: int = 4) -> int:
    """Predicted water components that touch no true water pixel."""
    require_same_shape(mask, labels)
    labeling = connected_components_2d(as_binary_mask(mask), connectivity)
    if labeling.component_count == 0:
        return 0
    overlap = np.bincount(
        labeling.labels[as_binary_mask(labels, "labels") > 0],
        minlength=labeling.component_count + 1,
    )
    return int(np.count_nonzero(overlap[1:] == 0))
