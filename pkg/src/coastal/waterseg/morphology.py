"""
Binary morphology with square structuring elements, the coastline band of a
mask, and connected-component analysis in two dimensions (sea detection) and
along single columns.

Windows are clipped at the image border: no padding value ever enters a
max or min, so uniform masks have no artificial boundary.
"""
from dataclasses import dataclass, field
from typing import List, Literal, Tuple

import numpy as np
from scipy import ndimage

from .grids import BinaryMask, ProbMask, as_binary_mask
from .utils import InvalidParameter, require_odd_window, require_open_unit


Connectivity = Literal[4, 8]


def binarize(mask: ProbMask, threshold: float) -> BinaryMask:
    require_open_unit(threshold)
    return (mask >= threshold).astype(np.float64)


def dilate(mask: BinaryMask, k: int) -> BinaryMask:
    require_odd_window(k, "k")
    return ndimage.maximum_filter(as_binary_mask(mask, "mask"), size=k, mode="nearest")


def erode(mask: BinaryMask, k: int) -> BinaryMask:
    require_odd_window(k, "k")
    return ndimage.minimum_filter(as_binary_mask(mask, "mask"), size=k, mode="nearest")


def opening(mask: BinaryMask, k: int) -> BinaryMask:
    return dilate(erode(mask, k), k)


def closing(mask: BinaryMask, k: int) -> BinaryMask:
    return erode(dilate(mask, k), k)


@dataclass(frozen=True)
class CoastlineSet:
    pixels: List[Tuple[int, int]]
    shape: Tuple[int, int]

    @property
    def cardinality(self) -> int:
        return len(self.pixels)

    def to_mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        for row, col in self.pixels:
            out[row, col] = True
        return out


def coastline_mask(mask: ProbMask, k: int, threshold: float) -> np.ndarray:
    """Boolean grid of the band `dilate(B, k) - erode(B, k)` of the binarized mask."""
    binary = binarize(mask, threshold)
    return (dilate(binary, k) - erode(binary, k)) == 1.0


def coastline_set(mask: ProbMask, k: int, threshold: float) -> CoastlineSet:
    band = coastline_mask(mask, k, threshold)
    rows, cols = np.nonzero(band)
    return CoastlineSet(
        pixels=[(int(r), int(c)) for r, c in zip(rows, cols)], shape=band.shape
    )


@dataclass(frozen=True)
class ComponentLabeling:
    labels: np.ndarray
    component_count: int
    areas: List[int] = field(default_factory=list)


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def connected_components_2d(mask: BinaryMask, connectivity: Connectivity = 4) -> ComponentLabeling:
    """
    Label the foreground of a binary mask. Component ids are assigned in the
    order their first pixel appears in a row-major scan.
    """
    if connectivity not in _STRUCTURES:
        raise InvalidParameter(f"connectivity must be 4 or 8, got {connectivity}")
    raw, count = ndimage.label(as_binary_mask(mask, "mask") > 0, structure=_STRUCTURES[connectivity])
    if count == 0:
        return ComponentLabeling(np.zeros(raw.shape, dtype=np.int64), 0, [])

    flat = raw.ravel()
    ids, first = np.unique(flat, return_index=True)
    foreground = ids > 0
    order = ids[foreground][np.argsort(first[foreground], kind="stable")]
    relabel = np.zeros(count + 1, dtype=np.int64)
    relabel[order] = np.arange(1, count + 1)
    labels = relabel[raw]
    areas = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    return ComponentLabeling(labels, int(count), [int(a) for a in areas])


def count_column_regions(column: np.ndarray, threshold: float) -> int:
    """Number of maximal runs of values >= threshold."""
    require_open_unit(threshold)
    wet = np.asarray(column, dtype=np.float64) >= threshold
    if wet.size == 0:
        return 0
    return int(wet[0]) + int(np.count_nonzero(wet[1:] & ~wet[:-1]))


def column_region_counts(mask: ProbMask, threshold: float) -> np.ndarray:
    """`count_column_regions` for every column of a mask at once."""
    require_open_unit(threshold)
    wet = mask >= threshold
    rising = wet[1:, :] & ~wet[:-1, :]
    return wet[0, :].astype(np.int64) + rising.sum(axis=0)


def column_runs(column: np.ndarray) -> List[Tuple[int, int]]:
    """Half-open (start, stop) row ranges of the nonzero runs of a column."""
    wet = np.concatenate([[False], np.asarray(column) > 0, [False]])
    edges = np.flatnonzero(wet[1:] != wet[:-1])
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]
