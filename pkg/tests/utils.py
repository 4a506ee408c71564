from collections import deque
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np

from coastal.waterseg.synth import Benchmark, make_benchmark


def random_binary_mask(rng: np.random.Generator, max_size: int = 16, density=None) -> np.ndarray:
    height, width = rng.integers(1, max_size + 1, size=2)
    p = rng.uniform(0.2, 0.8) if density is None else density
    return (rng.random((height, width)) < p).astype(np.float64)


def coastline_walk_mask(
    rng: np.random.Generator, shape: Tuple[int, int], min_step: float = 0.05
) -> np.ndarray:
    """
    Smooth probability mask: each column ramps from land to water with values
    at least `min_step` apart from row to row, so no pixel sits on the
    threshold and the soft connectivity pattern is stable under tiny steps.
    """
    height, width = shape
    mask = np.empty(shape)
    for col in range(width):
        value = rng.uniform(0.05, 0.3)
        for row in range(height):
            mask[row, col] = value
            step = rng.choice([-1.0, 1.0]) * rng.uniform(min_step, 0.2)
            value = float(np.clip(value + step, 0.02, 0.98))
            if abs(value - mask[row, col]) < min_step:
                value = mask[row, col] + (min_step if mask[row, col] < 0.5 else -min_step)
    return mask


def flood_fill_components(mask: np.ndarray, connectivity: int = 4) -> Tuple[np.ndarray, int]:
    """Breadth-first labeling, components numbered in row-major discovery order."""
    height, width = mask.shape
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    labels = np.zeros(mask.shape, dtype=np.int64)
    count = 0
    for row in range(height):
        for col in range(width):
            if mask[row, col] == 0 or labels[row, col]:
                continue
            count += 1
            labels[row, col] = count
            queue = deque([(row, col)])
            while queue:
                r, c = queue.popleft()
                for dr, dc in steps:
                    nr, nc = r + dr, c + dc
                    if 0 <= nr < height and 0 <= nc < width and mask[nr, nc] and not labels[nr, nc]:
                        labels[nr, nc] = count
                        queue.append((nr, nc))
    return labels, count


def transition_count(column, threshold: float) -> int:
    count = 0
    previous = False
    for value in column:
        wet = value >= threshold
        if wet and not previous:
            count += 1
        previous = wet
    return count


def window_oracle(grid: np.ndarray, k: int, reduce: Callable) -> np.ndarray:
    radius = k // 2
    height, width = grid.shape
    out = np.empty_like(grid)
    for row in range(height):
        for col in range(width):
            block = grid[max(row - radius, 0) : row + radius + 1, max(col - radius, 0) : col + radius + 1]
            out[row, col] = reduce(block)
    return out


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[index] += step
        minus[index] -= step
        grad[index] = (f(plus) - f(minus)) / (2.0 * step)
    return grad


@lru_cache(maxsize=None)
def small_benchmark(count: int = 6, size: int = 16, seed: int = 3) -> Benchmark:
    return make_benchmark(count, 0.5, seed, size, size)
