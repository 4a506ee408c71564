"""
The robust objective: cross-entropy, HSV-guided supervision, coastline
smoothness, column connectivity and sea cleanup, each returned with its
analytic gradient with respect to the probability mask.

Set-valued quantities (the coastline band, the sea pixels, the rising-edge
pattern of the connectivity surrogate) are recomputed on every forward pass
and held constant in the backward pass. Passing a `FrozenSets` reuses the
sets of another mask, which makes every term a smooth function of the mask
that finite differences can check.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from .grids import Grid2D, HsvImage, LabelMask, ProbMask, local_mean, neighborhood_variance
from .grids import require_same_shape, spatial_gradient, spatial_gradient_adjoint
from .grids import window_counts, window_sum
from .morphology import binarize, coastline_mask, column_region_counts
from .morphology import connected_components_2d
from .utils import InvalidParameter, require_odd_window, require_open_unit


TERMS = ("ce", "hsv", "coast", "conn", "sea")

ValueGrad = Tuple[float, Grid2D]


@dataclass(frozen=True)
class HsvPriorParams:
    alpha_h: float = 0.0
    alpha_s: float = 0.0
    alpha_v: float = 0.0
    beta: float = 0.0
    sigma_bw: float = 0.2
    ref_hsv: Tuple[float, float, float] = (0.58, 0.45, 0.45)

    def __post_init__(self):
        if not self.sigma_bw > 0.0:
            raise InvalidParameter(f"sigma_bw must be positive, got {self.sigma_bw}")
        h, s, v = self.ref_hsv
        if not (0.0 <= h < 1.0 and 0.0 <= s <= 1.0 and 0.0 <= v <= 1.0):
            raise InvalidParameter(f"ref_hsv {self.ref_hsv} outside the HSV ranges")

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.alpha_h, self.alpha_s, self.alpha_v, self.beta])

    def with_coefficients(self, coefficients: np.ndarray) -> "HsvPriorParams":
        alpha_h, alpha_s, alpha_v, beta = (float(c) for c in coefficients)
        return replace(self, alpha_h=alpha_h, alpha_s=alpha_s, alpha_v=alpha_v, beta=beta)


@dataclass(frozen=True)
class LossWeights:
    lambda_ce: float = 1.0
    lambda_hsv: float = 0.5
    lambda_coast: float = 0.1
    lambda_conn: float = 0.1
    lambda_sea: float = 0.1

    def __post_init__(self):
        for term, weight in self.as_dict().items():
            if not weight >= 0.0:
                raise InvalidParameter(f"lambda_{term} must be non-negative, got {weight}")

    def as_dict(self) -> Dict[str, float]:
        return {term: getattr(self, f"lambda_{term}") for term in TERMS}

    def require_active(self):
        if not any(self.as_dict().values()):
            raise InvalidParameter("at least one loss weight must be positive")

    def without(self, term: str) -> "LossWeights":
        return replace(self, **{f"lambda_{term}": 0.0})

    def only(self, term: str, weight: float = 1.0) -> "LossWeights":
        return LossWeights(**{f"lambda_{t}": (weight if t == term else 0.0) for t in TERMS})

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(**{f"lambda_{t}": factor * w for t, w in self.as_dict().items()})


@dataclass(frozen=True)
class ConnConfig:
    max_regions: int = 10
    tau_soft: float = 0.1
    threshold: float = 0.5

    def __post_init__(self):
        if self.max_regions < 1:
            raise InvalidParameter(f"max_regions must be >= 1, got {self.max_regions}")
        if not self.tau_soft > 0.0:
            raise InvalidParameter(f"tau_soft must be positive, got {self.tau_soft}")
        require_open_unit(self.threshold, "conn threshold")


@dataclass(frozen=True)
class LossSettings:
    weights: LossWeights = field(default_factory=LossWeights)
    hsv_params: HsvPriorParams = field(default_factory=HsvPriorParams)
    conn: ConnConfig = field(default_factory=ConnConfig)
    coast_k: int = 3
    threshold: float = 0.5
    sea_window: int = 5
    sea_min_area: int = 25
    sea_connectivity: int = 4
    clamp_eps: float = 1e-7

    def __post_init__(self):
        require_odd_window(self.coast_k, "coast_k")
        require_odd_window(self.sea_window, "sea_window")
        require_open_unit(self.threshold)
        if self.sea_min_area < 1:
            raise InvalidParameter(f"sea_min_area must be >= 1, got {self.sea_min_area}")
        if self.sea_connectivity not in (4, 8):
            raise InvalidParameter(f"sea_connectivity must be 4 or 8, got {self.sea_connectivity}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise InvalidParameter(f"clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")


@dataclass(frozen=True)
class FrozenSets:
    coast: np.ndarray
    sea: np.ndarray
    rising: np.ndarray
    active_columns: np.ndarray


@dataclass
class LossBundle:
    l_ce: float
    l_hsv: float
    l_coast: float
    l_conn: float
    l_sea: float
    l_robust: float
    grad: Grid2D
    l_conn_soft: float = 0.0
    l_surrogate: float = 0.0

    def components(self) -> Dict[str, float]:
        return {term: getattr(self, f"l_{term}") for term in TERMS}


def hsv_water_likelihood(hsv: HsvImage, params: HsvPriorParams) -> ProbMask:
    return expit(
        params.alpha_h * hsv.h + params.alpha_s * hsv.s + params.alpha_v * hsv.v + params.beta
    )


def hsv_distance_sq(hsv: HsvImage, ref_hsv: Tuple[float, float, float]) -> Grid2D:
    ref_h, ref_s, ref_v = ref_hsv
    dh = np.abs(hsv.h - ref_h)
    dh = np.minimum(dh, 1.0 - dh)
    return dh ** 2 + (hsv.s - ref_s) ** 2 + (hsv.v - ref_v) ** 2


def hsv_confidence_weights(hsv: HsvImage, params: HsvPriorParams) -> Grid2D:
    return np.exp(-hsv_distance_sq(hsv, params.ref_hsv) / (2.0 * params.sigma_bw ** 2))


def loss_hsv(mask: ProbMask, hsv: HsvImage, params: HsvPriorParams) -> ValueGrad:
    require_same_shape(mask, hsv.h)
    residual = mask - hsv_water_likelihood(hsv, params)
    weights = hsv_confidence_weights(hsv, params)
    value = float(np.mean(residual ** 2 * weights))
    return value, (2.0 / mask.size) * residual * weights


def hsv_param_gradient(mask: ProbMask, hsv: HsvImage, params: HsvPriorParams) -> np.ndarray:
    """Gradient of `loss_hsv` with respect to (alpha_h, alpha_s, alpha_v, beta)."""
    likelihood = hsv_water_likelihood(hsv, params)
    weights = hsv_confidence_weights(hsv, params)
    # dL/dz where z is the pre-sigmoid score of P_HSV
    dz = -(2.0 / mask.size) * (mask - likelihood) * weights * likelihood * (1.0 - likelihood)
    return np.array([np.sum(dz * hsv.h), np.sum(dz * hsv.s), np.sum(dz * hsv.v), np.sum(dz)])


def loss_coast(
    mask: ProbMask, k: int, threshold: float, coast: Optional[np.ndarray] = None
) -> ValueGrad:
    band = coastline_mask(mask, k, threshold) if coast is None else coast
    count = int(np.count_nonzero(band))
    if count == 0:
        return 0.0, np.zeros_like(mask)

    gx, gy = spatial_gradient(mask)
    value = float(np.sum((gx ** 2 + gy ** 2)[band]) / count)
    scale = 2.0 / count
    grad = spatial_gradient_adjoint(scale * gx * band, scale * gy * band)
    return value, grad


def _soft_edges(mask: ProbMask, cfg: ConnConfig) -> Tuple[Grid2D, Grid2D, Grid2D]:
    soft = expit((mask - cfg.threshold) / cfg.tau_soft)
    previous = np.vstack([np.zeros((1, mask.shape[1])), soft[:-1, :]])
    return soft, soft - previous, soft * (1.0 - soft) / cfg.tau_soft


def conn_pattern(mask: ProbMask, cfg: ConnConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Rising-edge pattern and active columns of the soft surrogate at `mask`."""
    _, rise, _ = _soft_edges(mask, cfg)
    rising = rise > 0.0
    counts = np.sum(np.where(rising, rise, 0.0), axis=0)
    return rising, counts > 1.0


def loss_conn_soft(
    mask: ProbMask,
    cfg: ConnConfig,
    rising: Optional[np.ndarray] = None,
    active_columns: Optional[np.ndarray] = None,
) -> ValueGrad:
    """
    Soft column connectivity: per column, the soft region count is the sum
    of positive rises of sigmoid((m - threshold) / tau) down the column,
    starting from 0 above the first row.
    """
    soft, rise, slope = _soft_edges(mask, cfg)
    if rising is None:
        rising = rise > 0.0
    counts = np.sum(np.where(rising, rise, 0.0), axis=0)
    if active_columns is None:
        active_columns = counts > 1.0

    value = float(np.sum(np.where(active_columns, counts - 1.0, 0.0)) / cfg.max_regions)
    indicator = rising.astype(np.float64)
    # d(count)/d(soft_i) = rising_i - rising_{i+1}
    d_soft = indicator - np.vstack([indicator[1:, :], np.zeros((1, mask.shape[1]))])
    grad = d_soft * slope * (active_columns.astype(np.float64) / cfg.max_regions)
    return value, grad


def loss_conn(mask: ProbMask, cfg: ConnConfig, frozen: Optional[FrozenSets] = None) -> ValueGrad:
    """Hard column connectivity value with the gradient of the soft surrogate."""
    counts = column_region_counts(mask, cfg.threshold)
    value = float(np.sum(np.maximum(0.0, (counts - 1.0) / cfg.max_regions)))
    if frozen is None:
        _, grad = loss_conn_soft(mask, cfg)
    else:
        _, grad = loss_conn_soft(mask, cfg, frozen.rising, frozen.active_columns)
    return value, grad


def sea_mask(mask: ProbMask, threshold: float, min_area: int, connectivity: int = 4) -> np.ndarray:
    """Pixels of thresholded water components whose area is at least `min_area`."""
    labeling = connected_components_2d(binarize(mask, threshold), connectivity)
    keep = np.zeros(labeling.component_count + 1, dtype=bool)
    keep[1:] = np.asarray(labeling.areas) >= min_area
    return keep[labeling.labels]


def loss_sea(
    mask: ProbMask,
    window: int,
    min_area: int,
    threshold: float,
    connectivity: int = 4,
    sea: Optional[np.ndarray] = None,
) -> ValueGrad:
    require_odd_window(window)
    if min_area < 1:
        raise InvalidParameter(f"min_area must be >= 1, got {min_area}")
    selected = sea_mask(mask, threshold, min_area, connectivity) if sea is None else sea
    count = int(np.count_nonzero(selected))
    if count == 0:
        return 0.0, np.zeros_like(mask)

    variance = neighborhood_variance(mask, window)
    value = float(np.sum(variance[selected]) / count)

    # dVar_p/dm_q = 2 (m_q - mean_p) / n_p for every q in the window of p
    counts = window_counts(mask.shape, window)
    means = local_mean(mask, window)
    weight = selected / counts
    grad = (2.0 / count) * (mask * window_sum(weight, window) - window_sum(weight * means, window))
    return value, grad


def loss_ce(mask: ProbMask, labels: LabelMask, clamp_eps: float = 1e-7) -> ValueGrad:
    require_same_shape(mask, labels)
    if not 0.0 < clamp_eps < 0.5:
        raise InvalidParameter(f"clamp_eps must lie in (0, 0.5), got {clamp_eps}")
    clamped = np.clip(mask, clamp_eps, 1.0 - clamp_eps)
    value = -float(np.mean(labels * np.log(clamped) + (1.0 - labels) * np.log1p(-clamped)))
    inside = (mask > clamp_eps) & (mask < 1.0 - clamp_eps)
    grad = np.where(inside, (clamped - labels) / (clamped * (1.0 - clamped)), 0.0) / mask.size
    return value, grad


def freeze_sets(mask: ProbMask, settings: LossSettings) -> FrozenSets:
    rising, active = conn_pattern(mask, settings.conn)
    return FrozenSets(
        coast=coastline_mask(mask, settings.coast_k, settings.threshold),
        sea=sea_mask(mask, settings.threshold, settings.sea_min_area, settings.sea_connectivity),
        rising=rising,
        active_columns=active,
    )


def term_value_and_grad(
    term: str,
    mask: ProbMask,
    labels: LabelMask,
    hsv: HsvImage,
    settings: LossSettings,
    frozen: Optional[FrozenSets] = None,
    soft: bool = False,
) -> ValueGrad:
    """
    One unweighted loss term. With `soft=True` the connectivity term reports
    its surrogate value, the function its gradient actually differentiates.
    """
    if term == "ce":
        return loss_ce(mask, labels, settings.clamp_eps)
    if term == "hsv":
        return loss_hsv(mask, hsv, settings.hsv_params)
    if term == "coast":
        return loss_coast(
            mask, settings.coast_k, settings.threshold, None if frozen is None else frozen.coast
        )
    if term == "conn":
        if soft:
            if frozen is None:
                return loss_conn_soft(mask, settings.conn)
            return loss_conn_soft(mask, settings.conn, frozen.rising, frozen.active_columns)
        return loss_conn(mask, settings.conn, frozen)
    if term == "sea":
        return loss_sea(
            mask,
            settings.sea_window,
            settings.sea_min_area,
            settings.threshold,
            settings.sea_connectivity,
            None if frozen is None else frozen.sea,
        )
    raise InvalidParameter(f"unknown loss term `{term}`")


def loss_robust(
    mask: ProbMask,
    labels: LabelMask,
    hsv: HsvImage,
    settings: LossSettings,
    frozen: Optional[FrozenSets] = None,
) -> LossBundle:
    require_same_shape(mask, labels, hsv.h)
    if frozen is None:
        frozen = freeze_sets(mask, settings)
    weights = settings.weights.as_dict()

    values: Dict[str, float] = {}
    robust = 0.0
    surrogate = 0.0
    grad = np.zeros_like(mask)
    for term in TERMS:
        value, term_grad = term_value_and_grad(term, mask, labels, hsv, settings, frozen)
        values[term] = value
        robust += weights[term] * value
        grad = grad + weights[term] * term_grad
        if term == "conn":
            soft_value, _ = loss_conn_soft(
                mask, settings.conn, frozen.rising, frozen.active_columns
            )
            values["conn_soft"] = soft_value
            surrogate += weights[term] * soft_value
        else:
            surrogate += weights[term] * value

    return LossBundle(
        l_ce=values["ce"],
        l_hsv=values["hsv"],
        l_coast=values["coast"],
        l_conn=values["conn"],
        l_sea=values["sea"],
        l_robust=robust,
        grad=grad,
        l_conn_soft=values["conn_soft"],
        l_surrogate=surrogate,
    )
