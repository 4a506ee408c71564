"""
Gradient-descent training of the toy segmenter against the robust objective,
plus the diagnostics that go with it: segmentation metrics, finite-difference
gradient checks, an empirical Lipschitz estimate of the objective, the
HSV-prior/label correlation, and the leave-one-term-out ablation.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import logging as log
from scipy.special import expit

from .common import Recorder
from .grids import HsvImage, LabelMask, ProbMask, RgbImage, as_label_mask, require_same_shape
from .grids import rgb_to_hsv
from .losses import TERMS, FrozenSets, HsvPriorParams, LossBundle, LossSettings, LossWeights
from .losses import freeze_sets, hsv_param_gradient, hsv_water_likelihood, loss_robust
from .losses import term_value_and_grad
from .messages import AblationRow, EpochRecord, GradcheckReport, TrainReport, TrainSummary
from .model import FEATURE_COUNT, FeatureStack, ToySegmenter, theta_gradient
from .postprocess import PostprocConfig, refine
from .scheduler import SceneScheduler
from .synth import Benchmark, Scene, SceneSpec, generate
from .utils import GradcheckFailure, InvalidParameter, NumericalDivergence, require_open_unit


FD_STEP = 1e-5


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSettings = field(default_factory=LossSettings)
    learning_rate: float = 0.5
    epochs: int = 200
    # 0 trains full-batch
    batch_size: int = 0
    seed: int = 0
    variance_window: int = 20
    eval_threshold: float = 0.5
    init_scale: float = 0.0
    train_hsv_params: bool = True
    hsv_prefit: bool = True
    hsv_prefit_steps: int = 500
    hsv_prefit_rate: float = 1.0
    ref_from_data: bool = True
    lipschitz_trials: int = 200
    divergence_limit: float = 1e6
    workers: int = 1
    log_every: int = 50

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise InvalidParameter(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise InvalidParameter(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 0:
            raise InvalidParameter(f"batch_size must be >= 0, got {self.batch_size}")
        if self.variance_window < 1:
            raise InvalidParameter(f"variance_window must be >= 1, got {self.variance_window}")
        require_open_unit(self.eval_threshold, "eval_threshold")

    def with_weights(self, weights: LossWeights) -> "TrainConfig":
        return replace(self, loss=replace(self.loss, weights=weights))


@dataclass(frozen=True)
class PreparedScene:
    name: str
    features: FeatureStack
    labels: LabelMask

    @classmethod
    def from_scene(cls, scene: Scene) -> "PreparedScene":
        return cls(scene.name, FeatureStack.from_image(scene.image), as_label_mask(scene.labels))


@dataclass(frozen=True)
class Metrics:
    iou: float
    f1: float
    accuracy: float


def evaluate(mask: ProbMask, labels: LabelMask, threshold: float = 0.5) -> Metrics:
    require_same_shape(mask, labels)
    predicted = mask >= threshold
    truth = labels > 0
    tp = int(np.count_nonzero(predicted & truth))
    fp = int(np.count_nonzero(predicted & ~truth))
    fn = int(np.count_nonzero(~predicted & truth))
    tn = int(np.count_nonzero(~predicted & ~truth))
    union = tp + fp + fn
    iou = 1.0 if union == 0 else tp / union
    f1 = 1.0 if union == 0 else 2 * tp / (2 * tp + fp + fn)
    return Metrics(iou, f1, (tp + tn) / mask.size)


def summarize(values: Iterable[float]) -> Tuple[float, float]:
    """Mean and population standard deviation."""
    values = np.asarray(list(values), dtype=np.float64)
    return float(np.mean(values)), float(np.std(values))


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.4f} ± {std:.4f}"


def water_reference_hsv(scenes: Sequence[Scene]) -> Tuple[float, float, float]:
    """Mean HSV of labeled water pixels, hue averaged on the circle."""
    hues, sats, vals = [], [], []
    for scene in scenes:
        hsv = rgb_to_hsv(scene.image)
        water = scene.labels > 0
        hues.append(hsv.h[water])
        sats.append(hsv.s[water])
        vals.append(hsv.v[water])
    hue = np.concatenate(hues)
    if hue.size == 0:
        raise InvalidParameter("no labeled water pixels to derive a reference HSV from")
    angle = 2.0 * np.pi * hue
    mean_h = np.arctan2(np.mean(np.sin(angle)), np.mean(np.cos(angle))) / (2.0 * np.pi) % 1.0
    return (
        float(mean_h) if mean_h < 1.0 else 0.0,
        float(np.mean(np.concatenate(sats))),
        float(np.mean(np.concatenate(vals))),
    )


def prefit_hsv_params(
    scenes: Sequence[PreparedScene], params: HsvPriorParams, steps: int, rate: float
) -> HsvPriorParams:
    """Fit (alpha, beta) by logistic regression of the labels on (h, s, v)."""
    x = np.concatenate(
        [
            np.stack([s.features.hsv.h, s.features.hsv.s, s.features.hsv.v, np.ones_like(s.labels)], -1)
            .reshape(-1, 4)
            for s in scenes
        ]
    )
    y = np.concatenate([s.labels.reshape(-1) for s in scenes])
    coefficients = params.coefficients
    for _ in range(steps):
        coefficients = coefficients - rate * x.T @ (expit(x @ coefficients) - y) / y.size
    return params.with_coefficients(coefficients)


def pearson(p: np.ndarray, y: np.ndarray) -> Tuple[float, bool]:
    """Pearson correlation, or (0, True) when either side is constant."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if p.size < 2 or np.ptp(p) == 0.0 or np.ptp(y) == 0.0:
        log.warning("rho correlation is undefined for constant inputs; reporting 0")
        return 0.0, True
    dp, dy = p - p.mean(), y - y.mean()
    rho = float(np.sum(dp * dy) / np.sqrt(np.sum(dp * dp) * np.sum(dy * dy)))
    return float(np.clip(rho, -1.0, 1.0)), False


def rho_correlation(scenes: Sequence[Scene], params: HsvPriorParams) -> Tuple[float, bool]:
    if not scenes:
        raise InvalidParameter("rho correlation needs at least one labeled scene")
    likelihood = [hsv_water_likelihood(rgb_to_hsv(s.image), params).reshape(-1) for s in scenes]
    labels = [np.asarray(s.labels).reshape(-1) for s in scenes]
    return pearson(np.concatenate(likelihood), np.concatenate(labels))


def scene_gradient(
    model: ToySegmenter, scene: PreparedScene, settings: LossSettings
) -> Tuple[LossBundle, np.ndarray]:
    """Loss bundle of one scene and the gradient on theta + HSV coefficients."""
    mask = model.predict_features(scene.features)
    bundle = loss_robust(mask, scene.labels, scene.features.hsv, settings)
    grad_theta = theta_gradient(scene.features, mask, bundle.grad)
    grad_hsv = settings.weights.lambda_hsv * hsv_param_gradient(
        mask, scene.features.hsv, settings.hsv_params
    )
    return bundle, np.concatenate([grad_theta, grad_hsv])


def _check_finite(bundles: List[LossBundle], settings: LossSettings, epoch: int, limit: float):
    weights = settings.weights.as_dict()
    for bundle in bundles:
        for term, value in bundle.components().items():
            if not np.isfinite(value):
                raise NumericalDivergence(term, epoch, epoch - 1, value)
        if not np.isfinite(bundle.l_robust) or bundle.l_robust > limit:
            worst = max(TERMS, key=lambda t: weights[t] * bundle.components()[t])
            raise NumericalDivergence(worst, epoch, epoch - 1, bundle.l_robust)
        if not np.all(np.isfinite(bundle.grad)):
            raise NumericalDivergence("gradient", epoch, epoch - 1, float("nan"))


def _mean_bundle(bundles: List[LossBundle]) -> Dict[str, float]:
    keys = [f"l_{t}" for t in TERMS] + ["l_robust", "l_surrogate"]
    return {k: sum(getattr(b, k) for b in bundles) / len(bundles) for k in keys}


def validation_metrics(
    model: ToySegmenter, scenes: Sequence[PreparedScene], threshold: float
) -> Metrics:
    metrics = [evaluate(model.predict_features(s.features), s.labels, threshold) for s in scenes]
    return Metrics(
        float(np.mean([m.iou for m in metrics])),
        float(np.mean([m.f1 for m in metrics])),
        float(np.mean([m.accuracy for m in metrics])),
    )


def late_window(values: Sequence[float], window: int) -> np.ndarray:
    """The trailing `window` values, or all of them for shorter runs."""
    return np.asarray(values[-window:], dtype=np.float64)


def initial_model(dataset: Benchmark, config: TrainConfig, prepared: Sequence[PreparedScene]) -> ToySegmenter:
    params = config.loss.hsv_params
    if config.ref_from_data:
        params = replace(params, ref_hsv=water_reference_hsv(dataset.train))
    if config.hsv_prefit:
        params = prefit_hsv_params(prepared, params, config.hsv_prefit_steps, config.hsv_prefit_rate)
    if config.init_scale > 0.0:
        return ToySegmenter.seeded(config.seed, config.init_scale, hsv_params=params)
    return ToySegmenter(np.zeros(FEATURE_COUNT), params)


def train(
    dataset: Benchmark, config: TrainConfig, recorder: Optional[Recorder] = None
) -> Tuple[ToySegmenter, TrainReport]:
    config.loss.weights.require_active()
    train_scenes, val_scenes = dataset.train, dataset.validation
    if not train_scenes or not val_scenes:
        raise InvalidParameter("training needs non-empty train and validation splits")
    if {s.name for s in train_scenes} & {s.name for s in val_scenes}:
        raise InvalidParameter("train and validation splits overlap")

    scheduler = SceneScheduler(config.workers)
    prepared = scheduler.schedule(PreparedScene.from_scene, ((s,) for s in train_scenes))
    prepared_val = scheduler.schedule(PreparedScene.from_scene, ((s,) for s in val_scenes))
    model = initial_model(dataset, config, prepared)

    rng = np.random.default_rng(config.seed)
    batch_size = config.batch_size or len(prepared)
    report = TrainReport()
    min_norm = float("inf")
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(prepared)) if config.batch_size else np.arange(len(prepared))
        bundles: List[LossBundle] = []
        gradients = []
        for start in range(0, len(order), batch_size):
            batch = [prepared[i] for i in order[start : start + batch_size]]
            settings = replace(config.loss, hsv_params=model.hsv_params)
            results = scheduler.schedule(scene_gradient, ((model, s, settings) for s in batch))
            batch_bundles = [bundle for bundle, _ in results]
            _check_finite(batch_bundles, settings, epoch, config.divergence_limit)
            gradient = sum(g for _, g in results) / len(results)
            bundles += batch_bundles
            gradients.append(gradient)

            step = config.learning_rate * gradient
            theta = model.theta - step[:FEATURE_COUNT]
            coefficients = model.hsv_params.coefficients
            if config.train_hsv_params:
                coefficients = coefficients - step[FEATURE_COUNT:]
            model = model.with_parameters(theta, coefficients)

        grad_norm = float(np.linalg.norm(sum(gradients) / len(gradients)))
        min_norm = min(min_norm, grad_norm)
        metrics = validation_metrics(model, prepared_val, config.eval_threshold)
        record = EpochRecord(
            epoch=epoch,
            **_mean_bundle(bundles),
            grad_norm=grad_norm,
            min_grad_norm=min_norm,
            val_iou=metrics.iou,
            val_f1=metrics.f1,
            val_accuracy=metrics.accuracy,
        )
        report.records.append(record)
        if recorder:
            recorder.record("trainer", "epoch", record)
        if epoch % config.log_every == 0 or epoch == config.epochs:
            log.info(
                f"epoch {epoch}: loss {record.l_robust:.6f} |grad| {grad_norm:.3e} "
                f"val IoU {metrics.iou:.4f}"
            )
        else:
            log.debug(f"epoch {epoch}: loss {record.l_robust:.6f} |grad| {grad_norm:.3e}")

    final_settings = replace(config.loss, hsv_params=model.hsv_params)
    lipschitz = (
        estimate_lipschitz(final_settings, config.lipschitz_trials, config.seed)
        if config.lipschitz_trials > 0
        else float("nan")
    )
    rho, degenerate = rho_correlation(train_scenes, model.hsv_params)
    late = late_window(report.column("val_iou"), config.variance_window)
    last = report.records[-1]
    report.summary = TrainSummary(
        epochs=config.epochs,
        seed=config.seed,
        learning_rate=config.learning_rate,
        final_iou=last.val_iou,
        final_f1=last.val_f1,
        final_accuracy=last.val_accuracy,
        late_iou_mean=float(np.mean(late)),
        late_iou_variance=float(np.var(late)),
        variance_window=int(late.size),
        lipschitz=lipschitz,
        rho=rho,
        rho_degenerate=degenerate,
    )
    return model, report


def is_non_increasing(values: Sequence[float], slack: float = 1e-12) -> bool:
    return all(b <= a + slack for a, b in zip(values, values[1:]))


def find_stable_learning_rate(
    dataset: Benchmark,
    config: TrainConfig,
    probe_epochs: Optional[int] = None,
    max_halvings: int = 30,
) -> float:
    """
    Halve the learning rate until a full-batch run of `probe_epochs` (by
    default the configured epoch count) never raises the surrogate loss,
    the objective the updates descend.
    """
    rate = config.learning_rate
    epochs = probe_epochs or config.epochs
    for _ in range(max_halvings):
        probe = replace(
            config, learning_rate=rate, epochs=epochs, batch_size=0, lipschitz_trials=0
        )
        try:
            _, report = train(dataset, probe)
            if is_non_increasing(report.column("l_surrogate")):
                return rate
            log.warning(f"halving learning rate {rate:g}: surrogate loss increased")
        except NumericalDivergence as e:
            log.warning(f"halving learning rate {rate:g}: {e}")
        rate /= 2.0
    raise InvalidParameter(f"no stable learning rate found below {config.learning_rate:g}")


@dataclass(frozen=True)
class Comparison:
    robust: TrainReport
    baseline: TrainReport

    @property
    def variance_reduction(self) -> float:
        """Relative drop of the late-epoch IoU variance, baseline to robust."""
        base = self.baseline.summary.late_iou_variance
        if base == 0.0:
            return 0.0
        return 1.0 - self.robust.summary.late_iou_variance / base

    @property
    def late_iou_gain(self) -> float:
        return self.robust.summary.late_iou_mean - self.baseline.summary.late_iou_mean

    def lines(self) -> List[str]:
        return [
            f"robust_late_iou_variance: {self.robust.summary.late_iou_variance!r}",
            f"baseline_late_iou_variance: {self.baseline.summary.late_iou_variance!r}",
            f"variance_reduction: {self.variance_reduction!r}",
            f"late_iou_gain: {self.late_iou_gain!r}",
        ]


def ce_only(config: TrainConfig) -> TrainConfig:
    return config.with_weights(config.loss.weights.only("ce", config.loss.weights.lambda_ce))


def compare_with_baseline(
    dataset: Benchmark, config: TrainConfig
) -> Tuple[ToySegmenter, ToySegmenter, Comparison]:
    robust_model, robust = train(dataset, config)
    baseline_model, baseline = train(dataset, ce_only(config))
    return robust_model, baseline_model, Comparison(robust, baseline)


def refined_iou(model: ToySegmenter, scenes: Sequence[Scene], postproc: PostprocConfig) -> float:
    values = []
    for scene in scenes:
        mask = model.predict_features(FeatureStack.from_image(scene.image))
        values.append(evaluate(refine(mask, postproc), scene.labels, 0.5).iou)
    return float(np.mean(values))


ABLATION_ROWS = ("full", "-hsv", "-coast", "-conn", "-sea", "ce-only")


def ablate(
    dataset: Benchmark,
    config: TrainConfig,
    postproc: Optional[PostprocConfig] = None,
    recorder: Optional[Recorder] = None,
) -> List[AblationRow]:
    weights = config.loss.weights
    variants = [("full", "", weights)]
    variants += [(f"-{t}", t, weights.without(t)) for t in ("hsv", "coast", "conn", "sea")]
    variants.append(("ce-only", "hsv+coast+conn+sea", weights.only("ce", weights.lambda_ce)))

    rows: List[AblationRow] = []
    full_iou = 0.0
    for name, removed, variant in variants:
        log.info(f"ablation row `{name}`")
        model, report = train(dataset, config.with_weights(variant))
        if name == "full":
            full_iou = report.summary.final_iou
        row = AblationRow(
            name=name,
            removed=removed,
            seed=config.seed,
            final_iou=report.summary.final_iou,
            late_iou_variance=report.summary.late_iou_variance,
            delta_iou=full_iou - report.summary.final_iou,
            refined_iou=None if postproc is None else refined_iou(model, dataset.validation, postproc),
        )
        rows.append(row)
        if recorder:
            recorder.record("ablation", name, row)
    return rows


def auxiliary_inputs(size: int, seed: int) -> Tuple[LabelMask, HsvImage]:
    """A fixed synthetic scene supplying labels and HSV channels."""
    image, labels = generate(SceneSpec(height=size, width=size, sinusoids=((0.1, 1.0, 0.0),), seed=seed))
    return labels, rgb_to_hsv(image)


def lipschitz_trace(
    settings: LossSettings,
    trials: int,
    seed: int,
    size: int = 16,
    band: Tuple[float, float] = (0.05, 0.95),
    pool_size: int = 100,
    delta: float = 1e-3,
    inputs: Optional[Tuple[LabelMask, HsvImage]] = None,
) -> np.ndarray:
    """
    Running maximum of |L(M2) - L(M1)| / ||M2 - M1|| over seeded mask pairs.

    Base masks M1 come from a seeded pool drawn uniformly in `band`; each
    partner steps from M1 along the normalized ascent direction, with the
    step halved on every pass through the pool. The objective is the
    composite surrogate with sets frozen at M1, the function training
    descends.
    """
    if trials < 1:
        raise InvalidParameter(f"trials must be >= 1, got {trials}")
    labels, hsv = inputs if inputs is not None else auxiliary_inputs(size, seed)
    shape = labels.shape
    rng = np.random.default_rng(seed)
    pool = rng.uniform(band[0], band[1], (min(pool_size, trials),) + shape)
    fallback = np.full(shape, 1.0 / np.sqrt(labels.size))

    bases: List[Tuple[FrozenSets, float, np.ndarray]] = []
    for base in pool:
        frozen = freeze_sets(base, settings)
        bundle = loss_robust(base, labels, hsv, settings, frozen)
        norm = np.sqrt(np.sum(bundle.grad * bundle.grad))
        direction = bundle.grad / norm if norm > 0.0 else fallback
        bases.append((frozen, bundle.l_surrogate, direction))

    trace = np.empty(trials)
    best = 0.0
    for t in range(trials):
        index = t % len(pool)
        frozen, value, direction = bases[index]
        step = delta * 0.5 ** (t // len(pool))
        other = np.clip(pool[index] + step * direction, 0.0, 1.0)
        distance = np.sqrt(np.sum((other - pool[index]) ** 2))
        if distance > 0.0:
            moved = loss_robust(other, labels, hsv, settings, frozen).l_surrogate
            best = max(best, abs(moved - value) / distance)
        trace[t] = best
    return trace


def estimate_lipschitz(settings: LossSettings, trials: int, seed: int, **kwargs) -> float:
    return float(lipschitz_trace(settings, trials, seed, **kwargs)[-1])


@dataclass(frozen=True)
class Instance:
    image: RgbImage
    labels: LabelMask
    features: FeatureStack

    @property
    def hsv(self) -> HsvImage:
        return self.features.hsv


def random_instance(size: int, seed: int) -> Instance:
    """Noisy coastline scene small enough for exhaustive finite differences."""
    image, labels = generate(
        SceneSpec(height=size, width=size, sinusoids=((0.1, 1.0, 0.3),), noise=0.15, seed=seed)
    )
    return Instance(image, labels, FeatureStack.from_image(image))


def gradcheck_model(seed: int, scale: float = 0.5) -> ToySegmenter:
    """Seeded weights and HSV coefficients for gradient checks."""
    rng = np.random.default_rng([seed, FEATURE_COUNT])
    params = HsvPriorParams().with_coefficients(rng.standard_normal(4))
    return ToySegmenter(scale * rng.standard_normal(FEATURE_COUNT), params)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| relative to the larger side; absolute once both are ~0."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    error = float(np.max(np.abs(analytic - numeric)))
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return error / scale if scale > 1e-8 else error


def _objective(term: str, mask, instance: Instance, settings: LossSettings, frozen: FrozenSets):
    if term == "composite":
        bundle = loss_robust(mask, instance.labels, instance.hsv, settings, frozen)
        return bundle.l_surrogate, bundle.grad
    return term_value_and_grad(term, mask, instance.labels, instance.hsv, settings, frozen, soft=True)


def mask_gradient_error(
    term: str, mask: ProbMask, instance: Instance, settings: LossSettings, step: float = FD_STEP
) -> float:
    """Analytic dL/dM against central differences, sets frozen at `mask`."""
    frozen = freeze_sets(mask, settings)
    _, analytic = _objective(term, mask, instance, settings, frozen)
    numeric = np.zeros_like(mask)
    for index in np.ndindex(mask.shape):
        plus, minus = mask.copy(), mask.copy()
        plus[index] += step
        minus[index] -= step
        numeric[index] = (
            _objective(term, plus, instance, settings, frozen)[0]
            - _objective(term, minus, instance, settings, frozen)[0]
        ) / (2.0 * step)
    return relative_error(analytic, numeric)


def parameter_gradient_error(
    term: str, model: ToySegmenter, instance: Instance, settings: LossSettings, step: float = FD_STEP
) -> float:
    """Analytic gradient on theta and HSV coefficients against central differences."""
    settings = replace(settings, hsv_params=model.hsv_params)
    mask = model.predict_features(instance.features)
    frozen = freeze_sets(mask, settings)
    _, grad_mask = _objective(term, mask, instance, settings, frozen)
    hsv_weight = {"composite": settings.weights.lambda_hsv, "hsv": 1.0}.get(term, 0.0)
    analytic = np.concatenate(
        [
            theta_gradient(instance.features, mask, grad_mask),
            hsv_weight * hsv_param_gradient(mask, instance.hsv, settings.hsv_params),
        ]
    )

    def value_at(parameters: np.ndarray) -> float:
        moved = model.with_parameters(parameters[:FEATURE_COUNT], parameters[FEATURE_COUNT:])
        moved_settings = replace(settings, hsv_params=moved.hsv_params)
        return _objective(term, moved.predict_features(instance.features), instance, moved_settings, frozen)[0]

    base = model.parameters
    numeric = np.zeros_like(base)
    for i in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += step
        minus[i] -= step
        numeric[i] = (value_at(plus) - value_at(minus)) / (2.0 * step)
    return relative_error(analytic, numeric)


def gradcheck(
    model: ToySegmenter,
    instance: Instance,
    tolerance: float = 1e-5,
    settings: Optional[LossSettings] = None,
    terms: Optional[Sequence[str]] = None,
    raise_on_failure: bool = True,
) -> GradcheckReport:
    """
    Check dL/dM and the parameter gradient of each requested term (unit
    weight) and of the weighted composite against central differences.
    """
    if max(instance.labels.shape) > 12:
        raise InvalidParameter("gradient checks run on instances of at most 12x12")
    settings = settings or LossSettings()
    settings = replace(settings, hsv_params=model.hsv_params)
    names = list(TERMS) + ["composite"] if terms is None else list(terms)

    report = GradcheckReport(tolerance=tolerance)
    mask = model.predict_features(instance.features)
    for name in names:
        if name != "composite" and name not in TERMS:
            raise InvalidParameter(f"unknown loss term `{name}`")
        term_settings = settings if name == "composite" else replace(
            settings, weights=LossWeights().only(name)
        )
        report.mask_errors[name] = mask_gradient_error(name, mask, instance, term_settings)
        report.theta_errors[name] = parameter_gradient_error(name, model, instance, term_settings)
        log.debug(
            f"gradcheck {name}: dL/dM {report.mask_errors[name]:.3e} "
            f"dL/dtheta {report.theta_errors[name]:.3e}"
        )

    if raise_on_failure and not report.passed:
        raise GradcheckFailure(report)
    return report
