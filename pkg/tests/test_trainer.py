import json
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

from coastal.waterseg.common import Recorder
from coastal.waterseg.grids import rgb_to_hsv
from coastal.waterseg.losses import HsvPriorParams, LossSettings, LossWeights, hsv_water_likelihood
from coastal.waterseg.messages import TrainReport, TrainSummary
from coastal.waterseg.postprocess import PostprocConfig
from coastal.waterseg.synth import Benchmark, make_benchmark
from coastal.waterseg.trainer import ABLATION_ROWS, Comparison, TrainConfig, ablate, compare_with_baseline
from coastal.waterseg.trainer import evaluate
from coastal.waterseg.trainer import estimate_lipschitz, find_stable_learning_rate, format_mean_std
from coastal.waterseg.trainer import gradcheck, gradcheck_model, is_non_increasing
from coastal.waterseg.trainer import lipschitz_trace, mask_gradient_error, pearson, random_instance
from coastal.waterseg.trainer import relative_error, rho_correlation, summarize, train
from coastal.waterseg.trainer import water_reference_hsv
from coastal.waterseg.utils import GradcheckFailure, InvalidParameter, NumericalDivergence
from .utils import small_benchmark


CE_HSV = LossWeights(1.0, 0.5, 0.0, 0.0, 0.0)


def quick_config(**changes) -> TrainConfig:
    config = TrainConfig(epochs=5, lipschitz_trials=0, log_every=1000)
    return replace(config, **changes)


class TestMetrics(unittest.TestCase):
    def test_perfect_and_complement(self):
        labels = np.array([[1.0, 0.0], [1.0, 0.0]])
        perfect = evaluate(labels, labels)
        assert (perfect.iou, perfect.f1, perfect.accuracy) == (1.0, 1.0, 1.0)
        opposite = evaluate(1.0 - labels, labels)
        assert (opposite.iou, opposite.f1, opposite.accuracy) == (0.0, 0.0, 0.0)

    def test_confusion_matrix_case(self):
        labels = np.array([[1.0, 0.0], [0.0, 0.0]])
        metrics = evaluate(np.array([[0.9, 0.8], [0.1, 0.2]]), labels)
        assert metrics.iou == 0.5
        self.assertAlmostEqual(metrics.f1, 2.0 / 3.0, places=15)
        assert metrics.accuracy == 0.75

    def test_empty_union(self):
        metrics = evaluate(np.zeros((3, 3)), np.zeros((3, 3)))
        assert (metrics.iou, metrics.f1, metrics.accuracy) == (1.0, 1.0, 1.0)

    def test_permutation_symmetry(self):
        rng = np.random.default_rng(0)
        mask, labels = rng.random((6, 6)), (rng.random((6, 6)) < 0.5).astype(float)
        order = rng.permutation(36)
        shuffled = evaluate(mask.reshape(-1)[order].reshape(6, 6), labels.reshape(-1)[order].reshape(6, 6))
        assert shuffled == evaluate(mask, labels)

    def test_aggregate_format(self):
        mean, std = summarize([1.0, 2.0, 3.0])
        assert mean == 2.0
        self.assertAlmostEqual(std, np.sqrt(2.0 / 3.0), places=15)
        assert format_mean_std(0.96451, 0.0031) == "0.9645 ± 0.0031"


class TestCorrelation(unittest.TestCase):
    def test_two_points(self):
        rho, degenerate = pearson(np.array([0.2, 0.9]), np.array([0.0, 1.0]))
        self.assertAlmostEqual(rho, 1.0, places=12)
        assert not degenerate
        rho, _ = pearson(np.array([0.9, 0.2]), np.array([0.0, 1.0]))
        self.assertAlmostEqual(rho, -1.0, places=12)

    def test_constant_prior_is_degenerate(self):
        y = (np.random.default_rng(1).random(50) < 0.5).astype(float)
        with self.assertLogs(level="WARNING"):
            assert pearson(np.full(50, 0.5), y) == (0.0, True)

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        p, y = rng.random(40), (rng.random(40) < 0.5).astype(float)
        self.assertAlmostEqual(pearson(3.0 * p + 1.0, y)[0], pearson(p, y)[0], places=12)

    def test_fitted_prior_correlates_with_water(self):
        benchmark = small_benchmark()
        model, _ = train(benchmark, quick_config(epochs=1))
        rho, degenerate = rho_correlation(benchmark.scenes, model.hsv_params)
        assert rho > 0.3 and not degenerate
        with self.assertLogs(level="WARNING"):
            assert rho_correlation(benchmark.scenes, HsvPriorParams()) == (0.0, True)

    def test_reference_hsv_is_water_mean(self):
        h, s, v = water_reference_hsv(small_benchmark().scenes)
        assert abs(h - 0.58) < 0.05 and abs(s - 0.45) < 0.15 and abs(v - 0.45) < 0.15


class TestTrain(unittest.TestCase):
    def test_single_epoch_report(self):
        model, report = train(small_benchmark(), quick_config(epochs=1))
        assert len(report.records) == 1
        assert len(report.to_csv().splitlines()) == 2
        assert report.summary.variance_window == 1 and report.summary.late_iou_variance == 0.0
        assert model.theta.shape == (13,)

    def test_same_seed_is_bit_identical(self):
        config = quick_config(epochs=8, lipschitz_trials=20)
        _, first = train(small_benchmark(), config)
        _, second = train(small_benchmark(), config)
        _, threaded = train(small_benchmark(), replace(config, workers=3))
        assert first.to_csv() == second.to_csv() == threaded.to_csv()
        assert first.summary_text() == second.summary_text() == threaded.summary_text()

    def test_minibatch_epochs(self):
        _, report = train(small_benchmark(), quick_config(epochs=3, batch_size=2, seed=5))
        assert [r.epoch for r in report.records] == [1, 2, 3]

    def test_cross_entropy_descends(self):
        config = quick_config(epochs=60, learning_rate=0.25).with_weights(CE_HSV)
        _, report = train(small_benchmark(), config)
        losses = report.column("l_robust")
        assert is_non_increasing(losses)
        assert report.records[-1].l_ce < report.records[0].l_ce

    def test_gradient_norm_running_min(self):
        config = quick_config(epochs=400, learning_rate=0.25).with_weights(CE_HSV)
        _, report = train(small_benchmark(), config)
        minima = report.column("min_grad_norm")
        assert all(b <= a for a, b in zip(minima, minima[1:]))
        assert report.min_grad_norm_at(400) < report.min_grad_norm_at(100)

    def test_late_window_variance(self):
        _, report = train(small_benchmark(), quick_config(epochs=30))
        late = report.column("val_iou")[-20:]
        assert report.summary.variance_window == 20
        assert report.summary.late_iou_variance == float(np.var(late))
        assert report.summary.late_iou_mean == float(np.mean(late))

    def test_divergence_names_the_term(self):
        config = quick_config(divergence_limit=1e-3).with_weights(LossWeights().only("ce"))
        with self.assertRaises(NumericalDivergence) as raised:
            train(small_benchmark(), config)
        assert raised.exception.term == "ce"
        assert raised.exception.last_finite_epoch == 0

    def test_stable_learning_rate_is_a_halving(self):
        config = quick_config(learning_rate=64.0).with_weights(CE_HSV)
        rate = find_stable_learning_rate(small_benchmark(), config)
        assert rate <= 64.0 and np.log2(64.0 / rate) == int(np.log2(64.0 / rate))
        _, report = train(small_benchmark(), replace(config, learning_rate=rate))
        assert is_non_increasing(report.column("l_surrogate"))

    def test_stable_rate_descends_the_full_objective(self):
        config = quick_config(epochs=60)
        rate = find_stable_learning_rate(small_benchmark(), config)
        assert rate <= config.learning_rate
        _, report = train(small_benchmark(), replace(config, learning_rate=rate))
        assert len(report.records) == 60
        assert is_non_increasing(report.column("l_surrogate"))

    def test_full_objective_gradient_norm_running_min(self):
        _, report = train(small_benchmark(), quick_config(epochs=400, learning_rate=0.03125))
        assert report.min_grad_norm_at(400) < report.min_grad_norm_at(100)

    def test_records_events(self):
        with tempfile.TemporaryDirectory() as directory:
            with Recorder(Path(directory)) as recorder:
                train(small_benchmark(), quick_config(epochs=4), recorder)
            lines = (Path(directory) / "events.jsonl").read_text().splitlines()
        events = [json.loads(line) for line in lines]
        assert [e["payload"]["epoch"] for e in events] == [1, 2, 3, 4]

    def test_rejects_bad_inputs(self):
        benchmark = small_benchmark()
        with self.assertRaises(InvalidParameter):
            train(Benchmark(benchmark.train, 0), quick_config())
        with self.assertRaises(InvalidParameter):
            train(Benchmark(benchmark.train + [replace(benchmark.train[0], split="validation")]), quick_config())
        with self.assertRaises(InvalidParameter):
            train(benchmark, quick_config().with_weights(LossWeights(0.0, 0.0, 0.0, 0.0, 0.0)))
        with self.assertRaises(InvalidParameter):
            TrainConfig(learning_rate=0.0)
        with self.assertRaises(InvalidParameter):
            TrainConfig(epochs=0)


class TestLipschitz(unittest.TestCase):
    def test_running_max_stabilizes(self):
        trace = lipschitz_trace(LossSettings(), 1000, seed=0)
        assert np.all(np.isfinite(trace)) and trace[-1] > 0.0
        assert np.all(np.diff(trace) >= 0.0)
        assert (trace[-1] - trace[499]) / trace[499] < 0.01

    def test_zero_weights(self):
        settings = LossSettings(weights=LossWeights(0.0, 0.0, 0.0, 0.0, 0.0))
        assert estimate_lipschitz(settings, 50, seed=1) == 0.0

    def test_doubling_weights_doubles_estimate(self):
        settings = LossSettings()
        doubled = replace(settings, weights=settings.weights.scaled(2.0))
        assert estimate_lipschitz(doubled, 150, seed=2) == 2.0 * estimate_lipschitz(settings, 150, seed=2)

    def test_quadratic_prior_bound(self):
        params = HsvPriorParams(alpha_h=2.0, alpha_s=-1.0, beta=0.3, sigma_bw=1e6)
        settings = LossSettings(weights=LossWeights().only("hsv"), hsv_params=params)
        assert estimate_lipschitz(settings, 300, seed=3, size=16) <= 2.0 / 16.0

    def test_rejects_zero_trials(self):
        with self.assertRaises(InvalidParameter):
            estimate_lipschitz(LossSettings(), 0, seed=0)


class TestGradcheck(unittest.TestCase):
    def test_all_terms_pass_on_seeded_instances(self):
        for seed in range(20):
            report = gradcheck(gradcheck_model(seed), random_instance(6 + seed % 3, seed))
            assert report.passed, report.lines()
            assert set(report.mask_errors) == {"ce", "hsv", "coast", "conn", "sea", "composite"}

    def test_single_term(self):
        report = gradcheck(gradcheck_model(1), random_instance(8, 1), terms=["ce"])
        assert list(report.mask_errors) == ["ce"] and list(report.theta_errors) == ["ce"]
        assert report.mask_errors["ce"] < 1e-5

    def test_floor_below_finite_difference_accuracy(self):
        with self.assertRaises(GradcheckFailure) as raised:
            gradcheck(gradcheck_model(2), random_instance(6, 2), tolerance=1e-12, terms=["ce"])
        assert "ce/mask" in raised.exception.report.failures()
        report = gradcheck(
            gradcheck_model(2), random_instance(6, 2), 1e-12, terms=["ce"], raise_on_failure=False
        )
        assert not report.passed

    def test_zero_gradient_reports_absolute_error(self):
        instance = random_instance(6, 3)
        params = HsvPriorParams(alpha_h=1.0, alpha_v=-2.0, beta=0.5)
        settings = LossSettings(weights=LossWeights().only("hsv"), hsv_params=params)
        mask = hsv_water_likelihood(rgb_to_hsv(instance.image), params)
        assert mask_gradient_error("hsv", mask, instance, settings) < 1e-9

    def test_rejects_large_instances(self):
        with self.assertRaises(InvalidParameter):
            gradcheck(gradcheck_model(0), random_instance(13, 0))

    def test_relative_error(self):
        self.assertAlmostEqual(relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.5])), 0.2, places=15)
        self.assertAlmostEqual(relative_error(np.array([1e-10]), np.array([3e-10])), 2e-10, delta=1e-20)


class TestAblation(unittest.TestCase):
    def test_six_rows_with_shared_seed(self):
        config = quick_config(epochs=6, seed=11)
        rows = ablate(small_benchmark(), config, PostprocConfig())
        assert tuple(r.name for r in rows) == ABLATION_ROWS
        assert {r.seed for r in rows} == {11}
        for row in rows:
            assert row.delta_iou == rows[0].final_iou - row.final_iou
            assert row.refined_iou is not None and 0.0 <= row.refined_iou <= 1.0
        assert rows[0].delta_iou == 0.0

    def test_removing_a_zero_weight_is_a_no_op(self):
        config = quick_config(epochs=4).with_weights(LossWeights(1.0, 0.5, 0.1, 0.1, 0.0))
        rows = {r.name: r for r in ablate(small_benchmark(), config)}
        assert rows["-sea"].delta_iou == 0.0
        assert rows["-sea"].late_iou_variance == rows["full"].late_iou_variance
        assert rows["full"].refined_iou is None


class TestComparison(unittest.TestCase):
    def summary(self, variance, mean):
        return TrainSummary(10, 0, 0.5, mean, mean, mean, mean, variance, 10, 1.0, 0.5, False)

    def test_variance_reduction_and_gain(self):
        robust = TrainReport([], self.summary(1e-3, 0.9))
        baseline = TrainReport([], self.summary(4e-3, 0.85))
        comparison = Comparison(robust, baseline)
        self.assertAlmostEqual(comparison.variance_reduction, 0.75, places=12)
        self.assertAlmostEqual(comparison.late_iou_gain, 0.05, places=12)
        assert comparison.lines()[2].startswith("variance_reduction: ")
        flat = Comparison(robust, TrainReport([], self.summary(0.0, 0.85)))
        assert flat.variance_reduction == 0.0


class TestStabilityAgainstBaseline(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.benchmark = make_benchmark(40, 0.8, 7)
        cls.config = TrainConfig(lipschitz_trials=0)

    def test_robust_late_variance_does_not_exceed_baseline(self):
        _, _, comparison = compare_with_baseline(self.benchmark, self.config)
        assert len(comparison.robust.records) == len(comparison.baseline.records) == 200
        robust = comparison.robust.summary.late_iou_variance
        baseline = comparison.baseline.summary.late_iou_variance
        assert robust <= baseline
        assert comparison.variance_reduction >= 0.0

    def test_ablation_baseline_row_varies_at_least_as_much_as_full(self):
        rows = {row.name: row for row in ablate(self.benchmark, self.config)}
        assert rows["ce-only"].late_iou_variance >= rows["full"].late_iou_variance
