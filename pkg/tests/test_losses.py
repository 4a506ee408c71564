import unittest
from dataclasses import replace

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from coastal.waterseg.grids import HsvImage, rgb_to_hsv
from coastal.waterseg.losses import TERMS, ConnConfig, HsvPriorParams, LossSettings, LossWeights
from coastal.waterseg.losses import freeze_sets, hsv_confidence_weights, hsv_param_gradient
from coastal.waterseg.losses import hsv_water_likelihood, loss_ce, loss_coast, loss_conn
from coastal.waterseg.losses import loss_conn_soft, loss_hsv, loss_robust, loss_sea
from coastal.waterseg.losses import term_value_and_grad
from coastal.waterseg.synth import SceneSpec, generate
from coastal.waterseg.utils import InvalidParameter
from .utils import central_difference, coastline_walk_mask, small_benchmark


def hsv_pixel(h, s, v) -> HsvImage:
    return HsvImage(np.array([[h]]), np.array([[s]]), np.array([[v]]))


def max_relative_error(analytic, numeric) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    error = np.max(np.abs(analytic - numeric))
    return error / scale if scale > 1e-8 else error


def instance(seed: int, size: int):
    rng = np.random.default_rng(seed)
    image, labels = generate(SceneSpec(height=size, width=size, noise=0.1, seed=seed))
    mask = coastline_walk_mask(rng, (size, size))
    params = HsvPriorParams().with_coefficients(rng.standard_normal(4))
    return mask, labels, rgb_to_hsv(image), params


class TestHsvPrior(unittest.TestCase):
    def test_likelihood_examples(self):
        hsv = hsv_pixel(0.55, 0.3, 0.4)
        assert hsv_water_likelihood(hsv, HsvPriorParams())[0, 0] == 0.5
        saturated = HsvPriorParams(beta=50.0)
        self.assertAlmostEqual(hsv_water_likelihood(hsv, saturated)[0, 0], 1.0, delta=1e-15)
        params = HsvPriorParams(alpha_h=1.0, alpha_s=-2.0, alpha_v=0.5, beta=0.1)
        expected = 1.0 / (1.0 + np.exp(-0.25))
        self.assertAlmostEqual(hsv_water_likelihood(hsv, params)[0, 0], expected, places=15)

    def test_confidence_weight_examples(self):
        params = HsvPriorParams(sigma_bw=0.2, ref_hsv=(0.5, 0.2, 0.3))
        assert hsv_confidence_weights(hsv_pixel(0.5, 0.2, 0.3), params)[0, 0] == 1.0
        self.assertAlmostEqual(
            hsv_confidence_weights(hsv_pixel(0.5, 0.2, 0.7), params)[0, 0], np.exp(-2.0), places=14
        )
        self.assertAlmostEqual(
            hsv_confidence_weights(hsv_pixel(0.5, 0.4, 0.3), params)[0, 0], np.exp(-0.5), places=14
        )

    def test_hue_distance_wraps(self):
        params = HsvPriorParams(sigma_bw=0.2, ref_hsv=(0.95, 0.5, 0.5))
        near = hsv_confidence_weights(hsv_pixel(0.05, 0.5, 0.5), params)[0, 0]
        self.assertAlmostEqual(near, np.exp(-0.01 / 0.08), places=12)

    def test_invalid_params(self):
        with self.assertRaises(InvalidParameter):
            HsvPriorParams(sigma_bw=0.0)
        with self.assertRaises(InvalidParameter):
            HsvPriorParams(ref_hsv=(1.0, 0.5, 0.5))

    def test_loss_hsv_examples(self):
        params = HsvPriorParams(ref_hsv=(0.5, 0.5, 0.5))
        value, grad = loss_hsv(np.array([[0.8]]), hsv_pixel(0.5, 0.5, 0.5), params)
        self.assertAlmostEqual(value, 0.09, places=15)
        self.assertAlmostEqual(grad[0, 0], 0.6, places=15)

        _, _, hsv, params = instance(1, 6)
        value, grad = loss_hsv(hsv_water_likelihood(hsv, params), hsv, params)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_coefficient_gradient(self):
        for seed in range(5):
            mask, _, hsv, params = instance(seed, 6)

            def value_at(coefficients):
                return loss_hsv(mask, hsv, params.with_coefficients(coefficients))[0]

            numeric = central_difference(value_at, params.coefficients)
            analytic = hsv_param_gradient(mask, hsv, params)
            assert max_relative_error(analytic, numeric) < 1e-6


class TestCoast(unittest.TestCase):
    def test_constant_mask(self):
        value, grad = loss_coast(np.full((5, 5), 0.7), 3, 0.5)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_binary_step(self):
        mask = np.zeros((4, 4))
        mask[:, :2] = 1.0
        value, _ = loss_coast(mask, 3, 0.5)
        # band = columns 1 and 2; only column 1 holds a unit difference
        assert value == 0.5


class TestConn(unittest.TestCase):
    def test_examples(self):
        cfg = ConnConfig(max_regions=10)
        assert loss_conn(np.array([[1.0], [0.0], [1.0], [0.0]]), cfg)[0] == 0.1
        assert loss_conn(np.zeros((4, 3)), cfg)[0] == 0.0
        single = np.zeros((6, 4))
        single[2:, :] = 0.9
        assert loss_conn(single, cfg)[0] == 0.0

    def test_flip_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            mask = rng.random((8, 7))
            assert loss_conn(mask, ConnConfig())[0] == loss_conn(mask[::-1], ConnConfig())[0]

    def test_soft_matches_hard_on_saturated_masks(self):
        rng = np.random.default_rng(4)
        cfg = ConnConfig(tau_soft=1e-3)
        for _ in range(20):
            mask = (rng.random((8, 6)) < 0.5).astype(np.float64)
            hard, _ = loss_conn(mask, cfg)
            soft, _ = loss_conn_soft(mask, cfg)
            self.assertAlmostEqual(hard, soft, delta=1e-9)

    def test_ground_truth_labels_are_connected(self):
        for scene in small_benchmark().scenes:
            assert loss_conn(scene.labels, ConnConfig())[0] == 0.0
            assert loss_coast(np.full(scene.labels.shape, 0.3), 3, 0.5)[0] == 0.0


class TestSea(unittest.TestCase):
    def test_uniform_and_empty(self):
        assert loss_sea(np.full((8, 8), 0.9), 5, 25, 0.5)[0] == 0.0
        value, grad = loss_sea(np.full((8, 8), 0.1), 5, 25, 0.5)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_small_components_ignored(self):
        mask = np.full((8, 8), 0.1)
        mask[0:2, 0:2] = 0.9
        assert loss_sea(mask, 3, 5, 0.5)[0] == 0.0
        assert loss_sea(mask, 3, 4, 0.5)[0] > 0.0


class TestCrossEntropy(unittest.TestCase):
    def test_examples(self):
        self.assertAlmostEqual(loss_ce(np.array([[0.5]]), np.array([[1.0]]))[0], np.log(2.0), places=15)
        value, grad = loss_ce(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), 1e-7)
        self.assertAlmostEqual(value, -np.log(1.0 - 1e-7), places=15)
        np.testing.assert_array_equal(grad, 0.0)

    def test_rejects_bad_clamp(self):
        with self.assertRaises(InvalidParameter):
            loss_ce(np.array([[0.5]]), np.array([[1.0]]), 0.5)


class TestGradients(unittest.TestCase):
    settings = LossSettings(sea_min_area=4, sea_window=3)

    def test_every_term_matches_finite_differences(self):
        for seed in range(20):
            size = 6 + seed % 7
            mask, labels, hsv, params = instance(seed, size)
            settings = replace(self.settings, hsv_params=params)
            frozen = freeze_sets(mask, settings)
            for term in TERMS:
                _, analytic = term_value_and_grad(term, mask, labels, hsv, settings, frozen, soft=True)
                numeric = central_difference(
                    lambda m: term_value_and_grad(term, m, labels, hsv, settings, frozen, soft=True)[0],
                    mask,
                )
                error = max_relative_error(analytic, numeric)
                assert error < 1e-5, f"{term} seed {seed}: {error:.3e}"

    def test_composite_surrogate_matches_finite_differences(self):
        for seed in range(20):
            mask, labels, hsv, params = instance(100 + seed, 8)
            settings = replace(self.settings, hsv_params=params)
            frozen = freeze_sets(mask, settings)
            bundle = loss_robust(mask, labels, hsv, settings, frozen)
            numeric = central_difference(
                lambda m: loss_robust(m, labels, hsv, settings, frozen).l_surrogate, mask
            )
            assert max_relative_error(bundle.grad, numeric) < 1e-5

    def test_sea_instance_has_a_sea(self):
        mask, labels, hsv, params = instance(0, 8)
        mask = np.maximum(mask, 0.6 * (np.arange(8)[:, None] >= 3))
        frozen = freeze_sets(mask, self.settings)
        assert frozen.sea.any()
        value, analytic = loss_sea(mask, 3, 4, 0.5, sea=frozen.sea)
        numeric = central_difference(lambda m: loss_sea(m, 3, 4, 0.5, sea=frozen.sea)[0], mask)
        assert value > 0.0
        assert max_relative_error(analytic, numeric) < 1e-6


class TestComposite(unittest.TestCase):
    def test_ce_only_bundle(self):
        mask, labels, hsv, _ = instance(7, 8)
        settings = LossSettings(weights=LossWeights().only("ce"))
        bundle = loss_robust(mask, labels, hsv, settings)
        value, grad = loss_ce(mask, labels)
        assert bundle.l_robust == value
        np.testing.assert_array_equal(bundle.grad, grad)

    def test_unit_weights_sum(self):
        mask, labels, hsv, params = instance(8, 8)
        settings = LossSettings(weights=LossWeights(1.0, 1.0, 1.0, 1.0, 1.0), hsv_params=params)
        bundle = loss_robust(mask, labels, hsv, settings)
        total = sum(term_value_and_grad(t, mask, labels, hsv, settings)[0] for t in TERMS)
        self.assertAlmostEqual(bundle.l_robust, total, delta=1e-12 * max(1.0, total))
        assert all(v >= 0.0 for v in bundle.components().values())

    def test_doubling_weights_doubles_exactly(self):
        mask, labels, hsv, params = instance(9, 10)
        settings = LossSettings(hsv_params=params)
        doubled = replace(settings, weights=settings.weights.scaled(2.0))
        one, two = loss_robust(mask, labels, hsv, settings), loss_robust(mask, labels, hsv, doubled)
        assert two.l_robust == 2.0 * one.l_robust
        np.testing.assert_array_equal(two.grad, 2.0 * one.grad)

    def test_permutation_invariance(self):
        mask, labels, hsv, params = instance(10, 8)
        order = np.random.default_rng(0).permutation(64)

        def shuffle(grid):
            return grid.reshape(-1)[order].reshape(8, 8)

        shuffled = HsvImage(shuffle(hsv.h), shuffle(hsv.s), shuffle(hsv.v))
        self.assertAlmostEqual(loss_ce(mask, labels)[0], loss_ce(shuffle(mask), shuffle(labels))[0], places=12)
        self.assertAlmostEqual(
            loss_hsv(mask, hsv, params)[0], loss_hsv(shuffle(mask), shuffled, params)[0], places=12
        )

    def test_weights_validation(self):
        with self.assertRaises(InvalidParameter):
            LossWeights(lambda_ce=-1.0)
        with self.assertRaises(InvalidParameter):
            LossWeights(0.0, 0.0, 0.0, 0.0, 0.0).require_active()
        with self.assertRaises(InvalidParameter):
            term_value_and_grad("tv", np.zeros((2, 2)), np.zeros((2, 2)), hsv_pixel(0, 0, 0), LossSettings())

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (6, 6), elements=st.floats(0.0, 1.0)), st.integers(0, 1000))
    def test_components_are_non_negative(self, mask, seed):
        _, labels, hsv, params = instance(seed, 6)
        bundle = loss_robust(mask, labels, hsv, LossSettings(hsv_params=params))
        assert all(v >= 0.0 for v in bundle.components().values())
        assert bundle.l_surrogate >= 0.0
