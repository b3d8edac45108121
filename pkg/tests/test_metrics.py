"""Fréchet distance closed forms and diversity statistics."""

import math

import numpy as np
import pytest

from sparseguide.errors import DimensionError, NumericError
from sparseguide.metrics import (
    GaussianSummary,
    frechet_distance,
    gaussian_fit,
    pairwise_diversity,
)


class TestGaussianFit:
    def test_identical_points_zero_covariance(self):
        pts = np.tile([1.5, -2.0], (10, 1))
        s = gaussian_fit(pts)
        assert np.allclose(s.covariance, 0.0)

    def test_two_point_hand_value(self):
        s = gaussian_fit(np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert np.array_equal(s.mean, [1.0, 0.0])
        assert np.array_equal(s.covariance, [[2.0, 0.0], [0.0, 0.0]])  # n-1 divisor

    def test_standard_normal_statistics(self):
        rng = np.random.default_rng(0)
        s = gaussian_fit(rng.normal(size=(100_000, 2)))
        assert np.all(np.abs(s.mean) < 0.02)
        assert np.all(np.abs(s.covariance - np.eye(2)) < 0.02)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            gaussian_fit(np.zeros((1, 2)))


def summary(mean, cov, count=100):
    return GaussianSummary(np.asarray(mean, float), np.asarray(cov, float), count)


class TestFrechetDistance:
    def test_identical_summaries(self):
        s = summary([0.3, -0.7], [[1.2, 0.1], [0.1, 0.8]])
        assert frechet_distance(s, s) == pytest.approx(0.0, abs=1e-9)

    def test_unit_mean_shift(self):
        a = summary([0.0, 0.0], np.eye(2))
        b = summary([1.0, 0.0], np.eye(2))
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_commuting_covariances(self):
        a = summary([0.0, 0.0], np.eye(2))
        b = summary([0.0, 0.0], 4.0 * np.eye(2))
        # Tr(I + 4I - 2*sqrt(4I)) = Tr(I) = 2
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        m = rng.normal(size=(2, 2))
        cov_a = m @ m.T + 0.5 * np.eye(2)
        m2 = rng.normal(size=(2, 2))
        cov_b = m2 @ m2.T + 0.5 * np.eye(2)
        a = summary(rng.normal(size=2), cov_a)
        b = summary(rng.normal(size=2), cov_b)
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-9)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(2)
        xa = rng.normal(size=(4000, 2)) @ np.array([[1.0, 0.4], [0.0, 0.7]])
        xb = rng.normal(size=(4000, 2)) + np.array([0.5, -0.2])
        theta = 0.77
        rot = np.array(
            [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
        )
        d0 = frechet_distance(gaussian_fit(xa), gaussian_fit(xb))
        d1 = frechet_distance(gaussian_fit(xa @ rot.T), gaussian_fit(xb @ rot.T))
        assert d0 == pytest.approx(d1, rel=1e-9)

    def test_dimension_mismatch(self):
        a = summary([0.0], [[1.0]])
        b = summary([0.0, 0.0], np.eye(2))
        with pytest.raises(DimensionError):
            frechet_distance(a, b)

    def test_non_psd_rejected(self):
        with pytest.raises(NumericError):
            summary([0.0, 0.0], [[1.0, 0.0], [0.0, -0.5]])


class TestPairwiseDiversity:
    def test_identical_samples(self):
        pts = np.tile([0.4, 0.4], (32, 1))
        assert pairwise_diversity(pts) == 0.0

    def test_single_pair(self):
        pts = np.array([[0.0, 0.0], [3.0, 0.0]])
        assert pairwise_diversity(pts) == 3.0

    def test_standard_normal_expectation(self):
        # E||X - Y|| for X, Y ~ N(0, I_2) equals sqrt(pi)
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(100_000, 2))
        assert abs(pairwise_diversity(pts, seed=5) - math.sqrt(math.pi)) < 0.02

    def test_translation_invariance(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(500, 2))
        shifted = pts + np.array([100.0, -40.0])
        assert pairwise_diversity(pts, seed=1) == pytest.approx(
            pairwise_diversity(shifted, seed=1), rel=1e-12
        )

    def test_linear_scaling(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(400, 2))
        assert pairwise_diversity(3.0 * pts, seed=2) == pytest.approx(
            3.0 * pairwise_diversity(pts, seed=2), rel=1e-9
        )

    def test_seed_determinism(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(20_000, 2))
        a = pairwise_diversity(pts, seed=9, num_pairs=1000)
        b = pairwise_diversity(pts, seed=9, num_pairs=1000)
        assert a == b

    def test_too_few(self):
        with pytest.raises(ValueError):
            pairwise_diversity(np.zeros((1, 2)))
