"""
dperm unit tests: loss functions, derivatives and sensitivity bounds.
"""

import math

import numpy as np
import pytest
from scipy.special import expit

from dperm.errors import DimensionMismatch, InvalidParameter
from dperm.losses import (
    LossModel,
    covariance_sensitivity,
    hessian_sensitivity,
    loss_value,
    mean_hessian,
    per_record_gradient,
    per_record_hessian,
    record_gradients,
)

LOGISTIC = LossModel.logistic()
HUBER = LossModel.huber(1.0)
KINK_GUARD = 1e-4


def random_unit_ball(gen, n, d):
    x = gen.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * gen.uniform(size=(n, 1)) ** (1.0 / d)


def away_from_kinks(m, z):
    return m is LOGISTIC or abs(abs(1.0 - z) - m.h) > KINK_GUARD


@pytest.mark.unit
class TestLossValues:
    def test_logistic_at_zero(self):
        assert loss_value(LOGISTIC, 0.0) == pytest.approx(math.log(2), abs=1e-12)

    @pytest.mark.parametrize(
        "z,expected",
        [
            (3.0, 0.0),
            (0.0, 1.0),
            (-2.0, 3.0),
            (1.0, 0.25),
        ],
    )
    def test_huber_branches(self, z, expected):
        assert loss_value(HUBER, z) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("h", [0.5, 1.0, 2.0])
    def test_huber_continuous_at_kinks(self, h):
        m = LossModel.huber(h)
        for z in (1.0 + h, 1.0 - h):
            left, right = m.value(z - 1e-13), m.value(z + 1e-13)
            assert abs(float(left) - float(right)) < 1e-12

    def test_logistic_large_margin_is_stable(self):
        assert loss_value(LOGISTIC, -800.0) == pytest.approx(800.0)
        assert loss_value(LOGISTIC, 800.0) == pytest.approx(0.0, abs=1e-300)

    @pytest.mark.parametrize("h", [0.0, -1.0, math.inf])
    def test_huber_rejects_bad_width(self, h):
        with pytest.raises(InvalidParameter):
            LossModel.huber(h)

    @pytest.mark.parametrize("m,t", [(LOGISTIC, 0.25), (HUBER, 0.5), (LossModel.huber(0.5), 1.0)])
    def test_second_derivative_bound_constant(self, m, t):
        assert m.t == t

    @pytest.mark.parametrize("m", [LOGISTIC, HUBER, LossModel.huber(0.3)])
    def test_derivative_bounds_on_a_million_points(self, m):
        z = np.random.default_rng(0).uniform(-50, 50, size=1_000_000)
        assert np.max(np.abs(m.derivative(z))) <= 1.0
        assert np.max(np.abs(m.second_derivative(z))) <= m.t


@pytest.mark.unit
class TestPerRecord:
    def test_logistic_gradient_at_zero(self):
        g = per_record_gradient(LOGISTIC, [1.0, 0.0], 1, np.zeros(2))
        assert g.tolist() == [-0.5, 0.0]

    def test_huber_gradient_middle_branch(self):
        g = per_record_gradient(HUBER, [1.0, 0.0], 1, np.zeros(2))
        assert g.tolist() == [-1.0, 0.0]

    def test_huber_gradient_linear_branch(self):
        g = per_record_gradient(HUBER, [0.0, 1.0], -1, np.array([0.0, 5.0]))
        assert g.tolist() == [0.0, 1.0]

    def test_logistic_hessian_at_zero(self):
        H = per_record_hessian(LOGISTIC, [1.0, 0.0], 1, np.zeros(2))
        np.testing.assert_allclose(H, [[0.25, 0.0], [0.0, 0.0]])

    def test_huber_hessian_in_band(self):
        H = per_record_hessian(HUBER, [1.0, 0.0], 1, np.zeros(2))
        np.testing.assert_allclose(H, [[0.5, 0.0], [0.0, 0.0]])

    def test_huber_hessian_outside_band(self):
        H = per_record_hessian(HUBER, [0.6, 0.8], 1, np.array([3.0, 4.0]))
        assert not H.any()

    def test_huber_hessian_on_kink_uses_band_value(self):
        # z = 2 = 1 + h
        H = per_record_hessian(HUBER, [1.0], 1, np.array([2.0]))
        assert H[0, 0] == 0.5

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            per_record_gradient(LOGISTIC, [1.0, 0.0], 1, np.zeros(3))
        with pytest.raises(DimensionMismatch):
            per_record_hessian(HUBER, [1.0], 1, np.zeros(2))

    def test_batch_forms_match_per_record(self, lr_data):
        theta = np.array([0.3, -0.2, 0.1])
        G = record_gradients(LOGISTIC, lr_data.X, lr_data.y, theta)
        for i in (0, 17, 399):
            np.testing.assert_allclose(
                G[i], per_record_gradient(LOGISTIC, lr_data.X[i], int(lr_data.y[i]), theta), atol=1e-12
            )
        H = sum(per_record_hessian(LOGISTIC, x, int(y), theta) for x, y in zip(lr_data.X, lr_data.y, strict=True))
        np.testing.assert_allclose(mean_hessian(LOGISTIC, lr_data.X, lr_data.y, theta), H / lr_data.n, atol=1e-12)


@pytest.mark.unit
class TestFiniteDifferences:
    STEP = 1e-6

    @pytest.mark.parametrize("m", [LOGISTIC, HUBER])
    def test_gradient(self, m):
        gen = np.random.default_rng(1)
        checked = 0
        while checked < 100:
            d = int(gen.integers(1, 5))
            x = random_unit_ball(gen, 1, d)[0]
            y = int(gen.choice([-1, 1]))
            theta = gen.normal(0, 2, d)
            # FD step moves z by at most STEP·‖x‖
            z = y * float(theta @ x)
            if not away_from_kinks(m, z):
                continue
            g = per_record_gradient(m, x, y, theta)
            fd = np.empty(d)
            for j in range(d):
                e = np.zeros(d)
                e[j] = self.STEP
                fd[j] = (loss_value(m, y * (theta + e) @ x) - loss_value(m, y * (theta - e) @ x)) / (2 * self.STEP)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)
            checked += 1

    @pytest.mark.parametrize("m", [LOGISTIC, HUBER])
    def test_hessian(self, m):
        gen = np.random.default_rng(2)
        checked = 0
        while checked < 100:
            d = int(gen.integers(1, 5))
            x = random_unit_ball(gen, 1, d)[0]
            y = int(gen.choice([-1, 1]))
            theta = gen.normal(0, 2, d)
            if not away_from_kinks(m, y * float(theta @ x)):
                continue
            H = per_record_hessian(m, x, y, theta)
            fd = np.empty((d, d))
            for j in range(d):
                e = np.zeros(d)
                e[j] = self.STEP
                fd[:, j] = (
                    per_record_gradient(m, x, y, theta + e) - per_record_gradient(m, x, y, theta - e)
                ) / (2 * self.STEP)
            np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-8)
            checked += 1


@pytest.mark.unit
class TestSensitivity:
    @pytest.mark.parametrize(
        "m,n,expected",
        [
            (LOGISTIC, 1000, 0.0005),
            (HUBER, 1000, 0.001),
            (LOGISTIC, 1, 0.5),
            (LossModel.huber(0.5), 100, 0.02),
        ],
    )
    def test_hessian_sensitivity(self, m, n, expected):
        assert hessian_sensitivity(m, n) == pytest.approx(expected, rel=1e-15)

    def test_covariance_sensitivity_at_zero(self):
        assert covariance_sensitivity(LOGISTIC, 1000, np.zeros(3)) == pytest.approx(0.0005, rel=1e-15)

    def test_covariance_sensitivity_huber(self):
        assert covariance_sensitivity(HUBER, 500, np.ones(3)) == pytest.approx(0.004, rel=1e-15)

    def test_covariance_sensitivity_logistic_norm_two(self):
        s = covariance_sensitivity(LOGISTIC, 100, np.array([1.2, 1.6]))
        assert s == pytest.approx(2 * expit(2.0) ** 2 / 100, rel=1e-12)

    def test_rejects_empty_n(self):
        with pytest.raises(InvalidParameter):
            hessian_sensitivity(LOGISTIC, 0)


@pytest.mark.statistical
class TestEmpiricalSensitivity:
    @pytest.mark.parametrize("m", [LOGISTIC, HUBER, LossModel.huber(0.5)])
    def test_single_record_swaps_stay_within_bounds(self, m):
        gen = np.random.default_rng(3)
        c = 0.01
        violations = 0
        for _ in range(1000):
            n = int(gen.integers(1, 201))
            d = int(gen.integers(1, 6))
            X = random_unit_ball(gen, n, d)
            y = gen.choice([-1, 1], size=n)
            theta = gen.normal(0, 3, d)
            X2, y2 = X.copy(), y.copy()
            i = int(gen.integers(n))
            X2[i] = random_unit_ball(gen, 1, d)[0]
            y2[i] = gen.choice([-1, 1])

            dH = mean_hessian(m, X, y, theta) - mean_hessian(m, X2, y2, theta)
            G1, G2 = record_gradients(m, X, y, theta), record_gradients(m, X2, y2, theta)
            extra = 4 * c * c * np.outer(theta, theta)
            dS = (G1.T @ G1 / n - extra) - (G2.T @ G2 / n - extra)

            if np.linalg.norm(dH) > hessian_sensitivity(m, n) * (1 + 1e-12):
                violations += 1
            if np.linalg.norm(dS) > covariance_sensitivity(m, n, theta) * (1 + 1e-12):
                violations += 1
        assert violations == 0
