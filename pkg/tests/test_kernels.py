import math

import numpy as np
import pytest

from crr.kernels import (
    KERNEL_FAMILIES,
    KernelSpec,
    LossConfig,
    kernel_eval,
    loss,
    loss_by_quadrature,
    loss_prime,
    loss_prime_by_quadrature,
    loss_second,
    validate_kernel,
)

EPA = KernelSpec("epanechnikov")


def cfg(h=1.0, family="epanechnikov", scale=1.0):
    return LossConfig(KernelSpec(family, scale=scale), h)


class TestKernelEval:
    def test_epanechnikov_at_zero(self):
        assert kernel_eval(EPA, 0.0) == 0.75

    def test_outside_support(self):
        assert kernel_eval(EPA, 1.5) == 0.0
        assert kernel_eval(EPA, -1.01) == 0.0

    def test_gaussian_at_zero(self):
        assert kernel_eval(KernelSpec("gaussian"), 0.0) == pytest.approx(
            1.0 / math.sqrt(2.0 * math.pi), abs=1e-12
        )

    @pytest.mark.parametrize("family", KERNEL_FAMILIES)
    def test_axioms(self, family):
        validate_kernel(KernelSpec(family))
        validate_kernel(KernelSpec(family, scale=2.5))

    def test_rescaled_support(self):
        spec = KernelSpec("epanechnikov", scale=2.0)
        assert spec.support == 2.0
        assert kernel_eval(spec, 1.5) > 0
        assert kernel_eval(spec, 2.1) == 0.0
        assert KernelSpec("gaussian").support is None

    def test_bad_family_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec("triangle")
        with pytest.raises(ValueError):
            KernelSpec("epanechnikov", scale=0.0)


class TestLossValues:
    def test_loss_at_zero_is_three_eighths_h(self):
        assert loss(cfg(1.0), 0.0) == pytest.approx(0.375, abs=1e-15)
        assert loss(cfg(2.0), 0.0) == pytest.approx(0.75, abs=1e-15)

    def test_loss_outside_bandwidth_is_abs(self):
        assert loss(cfg(1.0), 2.0) == 2.0
        assert loss(cfg(1.0), -3.5) == 3.5

    def test_loss_continuous_at_boundary(self):
        assert loss(cfg(1.0), 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_loss_prime_values(self):
        c = cfg(1.0)
        assert loss_prime(c, 0.0) == 0.0
        assert loss_prime(c, 1.0) == 1.0
        assert loss_prime(c, 5.0) == 1.0
        assert loss_prime(c, -2.0) == -1.0
        assert loss_prime(c, 0.5) == pytest.approx(0.6875, abs=1e-15)

    def test_loss_second_values(self):
        assert loss_second(cfg(1.0), 0.0) == pytest.approx(1.5, abs=1e-15)
        assert loss_second(cfg(1.0), 2.0) == 0.0
        assert loss_second(cfg(2.0), 0.0) == pytest.approx(0.75, abs=1e-15)

    def test_bandwidth_must_be_positive(self):
        with pytest.raises(ValueError):
            LossConfig(EPA, 0.0)
        with pytest.raises(ValueError):
            LossConfig(EPA, -1.0)


class TestClosedFormsAgainstQuadrature:
    @pytest.mark.parametrize("family", KERNEL_FAMILIES)
    @pytest.mark.parametrize("h", [0.25, 1.0, 2.0])
    def test_loss_and_prime(self, family, h):
        c = cfg(h, family)
        for u in np.linspace(-3 * h, 3 * h, 25):
            assert loss(c, float(u)) == pytest.approx(
                loss_by_quadrature(c, float(u)), abs=1e-8
            )
            assert loss_prime(c, float(u)) == pytest.approx(
                loss_prime_by_quadrature(c, float(u)), abs=1e-8
            )

    def test_rescaled_kernel_agrees_with_quadrature(self):
        c = cfg(0.8, "epanechnikov", scale=1.7)
        for u in np.linspace(-2.0, 2.0, 11):
            assert loss(c, float(u)) == pytest.approx(
                loss_by_quadrature(c, float(u)), abs=1e-8
            )


class TestProperties:
    @pytest.mark.parametrize("family", KERNEL_FAMILIES)
    def test_prime_bounded_and_second_nonnegative(self, family):
        rng = np.random.default_rng(0)
        u = rng.standard_normal(500) * 5
        for h in (0.3, 1.0, 4.0):
            c = cfg(h, family)
            assert np.all(np.abs(loss_prime(c, u)) <= 1.0 + 1e-15)
            assert np.all(loss_second(c, u) >= 0.0)

    @pytest.mark.parametrize("family", KERNEL_FAMILIES)
    def test_small_h_recovers_absolute_value(self, family):
        c = cfg(1e-3, family)
        for u in (0.1, -0.25, 1.0, -3.0):
            assert loss(c, u) == pytest.approx(abs(u), abs=1e-3)

    @pytest.mark.parametrize("family", KERNEL_FAMILIES)
    def test_loss_is_even(self, family):
        rng = np.random.default_rng(1)
        u = rng.standard_normal(200) * 3
        c = cfg(0.9, family)
        assert np.allclose(loss(c, u), loss(c, -u), atol=1e-14)

    @pytest.mark.parametrize("family", KERNEL_FAMILIES)
    def test_finite_difference_ladder(self, family):
        c = cfg(0.7, family)
        delta = 1e-5
        for u in np.linspace(-1.5, 1.5, 13):
            u = float(u)
            fd1 = (loss(c, u + delta) - loss(c, u - delta)) / (2 * delta)
            assert fd1 == pytest.approx(loss_prime(c, u), abs=5e-8)
            fd2 = (loss_prime(c, u + delta) - loss_prime(c, u - delta)) / (2 * delta)
            assert fd2 == pytest.approx(loss_second(c, u), abs=5e-6)

    def test_loss_nonnegative_and_dominates_abs(self):
        rng = np.random.default_rng(2)
        u = rng.standard_normal(300) * 2
        vals = loss(cfg(0.5), u)
        assert np.all(vals >= np.abs(u))

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        u = rng.standard_normal(50)
        for family in KERNEL_FAMILIES:
            c = cfg(1.3, family)
            vec = loss_prime(c, u)
            assert all(vec[i] == loss_prime(c, float(u[i])) for i in range(10))
