import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gammaln, ive

from src.sphere import special_fn as sf
from src.sphere.special_fn import BesselRatioMethod
from src.utils.errors import DomainError


def a3_closed_form(kappa):
    """coth(k) - 1/k, with the Taylor series where the closed form cancels"""
    if kappa < 0.1:
        k2 = kappa * kappa
        return kappa * (1 / 3 - k2 / 45 + 2 * k2 ** 2 / 945 - k2 ** 3 / 4725)
    return 1.0 / math.tanh(kappa) - 1.0 / kappa


def log_c3(kappa):
    log_sinh = kappa - math.log(2.0) + math.log(-math.expm1(-2.0 * kappa))
    return math.log(kappa) - math.log(4.0 * math.pi) - log_sinh


class TestBesselRatio:

    def test_zero_kappa(self):
        assert sf.bessel_ratio(3, 0.0) == 0.0
        assert sf.bessel_ratio_complement(3, 0.0) == 1.0

    def test_d3_value(self):
        assert sf.bessel_ratio(3, 1.0) == pytest.approx(0.3130352854993313, rel=1e-12)

    @pytest.mark.parametrize("kappa", np.logspace(-3, 3, 61))
    def test_d3_closed_form(self, kappa):
        expected = a3_closed_form(kappa)
        assert abs(sf.bessel_ratio(3, kappa) - expected) <= 1e-10 * max(1.0, expected)

    @pytest.mark.parametrize("D", [2, 5, 10, 50])
    @pytest.mark.parametrize("kappa", [0.05, 0.5, 5.0, 50.0, 500.0])
    def test_against_scaled_bessel(self, D, kappa):
        expected = ive(0.5 * D, kappa) / ive(0.5 * D - 1.0, kappa)
        assert sf.bessel_ratio(D, kappa) == pytest.approx(expected, rel=1e-10)

    def test_large_kappa_expansion(self):
        D, kappa = 100, 1e4
        value = sf.bessel_ratio(D, kappa)
        first_order = 1.0 - (D - 1) / (2.0 * kappa)
        assert abs(value - first_order) < 1e-4
        second_order = first_order + (D - 1) * (D - 3) / (8.0 * kappa ** 2)
        assert value == pytest.approx(second_order, abs=1e-9)
        assert value == pytest.approx(0.995062, abs=1e-6)

    def test_small_kappa_expansion(self):
        D, kappa = 100, 0.5
        # second term is kappa^3 / (D^2 (D+2))
        expected = kappa / D - kappa ** 3 / (D ** 2 * (D + 2))
        assert sf.bessel_ratio(D, kappa) == pytest.approx(expected, abs=1e-11)
        assert sf.bessel_ratio(D, kappa) == pytest.approx(0.00499988, abs=1e-8)

    @pytest.mark.parametrize("D", [2, 3, 20, 100, 1000])
    def test_strictly_increasing(self, D):
        values = sf.bessel_ratio_array(D, np.logspace(-4, 6, 400))
        assert np.all(np.diff(values) > 0)
        assert np.all((values > 0) & (values < 1))

    @pytest.mark.parametrize("D", [2, 3, 7, 100, 1000, 100000])
    def test_branch_boundaries_agree(self, D):
        small = sf.SMALL_KAPPA_RATIO * D
        for kappa in small * np.linspace(0.9, 1.1, 21):
            series = sf._series_ratio(D, kappa)[0]
            cf = sf._continued_fraction_ratio(D, kappa)[0]
            assert series == pytest.approx(cf, rel=1e-9)
        large = sf.LARGE_KAPPA_RATIO * D
        for kappa in large * np.linspace(0.9, 1.1, 21):
            asym = sf._asymptotic_ratio(D, kappa)
            cf = sf._continued_fraction_ratio(D, kappa)
            assert asym[0] == pytest.approx(cf[0], rel=1e-9)
            assert asym[1] == pytest.approx(cf[1], rel=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(min_value=2, max_value=2000), st.floats(min_value=1e-3, max_value=1e5))
    def test_recurrence(self, D, kappa):
        lhs = 1.0 / sf.bessel_ratio(D, kappa)
        rhs = sf.bessel_ratio(D + 2, kappa) + D / kappa
        assert lhs == pytest.approx(rhs, rel=1e-8)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(min_value=2, max_value=5000), st.floats(min_value=0.0, max_value=1e6))
    def test_complement_sums_to_one(self, D, kappa):
        ratio, complement = sf.ratio_and_complement(D, kappa)
        assert ratio + complement == pytest.approx(1.0, abs=1e-14)
        assert complement > 0.0

    def test_extreme_inputs_stay_finite(self):
        assert 0 < sf.bessel_ratio(100000, 1e6) < 1
        assert 0 < sf.bessel_ratio(100000, 1e-6) < 1
        assert sf.bessel_ratio_complement(2, 1e6) == pytest.approx(1.0 / (2e6), rel=1e-5)

    @pytest.mark.parametrize("D,kappa", [(1, 1.0), (0, 1.0), (3, -1.0), (3, float("nan")), (3, float("inf")), (2.5, 1.0)])
    def test_domain_errors(self, D, kappa):
        with pytest.raises(DomainError):
            sf.bessel_ratio(D, kappa)

    def test_domain_error_is_value_error(self):
        with pytest.raises(ValueError):
            sf.bessel_ratio(3, -2.0)


class TestSelectMethod:

    def test_regions(self):
        assert sf.select_method(100, 0.05) is BesselRatioMethod.SMALL_KAPPA_SERIES
        assert sf.select_method(100, 100.0) is BesselRatioMethod.CONTINUED_FRACTION
        assert sf.select_method(100, 6000.0) is BesselRatioMethod.LARGE_KAPPA_ASYMPTOTIC

    def test_pure(self):
        picks = {sf.select_method(20, 1.0) for _ in range(5)}
        assert len(picks) == 1


class TestSphereArea:

    def test_circle(self):
        assert sf.log_sphere_area(2) == pytest.approx(math.log(2 * math.pi), rel=1e-14)

    def test_sphere(self):
        assert sf.log_sphere_area(3) == pytest.approx(math.log(4 * math.pi), rel=1e-14)

    def test_high_dimension(self):
        expected = math.log(2.0) + 50 * math.log(math.pi) - gammaln(50)
        assert sf.log_sphere_area(100) == pytest.approx(expected, rel=1e-13)

    def test_rejects_small_dimension(self):
        with pytest.raises(DomainError):
            sf.log_sphere_area(1)


class TestLogNormalizer:

    @pytest.mark.parametrize("D", [2, 3, 10, 100, 1000])
    def test_zero_kappa_is_uniform(self, D):
        assert sf.log_vmf_normalizer(D, 0.0) == -sf.log_sphere_area(D)

    @pytest.mark.parametrize("D", [2, 3, 10, 100, 1000])
    def test_uniform_limit(self, D):
        assert abs(sf.log_vmf_normalizer(D, 1e-12) + sf.log_sphere_area(D)) <= 1e-8

    @pytest.mark.parametrize("kappa", [1e-3, 0.5, 1.0, 10.0, 100.0, 1000.0])
    def test_d3_closed_form(self, kappa):
        assert sf.log_vmf_normalizer(3, kappa) == pytest.approx(log_c3(kappa), rel=1e-9)

    def test_d3_at_one(self):
        assert sf.log_vmf_normalizer(3, 1.0) == pytest.approx(math.log(1 / (4 * math.pi * math.sinh(1.0))), rel=1e-10)

    @pytest.mark.parametrize("D,kappa", [(5, 3.0), (20, 40.0), (50, 10.0)])
    def test_against_scaled_bessel(self, D, kappa):
        nu = 0.5 * D - 1.0
        log_i = math.log(ive(nu, kappa)) + kappa
        expected = nu * math.log(kappa) - 0.5 * D * math.log(2 * math.pi) - log_i
        assert sf.log_vmf_normalizer(D, kappa) == pytest.approx(expected, rel=1e-9)

    @pytest.mark.parametrize("D,kappa", [(100, 100.0), (1000, 1e6), (100000, 1e6), (100000, 1.0)])
    def test_finite_at_scale(self, D, kappa):
        assert math.isfinite(sf.log_vmf_normalizer(D, kappa))

    def test_log_bessel_i(self):
        assert sf.log_bessel_i(3, 2.0) == pytest.approx(math.log(ive(0.5, 2.0)) + 2.0, rel=1e-10)
        with pytest.raises(DomainError):
            sf.log_bessel_i(3, 0.0)


class TestIntegrals:

    @pytest.mark.parametrize("D,kappa", [(40, 25.0), (6, 0.004), (10, 900.0)])
    def test_ratio_integral_is_log_bessel(self, D, kappa):
        # d/dk [log I_nu(k) - nu log k] = A_D(k) with nu = D/2 - 1
        nu = 0.5 * D - 1.0
        expected = math.log(ive(nu, kappa)) + kappa - nu * math.log(kappa) + nu * math.log(2.0) + gammaln(nu + 1.0)
        assert sf.integrated_ratio(D, kappa) == pytest.approx(expected, rel=1e-9, abs=1e-13)

    def test_d3_ratio_integral(self):
        # int_0^k (coth t - 1/t) dt = log(sinh k / k)
        kappa = 4.0
        assert sf.integrated_ratio(3, kappa) == pytest.approx(math.log(math.sinh(kappa) / kappa), rel=1e-10)
