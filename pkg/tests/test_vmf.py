import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import ortho_group

from src.sphere import vmf
from src.sphere.special_fn import bessel_ratio, log_sphere_area, log_vmf_normalizer
from src.sphere.vmf import VmfDistribution
from src.utils.errors import DomainError, SamplerExhaustedError
from src.utils.rng import make_rng, substream


def sample_variance_se(values):
    """Standard error of the sample variance from the fourth central moment"""
    centred = values - values.mean()
    m2 = np.mean(centred ** 2)
    m4 = np.mean(centred ** 4)
    return math.sqrt(max(m4 - m2 * m2, 0.0) / values.size)


class TestDistribution:

    def test_rejects_non_unit_mean(self):
        with pytest.raises(DomainError):
            VmfDistribution(np.array([1.0, 1.0, 0.0]), 1.0)

    def test_rejects_negative_kappa(self, random_unit):
        with pytest.raises(DomainError):
            VmfDistribution(random_unit(5), -0.1)

    def test_from_direction_normalizes(self):
        dist = VmfDistribution.from_direction([3.0, 4.0], 2.0)
        np.testing.assert_allclose(dist.mu, [0.6, 0.8])
        assert dist.dim == 2

    def test_mean_direction_is_read_only(self, random_unit):
        dist = VmfDistribution(random_unit(4), 1.0)
        with pytest.raises(ValueError):
            dist.mu[0] = 0.0

    def test_uniform(self):
        dist = VmfDistribution.uniform(7)
        assert dist.kappa == 0.0
        np.testing.assert_allclose(dist.mean(), np.zeros(7))
        np.testing.assert_allclose(dist.covariance(), np.eye(7) / 7)


class TestLogDensity:

    def test_uniform_density(self, random_unit):
        dist = VmfDistribution(random_unit(10), 0.0)
        assert vmf.log_density(dist, random_unit(10, seed=5)) == pytest.approx(-log_sphere_area(10))

    def test_d3_values(self):
        mu = np.array([0.0, 0.0, 1.0])
        dist = VmfDistribution(mu, 1.0)
        log_c = math.log(1.0 / (4.0 * math.pi * math.sinh(1.0)))
        assert vmf.log_density(dist, mu) == pytest.approx(log_c + 1.0, rel=1e-10)
        assert vmf.log_density(dist, -mu) == pytest.approx(log_c - 1.0, rel=1e-10)

    def test_batch(self, rng):
        dist = VmfDistribution.from_direction([1.0, 2.0, 2.0], 3.0)
        w = vmf.sample(dist, rng, 6)
        values = vmf.log_density(dist, w)
        assert values.shape == (6,)
        np.testing.assert_allclose(values, log_vmf_normalizer(3, 3.0) + 3.0 * (w @ dist.mu))

    def test_rejects_non_unit_argument(self, random_unit):
        dist = VmfDistribution(random_unit(3), 1.0)
        with pytest.raises(DomainError):
            vmf.log_density(dist, np.array([1.0, 1.0, 0.0]))

    @pytest.mark.parametrize("kappa", [0.0, 0.5, 5.0, 40.0])
    def test_normalized_on_sphere(self, kappa, monkeypatch):
        monkeypatch.setattr(vmf, "log_vmf_normalizer", functools.lru_cache(maxsize=None)(log_vmf_normalizer))
        dist = VmfDistribution(np.array([0.0, 0.0, 1.0]), kappa)

        def integrand(theta, phi):
            w = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
            return math.exp(vmf.log_density(dist, w)) * math.sin(theta)

        total, _ = integrate.dblquad(integrand, 0.0, 2.0 * math.pi, 0.0, math.pi, epsabs=1e-11, epsrel=1e-10)
        assert total == pytest.approx(1.0, abs=1e-6)


class TestSample:

    def test_unit_norm_and_shape(self, rng, random_unit):
        w = vmf.sample(VmfDistribution(random_unit(50), 200.0), rng, 1000)
        assert w.shape == (1000, 50)
        np.testing.assert_allclose(np.linalg.norm(w, axis=1), 1.0, atol=1e-12)

    def test_deterministic_given_seed(self, random_unit):
        dist = VmfDistribution(random_unit(20), 15.0)
        a = vmf.sample(dist, make_rng(7), 500)
        b = vmf.sample(dist, make_rng(7), 500)
        np.testing.assert_array_equal(a, b)

    def test_rejects_empty_request(self, rng, random_unit):
        with pytest.raises(DomainError):
            vmf.sample(VmfDistribution(random_unit(3), 1.0), rng, 0)

    def test_uniform_mean_vanishes(self, rng, random_unit):
        w = vmf.sample(VmfDistribution(random_unit(10), 0.0), rng, 100000)
        assert np.linalg.norm(w.mean(axis=0)) <= 4.0 / math.sqrt(100000)

    def test_circle(self, rng):
        w = vmf.sample(VmfDistribution(np.array([1.0, 0.0]), 2.0), rng, 50000)
        se = math.sqrt(vmf.analytic_moments(VmfDistribution(np.array([1.0, 0.0]), 2.0)).var_parallel / 50000)
        assert abs(w[:, 0].mean() - bessel_ratio(2, 2.0)) <= 4 * se

    def test_d3_closed_form_mean(self, rng):
        mu = np.array([0.0, 1.0, 0.0])
        dist = VmfDistribution(mu, 5.0)
        along = vmf.sample(dist, rng, 200000) @ mu
        expected = 1.0 / math.tanh(5.0) - 0.2
        assert abs(along.mean() - expected) <= 4 * along.std() / math.sqrt(along.size)

    def test_tight_mean_componentwise(self, rng, random_unit):
        n = 100000
        dist = VmfDistribution(random_unit(100, seed=3), 1000.0)
        w = vmf.sample(dist, rng, n)
        se = w.std(axis=0) / math.sqrt(n)
        assert np.all(np.abs(w.mean(axis=0) - dist.mean()) <= 4 * se + 1e-12)

    @pytest.mark.parametrize("D", [3, 20, 100])
    @pytest.mark.parametrize("scale", [0.0, 1.0, "D", "10D"])
    def test_mean_resultant_matches_ratio(self, D, scale, random_unit):
        kappa = {"D": float(D), "10D": 10.0 * D}.get(scale, scale)
        dist = VmfDistribution(random_unit(D, seed=D), kappa)
        n = 200000
        along = vmf.sample(dist, substream(99, D), n) @ dist.mu
        se = math.sqrt(vmf.analytic_moments(dist).var_parallel / n)
        assert abs(along.mean() - bessel_ratio(D, kappa)) <= 4 * se

    @pytest.mark.parametrize("D,kappa", [(3, 1.0), (10, 4.0), (50, 80.0), (100, 1000.0)])
    def test_covariance_structure(self, D, kappa, random_unit):
        mu = random_unit(D, seed=11)
        dist = VmfDistribution(mu, kappa)
        moments = vmf.analytic_moments(dist)
        w = vmf.sample(dist, substream(5, D), 200000)

        along = w @ mu
        assert abs(along.var() - moments.var_parallel) <= 4 * sample_variance_se(along)

        tangent = random_unit(D, seed=12)
        tangent -= (tangent @ mu) * mu
        tangent /= np.linalg.norm(tangent)
        across = w @ tangent
        assert abs(across.var() - moments.var_perp) <= 4 * sample_variance_se(across)

    def test_rotation_equivariance(self, random_unit):
        D = 12
        mu = random_unit(D, seed=2)
        rotation = ortho_group.rvs(D, random_state=4)
        base = VmfDistribution(mu, 30.0)
        rotated = VmfDistribution.from_direction(rotation @ mu, 30.0)

        w = vmf.sample(base, make_rng(21), 5000)
        w_rot = vmf.sample(rotated, make_rng(21), 5000)
        np.testing.assert_allclose(w @ base.mu, w_rot @ rotated.mu, atol=1e-12)
        np.testing.assert_allclose((w @ rotation.T) @ rotated.mu, w @ base.mu, atol=1e-12)

    def test_rejection_cap(self, rng, random_unit, monkeypatch):
        monkeypatch.setattr(vmf, "MAX_REJECTIONS", 0)
        with pytest.raises(SamplerExhaustedError):
            vmf.sample(VmfDistribution(random_unit(5), 3.0), rng, 10)

    def test_extreme_concentration(self, rng, random_unit):
        dist = VmfDistribution(random_unit(1000, seed=8), 1e6)
        w = vmf.sample(dist, rng, 200)
        assert np.all(np.isfinite(w))
        assert np.all(w @ dist.mu > 0.99)


class TestAnalyticMoments:

    @pytest.mark.parametrize("D", [2, 3, 100])
    def test_uniform_limit(self, D):
        m = vmf.analytic_moments(VmfDistribution.uniform(D))
        assert m == (0.0, 1.0 / D, 1.0 / D)

    def test_d3(self):
        m = vmf.analytic_moments(VmfDistribution(np.array([1.0, 0.0, 0.0]), 1.0))
        assert m.var_perp == pytest.approx(0.3130353, abs=1e-7)
        assert m.var_parallel == pytest.approx(1 - 0.3130353 ** 2 - 2 * 0.3130353, abs=1e-6)

    def test_small_kappa_approaches_isotropic(self):
        m = vmf.analytic_moments(VmfDistribution.from_direction(np.ones(20), 1e-6))
        assert m.var_parallel == pytest.approx(1 / 20, rel=1e-4)
        assert m.var_perp == pytest.approx(1 / 20, rel=1e-4)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(min_value=2, max_value=3000), st.floats(min_value=0.0, max_value=1e6))
    def test_trace_identity(self, D, kappa):
        mu = np.zeros(D)
        mu[-1] = 1.0
        m = vmf.analytic_moments(VmfDistribution(mu, kappa))
        assert m.var_parallel >= 0.0 and m.var_perp >= 0.0
        assert m.var_parallel + (D - 1) * m.var_perp == pytest.approx(1.0 - m.mean_resultant ** 2, abs=1e-10)

    def test_covariance_matrix(self, random_unit):
        dist = VmfDistribution(random_unit(6), 4.0)
        cov = dist.covariance()
        m = vmf.analytic_moments(dist)
        assert cov @ dist.mu == pytest.approx(m.var_parallel * dist.mu)
        assert np.trace(cov) == pytest.approx(1.0 - m.mean_resultant ** 2)

    def test_empirical_counterpart(self, random_unit):
        dist = VmfDistribution(random_unit(8), 6.0)
        w = vmf.sample(dist, make_rng(3), 100000)
        emp = vmf.empirical_moments(w, dist.mu)
        ref = vmf.analytic_moments(dist)
        assert emp.mean_resultant == pytest.approx(ref.mean_resultant, abs=0.01)
        assert emp.var_perp == pytest.approx(ref.var_perp, rel=0.03)


class TestMcActivationVariance:

    def test_uniform_gives_unit_variance(self, rng, random_unit):
        est = vmf.mc_activation_variance(VmfDistribution(random_unit(100), 0.0), rng, 100000, 20)
        assert abs(est.value - 1.0) <= 4 * est.stderr

    def test_crossover(self, rng, random_unit):
        D, kappa = 100, 100.0
        est = vmf.mc_activation_variance(VmfDistribution(random_unit(D), kappa), rng, 200000, 20)
        exact = 1.0 - bessel_ratio(D, kappa) ** 2
        assert abs(est.value - exact) <= 4 * est.stderr
        assert abs(est.value - 0.5) > 4 * est.stderr

    def test_tight(self, rng, random_unit):
        D, kappa = 100, 1e4
        est = vmf.mc_activation_variance(VmfDistribution(random_unit(D), kappa), rng, 200000, 20)
        exact = 1.0 - bessel_ratio(D, kappa) ** 2
        assert abs(est.value - exact) <= 4 * est.stderr
        assert est.value == pytest.approx(D / kappa, rel=0.1)

    def test_gaussian_inputs(self, rng, random_unit):
        D, kappa = 50, 50.0
        est = vmf.mc_activation_variance(VmfDistribution(random_unit(D), kappa), rng, 100000, 50, inputs="gaussian")
        assert est.value == pytest.approx(1.0 - bessel_ratio(D, kappa) ** 2, rel=0.1)

    def test_single_input_has_finite_error(self, rng, random_unit):
        est = vmf.mc_activation_variance(VmfDistribution(random_unit(10), 3.0), rng, 5000, 1)
        assert est.stderr > 0.0 and math.isfinite(est.stderr)

    @pytest.mark.parametrize("n_samples,n_inputs", [(0, 1), (10, 0)])
    def test_rejects_empty(self, rng, random_unit, n_samples, n_inputs):
        with pytest.raises(DomainError):
            vmf.mc_activation_variance(VmfDistribution(random_unit(3), 1.0), rng, n_samples, n_inputs)

    def test_rejects_unknown_inputs(self, rng, random_unit):
        with pytest.raises(DomainError):
            vmf.mc_activation_variance(VmfDistribution(random_unit(3), 1.0), rng, 10, 1, inputs="cube")
