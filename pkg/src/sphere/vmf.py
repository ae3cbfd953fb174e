"""
von Mises-Fisher distribution on S^{D-1}

Density q(w | mu, kappa) = C_D(kappa) exp(kappa mu^T w). Sampling uses the
beta-envelope rejection scheme for the mu-component followed by a uniform
tangent direction and a Householder reflection e1 -> mu.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np

from src.sphere.special_fn import (
    check_dim,
    check_kappa,
    log_vmf_normalizer,
    ratio_and_complement,
)
from src.utils.errors import DomainError, SamplerExhaustedError

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-12
DENSITY_NORM_TOL = 1e-9
MAX_REJECTIONS = 10**6
SAMPLE_CHUNK = 65536
INPUT_KINDS = ("sphere", "gaussian")


class VmfMoments(NamedTuple):
    """Mean resultant length and the two covariance coefficients"""
    mean_resultant: float
    var_parallel: float
    var_perp: float


class McEstimate(NamedTuple):
    """Monte-Carlo estimate with its standard error"""
    value: float
    stderr: float


@dataclass(frozen=True)
class VmfDistribution:
    """vMF(mu, kappa); mu is stored as a read-only copy"""
    mu: np.ndarray
    kappa: float = 0.0
    dim: int = field(init=False)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        dim = check_dim(mu.size)
        if not np.all(np.isfinite(mu)):
            raise DomainError("mean direction has non-finite entries")
        norm = float(np.linalg.norm(mu))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise DomainError(f"mean direction must be unit-norm, got |mu| = {norm!r}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", check_kappa(self.kappa))
        object.__setattr__(self, "dim", dim)

    @classmethod
    def from_direction(cls, direction, kappa: float) -> "VmfDistribution":
        """Build from any nonzero vector, normalizing it first"""
        direction = np.asarray(direction, dtype=float).reshape(-1)
        norm = float(np.linalg.norm(direction))
        if norm == 0.0 or not math.isfinite(norm):
            raise DomainError("direction must be a finite nonzero vector")
        return cls(direction / norm, kappa)

    @classmethod
    def uniform(cls, D: int) -> "VmfDistribution":
        """Uniform distribution on S^{D-1} (kappa = 0, mu = e1)"""
        mu = np.zeros(check_dim(D))
        mu[0] = 1.0
        return cls(mu, 0.0)

    def mean(self) -> np.ndarray:
        """E[w] = A_D(kappa) mu"""
        return analytic_moments(self).mean_resultant * self.mu

    def covariance(self) -> np.ndarray:
        """Dense D x D covariance sigma_par^2 mu mu^T + sigma_perp^2 (I - mu mu^T)"""
        moments = analytic_moments(self)
        outer = np.outer(self.mu, self.mu)
        return moments.var_parallel * outer + moments.var_perp * (np.eye(self.dim) - outer)


def log_density(dist: VmfDistribution, w) -> np.ndarray:
    """log C_D(kappa) + kappa mu^T w for one unit vector or a batch of rows"""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != dist.dim:
        raise DomainError(f"expected vectors of dimension {dist.dim}, got shape {w.shape}")
    norms = np.linalg.norm(w, axis=-1)
    if np.any(np.abs(norms - 1.0) > DENSITY_NORM_TOL):
        raise DomainError("log_density requires unit-norm arguments")
    value = log_vmf_normalizer(dist.dim, dist.kappa) + dist.kappa * (w @ dist.mu)
    return float(value) if np.ndim(value) == 0 else value


def analytic_moments(dist: VmfDistribution) -> VmfMoments:
    """A_D, sigma_par^2 and sigma_perp^2 from the Bessel ratio"""
    D, kappa = dist.dim, dist.kappa
    if kappa == 0.0:
        return VmfMoments(0.0, 1.0 / D, 1.0 / D)
    ratio, complement = ratio_and_complement(D, kappa)
    var_perp = ratio / kappa
    # 1 - A^2 written through the complement so large kappa keeps its digits
    one_minus_sq = complement * (2.0 - complement)
    var_parallel = max(one_minus_sq - (D - 1) * var_perp, 0.0)
    return VmfMoments(ratio, var_parallel, var_perp)


def _sample_mu_component(D: int, kappa: float, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Draw t = mu^T w; returns (t, 1 - t) so the tight regime keeps precision"""
    if kappa == 0.0:
        z = rng.beta(0.5 * (D - 1), 0.5 * (D - 1), size=n)
        return 2.0 * z - 1.0, 2.0 * (1.0 - z)

    b = (D - 1) / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + (D - 1) ** 2))
    x0 = (1.0 - b) / (1.0 + b)
    one_minus_x0 = 2.0 * b / (1.0 + b)
    log_norm = math.log(one_minus_x0 * (1.0 + x0))

    one_minus_t = np.empty(n)
    pending = np.arange(n)
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > MAX_REJECTIONS:
            raise SamplerExhaustedError(
                f"vMF sampler exceeded {MAX_REJECTIONS} rejections (D={D}, kappa={kappa})"
            )
        m = pending.size
        z = rng.beta(0.5 * (D - 1), 0.5 * (D - 1), size=m)
        u = rng.random(m)
        omt = 2.0 * b * z / (1.0 - (1.0 - b) * z)
        log_accept = (
            kappa * (one_minus_x0 - omt)
            + (D - 1) * (np.log(one_minus_x0 + x0 * omt) - log_norm)
        )
        accepted = log_accept >= np.log(u)
        one_minus_t[pending[accepted]] = omt[accepted]
        pending = pending[~accepted]

    return 1.0 - one_minus_t, one_minus_t


def _householder_to(mu: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Apply the reflection that maps e1 onto mu to every row of frame"""
    v = -mu.copy()
    v[0] += 1.0
    vv = float(v @ v)
    if vv < 1e-30:
        return frame
    return frame - np.outer(frame @ v, (2.0 / vv) * v)


def sample(dist: VmfDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """n i.i.d. draws from vMF(mu, kappa) as rows of an (n, D) array"""
    n = int(n)
    if n < 1:
        raise DomainError(f"sample count must be >= 1, got {n}")
    D = dist.dim
    t, one_minus_t = _sample_mu_component(D, dist.kappa, rng, n)

    tangent = rng.standard_normal((n, D - 1))
    tangent_norm = np.linalg.norm(tangent, axis=1, keepdims=True)
    tangent /= np.where(tangent_norm > 0.0, tangent_norm, 1.0)

    radial = np.sqrt(np.clip(one_minus_t * (2.0 - one_minus_t), 0.0, None))
    frame = np.empty((n, D))
    frame[:, 0] = t
    frame[:, 1:] = radial[:, None] * tangent

    w = _householder_to(dist.mu, frame)
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return w


def empirical_moments(samples: np.ndarray, mu) -> VmfMoments:
    """Sample counterparts of analytic_moments (mean of mu^T w, variance along mu,
    average variance over the tangent space)"""
    samples = np.asarray(samples, dtype=float)
    mu = np.asarray(mu, dtype=float)
    along = samples @ mu
    var_parallel = float(np.var(along, ddof=1))
    total = float(np.sum(np.var(samples, axis=0, ddof=1)))
    var_perp = (total - var_parallel) / (samples.shape[1] - 1)
    return VmfMoments(float(np.mean(along)), var_parallel, var_perp)


def _draw_inputs(rng: np.random.Generator, n_inputs: int, D: int, inputs: str) -> np.ndarray:
    x = rng.standard_normal((n_inputs, D))
    if inputs == "sphere":
        x *= math.sqrt(D) / np.linalg.norm(x, axis=1, keepdims=True)
    return x


def mc_activation_variance(
    dist: VmfDistribution,
    rng: np.random.Generator,
    n_samples: int,
    n_inputs: int,
    inputs: str = "sphere",
    chunk: Optional[int] = None,
) -> McEstimate:
    """Monte-Carlo estimate of Var(w^T x) averaged over inputs x

    The n_samples directions are split evenly across n_inputs inputs. The
    standard error combines the spread of the per-input variances with the
    within-input sampling error of each variance.
    """
    n_samples, n_inputs = int(n_samples), int(n_inputs)
    if n_samples < 1 or n_inputs < 1:
        raise DomainError(f"n_samples and n_inputs must be >= 1, got {n_samples}, {n_inputs}")
    if inputs not in INPUT_KINDS:
        raise DomainError(f"inputs must be one of {INPUT_KINDS}, got {inputs!r}")
    chunk = int(chunk or SAMPLE_CHUNK)

    D = dist.dim
    x_all = _draw_inputs(rng, n_inputs, D, inputs)
    base, extra = divmod(n_samples, n_inputs)
    variances = []
    within = []
    for j in range(n_inputs):
        count = base + (1 if j < extra else 0)
        if count < 2:
            count = 2
        u = np.empty(count)
        start = 0
        while start < count:
            stop = min(start + chunk, count)
            u[start:stop] = sample(dist, rng, stop - start) @ x_all[j]
            start = stop
        centred = u - u.mean()
        m2 = float(np.mean(centred ** 2))
        m4 = float(np.mean(centred ** 4))
        variances.append(m2 * count / (count - 1))
        within.append(max(m4 - m2 * m2, 0.0) / count)

    variances = np.asarray(variances)
    value = float(np.mean(variances))
    within_mean = float(np.mean(within))
    between = float(np.var(variances, ddof=1)) if n_inputs > 1 else 0.0
    stderr = math.sqrt(max(between, within_mean) / n_inputs)
    logger.debug(f"mc_activation_variance D={D} kappa={dist.kappa} value={value:.6g} se={stderr:.3g}")
    return McEstimate(value, stderr)
