"""
Scalar algebra between kappa, activation variance, sigma_eff and KL

    sigma_u^2(kappa)   ~ D / (kappa + D)                interpolant
    sigma_u^2(kappa)   = 1 - A_D(kappa)^2               exact, inputs with |x|^2 = D
    sigma_eff(kappa)   = sigma_u(kappa) / A_D(kappa)
    KL(kappa)          = int_0^kappa (1 - A_D) - kappa (1 - A_D(kappa))
    KL_approx(s, D)    = (D-1)/2 log(1 + D/(D-1) s^-2)

KL is taken against the uniform prior on S^{D-1}; it vanishes at kappa = 0.
"""

import math
from dataclasses import dataclass
from enum import Enum

from src.sphere.special_fn import (
    SMALL_KAPPA_RATIO,
    check_dim,
    check_kappa,
    integrated_complement,
    integrated_ratio,
    ratio_and_complement,
)
from src.utils.errors import DomainError

SOFTPLUS_LINEAR_CUTOFF = 30.0


class Regime(str, Enum):
    TIGHT = "tight"
    BROAD = "broad"
    CROSSOVER = "crossover"


class Parameterization(str, Enum):
    SOFTPLUS = "softplus"
    EXP = "exp"


@dataclass(frozen=True)
class EffNoiseSpec:
    """Post-normalization noise std of one layer together with its input dimension"""
    sigma_eff: float
    dim: int

    def __post_init__(self):
        sigma = float(self.sigma_eff)
        if not math.isfinite(sigma) or sigma <= 0.0:
            raise DomainError(f"sigma_eff must be positive and finite, got {self.sigma_eff!r}")
        object.__setattr__(self, "sigma_eff", sigma)
        object.__setattr__(self, "dim", check_dim(self.dim))


def sigma_u_sq_interpolant(D: int, kappa: float) -> float:
    D = check_dim(D)
    kappa = check_kappa(kappa)
    return D / (kappa + D)


def sigma_u_sq_exact(D: int, kappa: float) -> float:
    """1 - A_D(kappa)^2, the pre-activation variance averaged over |x|^2 = D inputs"""
    _, complement = ratio_and_complement(D, kappa)
    return complement * (2.0 - complement)


def sigma_eff_from_kappa(D: int, kappa: float, exact: bool = False) -> float:
    """sigma_u / A_D; interpolant numerator by default, exact variance with exact=True"""
    D = check_dim(D)
    kappa = check_kappa(kappa)
    if kappa == 0.0:
        raise DomainError("sigma_eff is infinite at kappa = 0 (A_D(0) = 0)")
    ratio, complement = ratio_and_complement(D, kappa)
    variance = complement * (2.0 - complement) if exact else D / (kappa + D)
    return math.sqrt(variance) / ratio


def kappa_from_sigma_eff(spec: EffNoiseSpec) -> float:
    """Diagnostic inversion: D / sigma^2 in the tight regime, D / sigma in the broad one.

    The two branches meet at sigma_eff = 1. Not an exact inverse of sigma_eff_from_kappa.
    """
    if spec.sigma_eff <= 1.0:
        return spec.dim / spec.sigma_eff ** 2
    return spec.dim / spec.sigma_eff


def regime(D: int, kappa: float, margin: float = 10.0) -> Regime:
    """Tight when kappa >= margin * D, broad when kappa <= D / margin"""
    D = check_dim(D)
    kappa = check_kappa(kappa)
    if kappa >= margin * D:
        return Regime.TIGHT
    if kappa <= D / margin:
        return Regime.BROAD
    return Regime.CROSSOVER


def kl_exact(D: int, kappa: float) -> float:
    """KL(vMF(mu, kappa) || Uniform(S^{D-1})) = kappa A_D + log C_D + log Area"""
    D = check_dim(D)
    kappa = check_kappa(kappa)
    if kappa == 0.0:
        return 0.0
    ratio, complement = ratio_and_complement(D, kappa)
    if kappa <= SMALL_KAPPA_RATIO * D:
        value = kappa * ratio - integrated_ratio(D, kappa)
    else:
        value = integrated_complement(D, kappa) - kappa * complement
    return max(value, 0.0)


def kl_approx(spec: EffNoiseSpec) -> float:
    D = spec.dim
    return 0.5 * (D - 1) * math.log1p(D / (D - 1) / spec.sigma_eff ** 2)


def kl_approx_grad(spec: EffNoiseSpec) -> float:
    """d kl_approx / d sigma_eff"""
    D = spec.dim
    s = spec.sigma_eff
    return -D / s ** 3 / (1.0 + D / (D - 1) / s ** 2)


def kl_tight_asymptote(spec: EffNoiseSpec) -> float:
    """(D-1)/2 log(D / sigma^2), the sigma_eff << 1 leading form"""
    return 0.5 * (spec.dim - 1) * math.log(spec.dim / spec.sigma_eff ** 2)


def kl_broad_asymptote(spec: EffNoiseSpec) -> float:
    """D/2 sigma^-2, the sigma_eff >> 1 leading form"""
    return 0.5 * spec.dim / spec.sigma_eff ** 2


def softplus(rho: float) -> float:
    if rho > SOFTPLUS_LINEAR_CUTOFF:
        return float(rho)
    return math.log1p(math.exp(rho))


def softplus_inverse(sigma: float) -> float:
    if sigma <= 0.0:
        raise DomainError(f"softplus is positive; cannot invert {sigma!r}")
    if sigma > SOFTPLUS_LINEAR_CUTOFF:
        return float(sigma)
    return math.log(math.expm1(sigma))


def sigmoid(rho: float) -> float:
    if rho >= 0.0:
        return 1.0 / (1.0 + math.exp(-rho))
    e = math.exp(rho)
    return e / (1.0 + e)


def sigma_from_rho(rho: float, parameterization: Parameterization = Parameterization.SOFTPLUS) -> float:
    if Parameterization(parameterization) is Parameterization.EXP:
        return math.exp(rho)
    return softplus(rho)


def rho_from_sigma(sigma: float, parameterization: Parameterization = Parameterization.SOFTPLUS) -> float:
    if Parameterization(parameterization) is Parameterization.EXP:
        if sigma <= 0.0:
            raise DomainError(f"sigma must be positive, got {sigma!r}")
        return math.log(sigma)
    return softplus_inverse(sigma)


def dsigma_drho(rho: float, parameterization: Parameterization = Parameterization.SOFTPLUS) -> float:
    """Derivative of sigma_from_rho"""
    if Parameterization(parameterization) is Parameterization.EXP:
        return math.exp(rho)
    return sigmoid(rho)
