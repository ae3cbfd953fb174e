"""
Scalar special functions behind every vMF quantity

A_D(kappa) = I_{D/2}(kappa) / I_{D/2-1}(kappa) is evaluated without ever
forming I_nu. Branches, chosen by select_method():

    kappa / D < 1e-3    SMALL_KAPPA_SERIES       ratio of the two 0F1 power series
    kappa > 50 * D      LARGE_KAPPA_ASYMPTOTIC   1/kappa expansion of the Riccati
                                                 equation A' = 1 - A^2 - (D-1)/kappa * A
    otherwise           CONTINUED_FRACTION       Perron fraction, modified Lentz

The log-normalizer uses d/dk [log I_{D/2-1}(k) - (D/2-1) log k] = A_D(k), which gives

    log C_D(kappa) = -log Area(S^{D-1}) - kappa + int_0^kappa (1 - A_D(t)) dt

The integral is split at kappa_0 = min(kappa, 1e-3 D); the tail is integrated
over log(t) with scipy.integrate.quad.
"""

import logging
import math
from enum import Enum
from typing import Tuple

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from src.utils.errors import ConvergenceError, DomainError

logger = logging.getLogger(__name__)

SMALL_KAPPA_RATIO = 1e-3
LARGE_KAPPA_RATIO = 50.0
CF_TOLERANCE = 1e-15
CF_MAX_ITER = 500
SERIES_MAX_TERMS = 200
QUAD_EPSREL = 1e-12
QUAD_LIMIT = 200

_TINY = 1e-300


class BesselRatioMethod(str, Enum):
    """Evaluation branch for the Bessel ratio"""
    CONTINUED_FRACTION = "continued_fraction"
    SMALL_KAPPA_SERIES = "small_kappa_series"
    LARGE_KAPPA_ASYMPTOTIC = "large_kappa_asymptotic"


def check_dim(D) -> int:
    """Validate an integer dimension D >= 2"""
    if isinstance(D, bool):
        raise DomainError(f"dimension must be an integer, got {D!r}")
    if isinstance(D, (float, np.floating)) and float(D).is_integer():
        D = int(D)
    if not isinstance(D, (int, np.integer)):
        raise DomainError(f"dimension must be an integer, got {D!r}")
    if D < 2:
        raise DomainError(f"dimension must be >= 2, got {D}")
    return int(D)


def check_kappa(kappa) -> float:
    """Validate a finite, nonnegative concentration"""
    kappa = float(kappa)
    if not math.isfinite(kappa):
        raise DomainError(f"kappa must be finite, got {kappa}")
    if kappa < 0:
        raise DomainError(f"kappa must be >= 0, got {kappa}")
    return kappa


def select_method(D: int, kappa: float) -> BesselRatioMethod:
    """Pure branch selector for bessel_ratio"""
    D = check_dim(D)
    kappa = check_kappa(kappa)
    if kappa < SMALL_KAPPA_RATIO * D:
        return BesselRatioMethod.SMALL_KAPPA_SERIES
    if kappa > LARGE_KAPPA_RATIO * D:
        return BesselRatioMethod.LARGE_KAPPA_ASYMPTOTIC
    return BesselRatioMethod.CONTINUED_FRACTION


def _hypergeometric_0f1(mu: float, y: float) -> float:
    """sum_k y^k / (k! (mu+1)_k), i.e. I_mu(x) Gamma(mu+1) / (x/2)^mu with y = x^2/4"""
    total = 1.0
    term = 1.0
    for k in range(1, SERIES_MAX_TERMS):
        term *= y / (k * (mu + k))
        total += term
        if term < 1e-17 * total:
            return total
    raise ConvergenceError(f"0F1 series did not converge (mu={mu}, y={y})")


def _series_ratio(D: int, kappa: float) -> Tuple[float, float]:
    nu = 0.5 * D
    y = 0.25 * kappa * kappa
    ratio = (kappa / D) * _hypergeometric_0f1(nu, y) / _hypergeometric_0f1(nu - 1.0, y)
    return ratio, 1.0 - ratio


def _perron_denominator(D: int, kappa: float) -> float:
    """g = f - kappa, where A_D = kappa / f and

        f = D + kappa - (D+1)k / (D+1+2k - (D+3)k / (D+2+2k - ...))

    so that 1 - A_D = g / (g + kappa) carries no cancellation.
    """
    # modified Lentz on g = D + K_{j>=1}(a_j / b_j)
    g = float(D)
    c = g
    d = 0.0
    for j in range(1, CF_MAX_ITER + 1):
        a_j = -(D + 2.0 * j - 1.0) * kappa
        b_j = D + j + 2.0 * kappa
        d = b_j + a_j * d
        if d == 0.0:
            d = _TINY
        c = b_j + a_j / c
        if c == 0.0:
            c = _TINY
        d = 1.0 / d
        delta = c * d
        g *= delta
        if abs(delta - 1.0) < CF_TOLERANCE:
            return g
    raise ConvergenceError(
        f"continued fraction for A_D did not converge in {CF_MAX_ITER} iterations "
        f"(D={D}, kappa={kappa})"
    )


def _continued_fraction_ratio(D: int, kappa: float) -> Tuple[float, float]:
    g = _perron_denominator(D, kappa)
    f = g + kappa
    return kappa / f, g / f


def _asymptotic_ratio(D: int, kappa: float) -> Tuple[float, float]:
    # A_D ~ sum_n c_n kappa^-n with c_0 = 1 and
    # c_n = ((n - D) c_{n-1} - sum_{i=1}^{n-1} c_i c_{n-i}) / 2
    c = [1.0]
    complement = 0.0
    power = 1.0
    quiet = 0
    for n in range(1, SERIES_MAX_TERMS):
        conv = sum(c[i] * c[n - i] for i in range(1, n))
        c.append(((n - D) * c[n - 1] - conv) / 2.0)
        power /= kappa
        term = c[n] * power
        complement -= term
        # some (D, n) give an exactly vanishing coefficient; require two quiet terms
        quiet = quiet + 1 if abs(term) <= 1e-17 * abs(complement) else 0
        if quiet == 2:
            return 1.0 - complement, complement
    raise ConvergenceError(f"large-kappa expansion did not reach tolerance (D={D}, kappa={kappa})")


def _ratio_pair(D: int, kappa: float) -> Tuple[float, float]:
    if kappa == 0.0:
        return 0.0, 1.0
    method = select_method(D, kappa)
    if method is BesselRatioMethod.SMALL_KAPPA_SERIES:
        return _series_ratio(D, kappa)
    if method is BesselRatioMethod.LARGE_KAPPA_ASYMPTOTIC:
        return _asymptotic_ratio(D, kappa)
    return _continued_fraction_ratio(D, kappa)


def bessel_ratio(D: int, kappa: float) -> float:
    """Mean resultant length A_D(kappa) = I_{D/2}(kappa) / I_{D/2-1}(kappa)"""
    return _ratio_pair(check_dim(D), check_kappa(kappa))[0]


def bessel_ratio_complement(D: int, kappa: float) -> float:
    """1 - A_D(kappa), accurate when A_D is close to 1"""
    return _ratio_pair(check_dim(D), check_kappa(kappa))[1]


def ratio_and_complement(D: int, kappa: float) -> Tuple[float, float]:
    """(A_D(kappa), 1 - A_D(kappa)) from a single evaluation"""
    return _ratio_pair(check_dim(D), check_kappa(kappa))


def bessel_ratio_array(D: int, kappas) -> np.ndarray:
    """bessel_ratio over an array of kappa values"""
    D = check_dim(D)
    kappas = np.asarray(kappas, dtype=float)
    out = np.empty_like(kappas)
    for idx, kappa in np.ndenumerate(kappas):
        out[idx] = _ratio_pair(D, check_kappa(kappa))[0]
    return out


def log_sphere_area(D: int) -> float:
    """log(2 pi^{D/2} / Gamma(D/2)), surface area of S^{D-1}"""
    D = check_dim(D)
    return math.log(2.0) + 0.5 * D * math.log(math.pi) - float(gammaln(0.5 * D))


def integrated_ratio(D: int, kappa: float) -> float:
    """int_0^kappa A_D(t) dt

    Only used directly inside the small-kappa region, where the integrand is
    an odd power series and quad is exact to rounding.
    """
    D = check_dim(D)
    kappa = check_kappa(kappa)
    if kappa == 0.0:
        return 0.0
    if kappa > SMALL_KAPPA_RATIO * D:
        return kappa - integrated_complement(D, kappa)
    value, _ = integrate.quad(lambda t: _ratio_pair(D, t)[0], 0.0, kappa, epsabs=0.0, epsrel=QUAD_EPSREL)
    return value


def integrated_complement(D: int, kappa: float) -> float:
    """int_0^kappa (1 - A_D(t)) dt"""
    D = check_dim(D)
    kappa = check_kappa(kappa)
    head = min(kappa, SMALL_KAPPA_RATIO * D)
    total = head - integrated_ratio(D, head)
    if kappa <= head:
        return total

    def integrand(s: float) -> float:
        t = math.exp(s)
        return _ratio_pair(D, t)[1] * t

    lo, hi = math.log(head), math.log(kappa)
    points = [p for p in (math.log(D), math.log(LARGE_KAPPA_RATIO * D)) if lo < p < hi]
    value, _, info = integrate.quad(
        integrand, lo, hi, points=points or None, epsabs=0.0, epsrel=QUAD_EPSREL,
        limit=QUAD_LIMIT, full_output=1,
    )[:3]
    if info.get("last", 0) >= QUAD_LIMIT:
        logger.debug(f"quad reached its subdivision limit (D={D}, kappa={kappa})")
    return total + value


def log_vmf_normalizer(D: int, kappa: float) -> float:
    """log C_D(kappa) of the vMF density on S^{D-1}"""
    D = check_dim(D)
    kappa = check_kappa(kappa)
    if kappa == 0.0:
        return -log_sphere_area(D)
    if kappa <= SMALL_KAPPA_RATIO * D:
        return -log_sphere_area(D) - integrated_ratio(D, kappa)
    return -log_sphere_area(D) - kappa + integrated_complement(D, kappa)


def log_bessel_i(D: int, kappa: float) -> float:
    """log I_{D/2-1}(kappa) for kappa > 0, recovered from log C_D"""
    D = check_dim(D)
    kappa = check_kappa(kappa)
    if kappa == 0.0:
        raise DomainError("log I_{D/2-1}(0) is not finite for D > 2; kappa must be > 0")
    return (0.5 * D - 1.0) * math.log(kappa) - 0.5 * D * math.log(2.0 * math.pi) - log_vmf_normalizer(D, kappa)
