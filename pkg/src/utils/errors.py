"""
Exception hierarchy for sphevar
"""


class SphevarError(Exception):
    """Base class for all sphevar errors"""


class DomainError(SphevarError, ValueError):
    """Argument outside the mathematical domain of an operation"""


class ConfigError(SphevarError):
    """Invalid or unknown configuration value"""


class CheckpointError(SphevarError):
    """Checkpoint cannot be read, has the wrong version, or mismatched shapes"""


class ConsistencyError(SphevarError):
    """Internal consistency check failed (e.g. landscape centre mismatch)"""


class NumericalError(SphevarError):
    """A numerical procedure failed instead of producing a trustworthy value"""


class ConvergenceError(NumericalError):
    """Iteration limit reached before reaching tolerance"""


class SamplerExhaustedError(NumericalError):
    """Rejection sampler exceeded its rejection cap"""


class NonFiniteLossError(NumericalError):
    """Loss evaluated to NaN or infinity"""


class GradientExplosionError(NumericalError):
    """Gradient norm exceeded the configured cap"""

    def __init__(self, norm: float, cap: float):
        super().__init__(f"gradient norm {norm:.6g} exceeds cap {cap:.6g}")
        self.norm = norm
        self.cap = cap
