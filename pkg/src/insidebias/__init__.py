"""Activation-based bias detection for small CNNs, built on a numpy engine."""
__version__ = "0.1.0"

from .detect import BiasReport, BiasVerdict, activation_ratio, audit, verdict  # noqa: E402
from .probe import ActivationProfile, group_profile, normalize_profiles  # noqa: E402

__all__ = [
    "ActivationProfile", "BiasReport", "BiasVerdict", "__version__", "activation_ratio", "audit",
    "group_profile", "normalize_profiles", "verdict",
]
