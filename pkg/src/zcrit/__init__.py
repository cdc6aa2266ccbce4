"""Exact central charges, toric test configurations and Z-critical metric numerics."""

from zcrit.qq import QQi
from zcrit.charge import (
    CentralChargeSpec,
    ChargeValue,
    Classification,
    IntersectionTable,
    evaluate_charge,
    phase_expansion,
    validate_charge,
)

__all__ = [
    "QQi",
    "CentralChargeSpec",
    "ChargeValue",
    "Classification",
    "IntersectionTable",
    "evaluate_charge",
    "phase_expansion",
    "validate_charge",
]

__version__ = "0.1.0"
