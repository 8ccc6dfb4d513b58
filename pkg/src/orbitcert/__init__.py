"""Exact rational certificates for finite stages of orbit-equivalence constructions on the odometer."""

from .ratset import IntervalSet, LabeledPartition, Q, StepFunction, frac
from .dynamics import PiecewiseTranslation, PartialTranslation, odometer_system

__all__ = ["IntervalSet", "LabeledPartition", "Q", "StepFunction", "frac",
           "PiecewiseTranslation", "PartialTranslation", "odometer_system"]
__version__ = "0.1.0"
