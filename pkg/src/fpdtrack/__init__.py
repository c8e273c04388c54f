"""Frequency tracking of free-precession-decay signals.

Two estimators are provided: an extended Kalman smoother (EKS) operating on
block DFT coefficients, with parameters tuned by expectation maximisation,
and a block-wise sine-cosine least-squares fit (SCF).
"""

__version__ = "0.1.0"

from .errors import FitError, FormatError, FpdError, InvalidArgumentError, NumericalError
from .signal_model import FrequencyTrack, SimParams, TimeSeries, simulate_fpd

__all__ = [
    "FitError", "FormatError", "FpdError", "InvalidArgumentError", "NumericalError",
    "FrequencyTrack", "SimParams", "TimeSeries", "simulate_fpd", "__version__",
]
