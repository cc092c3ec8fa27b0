"""Graybox modelling and control of a simulated waveguide-array photonic chip.

A recurrent blackbox maps electrode voltages to a Hamiltonian; fixed physics
layers turn it into a unitary and into measured powers. A second network,
trained through the frozen model, synthesizes voltage schedules for target
gates.
"""

from photonic_graybox._backend import NAME as BACKEND
from photonic_graybox.chip import ChipParams, MeasurementTrace, VoltageSequence, simulate
from photonic_graybox.errors import (ContractViolation, ConvergenceError, ReconstructionError,
                                     TrainingDivergence)
from photonic_graybox.model import GrayboxConfig, ModelState, TrainSettings

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ChipParams", "ContractViolation", "ConvergenceError", "GrayboxConfig",
    "MeasurementTrace", "ModelState", "ReconstructionError", "TrainSettings",
    "TrainingDivergence", "VoltageSequence", "simulate",
]
