"""Numerical checks of quantum dynamical bounds for long-range quasiperiodic operators."""
__version__ = "0.1.0"

from ._backend import BACKEND
from .lattice import (GOLDEN_MEAN, DiophantineParams, HoppingKernel, OperatorSpec, PotentialLaw, Window, assemble,
                      diophantine_check, kernel_decay_fit, spectrum_bound)
from .greens import Energy, barrier_chain, combes_thomas_check, good_box, scan_good_boxes
from .dynamics import StateVector, abel_moment, correlator, evolve, transport_exponent
from .commutator import WeightSequence, commutator_decompose, commutator_residual

__all__ = [
    "BACKEND", "GOLDEN_MEAN", "DiophantineParams", "HoppingKernel", "OperatorSpec", "PotentialLaw", "Window",
    "assemble", "diophantine_check", "kernel_decay_fit", "spectrum_bound", "Energy", "barrier_chain",
    "combes_thomas_check", "good_box", "scan_good_boxes", "StateVector", "abel_moment", "correlator",
    "evolve", "transport_exponent", "WeightSequence", "commutator_decompose", "commutator_residual",
]
