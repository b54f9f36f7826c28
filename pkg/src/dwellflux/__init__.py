"""Dwell times and flux-flux correlation functions for free 1D wavepackets."""

from .core import (
    FunctionAmplitude,
    GaussCutPacket,
    MomentumAmplitude,
    PolynomialAmplitude,
    Region,
    UnitSystem,
    load_config,
    make_gauss_cut_packet,
    region_overlap,
)
from .specfun import erfi, f_kernel

__version__ = "0.1.0"

__all__ = [
    "FunctionAmplitude",
    "GaussCutPacket",
    "MomentumAmplitude",
    "PolynomialAmplitude",
    "Region",
    "UnitSystem",
    "erfi",
    "f_kernel",
    "load_config",
    "make_gauss_cut_packet",
    "region_overlap",
]
