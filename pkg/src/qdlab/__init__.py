"""Numerical laboratory for one-phase and multiphase quadrature domains."""
from .measures import Measure, MollifiedMeasure, mollify, total_mass
from .potential import GridFunction, GridSpec, read_gf1, write_gf1

__version__ = "0.1.0"

__all__ = ["GridFunction", "GridSpec", "Measure", "MollifiedMeasure", "mollify", "read_gf1",
           "total_mass", "write_gf1", "__version__"]
