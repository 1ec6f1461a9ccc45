"""Numerical laboratory for convex-integration subsolutions of the rescaled
compressible Euler system on the periodic torus.

Pipeline: incompressible weak solution -> mollified strict subsolution ->
compressible lift -> oscillatory perturbation -> low Mach number checks.
"""

from machlab.config import Tolerances, DEFAULT_TOLERANCES
from machlab.spectral import Field, GridSpec, Mollifier

__all__ = ["Field", "GridSpec", "Mollifier", "Tolerances", "DEFAULT_TOLERANCES"]
__version__ = "0.1.0"
