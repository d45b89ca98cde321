"""n-harmonic map approximation: energies, inequality kernel, solver and bubbling diagnostics."""

from nharm.config import VERSION

__version__ = VERSION
