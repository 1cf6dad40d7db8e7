"""Paracontrolled dynamic Phi^4_3 on the 3-torus.

Spectral lattice fields, Littlewood-Paley blocks and Bony paraproducts, exact
O.U. sampling, renormalization constants and the rough distribution, a direct
ETD solver and the paracontrolled Picard solver.
"""

from . import errors, gauss_ou, lattice, lp_besov, paracalc, renorm, solver

__version__ = "0.1.0"

__all__ = ["errors", "gauss_ou", "lattice", "lp_besov", "paracalc", "renorm", "solver", "__version__"]
