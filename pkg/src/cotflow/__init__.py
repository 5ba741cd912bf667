"""Constrained dynamic optimal mass transport for control-affine systems.

Solvers for steering an initial density to a target density through
dynamics xdot = f(x, t) + B(x, t) u under input constraints u in U and
density bounds g <= rho <= h, on a uniform cell-centered space-time grid.
Two saddle-point drivers (direct and indirect variables) and one
Douglas-Rachford splitting driver are provided.
"""

from .grid import GridSpec

__all__ = ["GridSpec"]
__version__ = "0.1.0"
