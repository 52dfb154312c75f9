"""Hybrid 1D/2D steady-state simulator for thin tubular networks.

Solves Stokes flow and convection-diffusion-sorption in networks of thin
channels, three ways: a full 2D finite-element reference, a dimension-reduced
1D network model with transverse correctors and boundary-layer patches, and a
hybrid scheme that keeps 2D resolution only in zoom zones around bifurcations,
stenoses and ports.
"""

from tubenet import errors

__version__ = "0.1.0"

__all__ = ["errors", "__version__"]
