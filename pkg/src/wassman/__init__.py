"""Wasserstein submanifold toolkit.

Discrete measures and entropic transport solvers, parametrized deformation
families, path energies on the induced submanifold, neighborhood-graph
metric approximation, and tangent-space recovery from transport maps.
"""

__version__ = "0.1.0"

from wassman.kernels import BACKEND, HAVE_EXTENSION

__all__ = ["BACKEND", "HAVE_EXTENSION", "__version__"]
