"""Numerical lab for strongly partially hyperbolic toral automorphisms of T^3
and their perturbations: splittings, periodic data, pressure, unstable
geometry, Margulis-type leaf measures and transfer-operator resonances."""

__version__ = "0.1.0"

from .torus_maps import AnosovMap, TrigTerm, companion_matrix, default_map, linear_eigen  # noqa: E402

__all__ = ["AnosovMap", "TrigTerm", "companion_matrix", "default_map", "linear_eigen", "__version__"]
