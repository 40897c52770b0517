"""Maximal nets, Voronoi decompositions and triangulation counts on closed hyperbolic manifolds."""

__version__ = "0.1.0"
