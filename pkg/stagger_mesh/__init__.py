"""Stagger Mesh - L-infinity Voronoi staggered dual meshes on adaptive Cartesian grids."""

__version__ = "1.0.0"
