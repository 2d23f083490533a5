"""Uniform opposite-order preconditioners on intervals and surface meshes."""

__version__ = "0.1.0"
