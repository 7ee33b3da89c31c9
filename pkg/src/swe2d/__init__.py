"""Finite-volume shallow water solver on unstructured triangular meshes."""

__version__ = "0.1.0"
