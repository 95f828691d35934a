"""Clamped von Karman plate with a retarded aerodynamic potential."""
__version__ = "0.1.0"
