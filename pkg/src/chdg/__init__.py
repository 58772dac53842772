"""CHDG solver for the time-harmonic Maxwell equations on tetrahedral meshes."""

__version__ = "0.1.0"
