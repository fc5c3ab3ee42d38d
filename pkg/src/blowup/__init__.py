"""Blow-up analysis of nonautonomous asymptotically quasi-homogeneous ODEs."""

__version__ = "0.1.0"
