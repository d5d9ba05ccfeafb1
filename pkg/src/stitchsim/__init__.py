"""Desk-scale simulation of DXF-driven robotic sewing with visual seam tracking."""

__version__ = "0.1.0"
