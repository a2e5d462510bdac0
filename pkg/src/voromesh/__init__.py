"""Watertight surface reconstruction from Voronoi generators fitted with the VoroLoss."""

__version__ = "0.1.0"
