"""Desk-scale benchmark toolkit for language-prompted 3D multi-object tracking."""

__version__ = "0.1.0"
