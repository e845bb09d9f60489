"""Hybrid point- and grid-based radar object detection on synthetic scenes."""

__version__ = "0.1.0"
