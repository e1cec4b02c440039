"""Adaptive clip-aware video compression, frame selection and detection math."""

__version__ = "0.1.0"
