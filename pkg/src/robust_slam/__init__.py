"""Robust visual-inertial backend on simulated dynamic scenes."""

__version__ = "0.1.0"
