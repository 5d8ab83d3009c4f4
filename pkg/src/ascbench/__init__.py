"""Acoustic scene classification benchmark: audio I/O, features, training and reports."""

from ._accel import backend

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
