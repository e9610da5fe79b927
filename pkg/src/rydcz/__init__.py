"""Time-optimal pulse search for Rydberg controlled-Z gates."""

__version__ = "0.1.0"
