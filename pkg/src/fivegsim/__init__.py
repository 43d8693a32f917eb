"""Deterministic simulator of the 5G registration and authentication security plane."""

__version__ = "0.1.0"
