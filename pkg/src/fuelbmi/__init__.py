"""Behaviour measurement indicator pipeline for household fuel-poverty risk."""

__version__ = "0.1.0"
