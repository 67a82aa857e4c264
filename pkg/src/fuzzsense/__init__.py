"""Modular black-box ensemble fuzzing for autonomous-driving software."""

__version__ = "0.1.0"
