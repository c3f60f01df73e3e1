"""Fingerprint clustering by frequent ridge-flow patterns."""

__version__ = "0.1.0"
