"""Gradient-based explanations for Drebin-style Android malware detectors."""

__version__ = "0.1.0"
