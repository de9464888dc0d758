"""Signature-based deep fictitious play for mean-field games with common noise."""

__version__ = "0.1.0"
