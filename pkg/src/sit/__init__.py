"""Selective imaging of file-system data into AFF4-subset evidence containers."""

__version__ = "0.1.0"
