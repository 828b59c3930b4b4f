"""Secretion of a circular cell: exclusion and point-source diffusion models."""

__version__ = "0.1.0"
