"""Compact condition tokens and exact condition-feature reuse for a toy diffusion transformer."""

__version__ = "0.1.0"
