"""Spectral and large-N analysis of the SYK model coupled to a Lindblad bath."""

__version__ = "0.1.0"
