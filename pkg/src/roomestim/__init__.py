"""Blind room acoustic parameter estimation from two-channel speech."""

__version__ = "0.1.0"
