"""Fully-convolutional sleep staging with conditional batch normalization."""

__version__ = "0.1.0"
