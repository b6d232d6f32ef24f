"""Dual-branch lag/TCN energy forecaster with int8 quantization."""

__version__ = "0.1.0"
