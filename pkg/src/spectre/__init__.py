"""Masked spectral pseudo-label pre-training with cylindrical rotary position embedding for multi-channel sEMG."""

__version__ = "0.1.0"
