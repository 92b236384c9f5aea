"""Rao-Blackwellised tempered SMC for per-area, per-frequency material inversion."""

__version__ = "0.1.0"
