"""Regime-switching XVA pricing engine."""

__version__ = "0.1.0"
