"""Regime-switching Monte-Carlo Value-at-Risk: classic, HMM and neural regime models."""

__version__ = "0.1.0"
