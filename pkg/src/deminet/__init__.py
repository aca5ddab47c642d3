"""Dependency-aware multi-interest CTR model, built on a hand-rolled autodiff core."""

__version__ = "0.1.0"
