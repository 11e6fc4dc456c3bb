"""Counterfactual debiasing for audio-based depression detection."""

__version__ = "0.1.0"
