"""Saliency prediction: feature channels, kernel machines, evaluation."""

__version__ = "0.1.0"
