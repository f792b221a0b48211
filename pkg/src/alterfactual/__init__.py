"""Alterfactual and counterfactual explanations for binary image classifiers."""

__version__ = "0.1.0"
