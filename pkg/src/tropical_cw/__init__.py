"""Tropical bisectors, tropical-distance classifiers and Carlini-Wagner attacks."""

__version__ = "0.1.0"
