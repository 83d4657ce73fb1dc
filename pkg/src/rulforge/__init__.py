"""Remaining-useful-life estimation for univariate run-to-failure series."""

__version__ = "0.1.0"
