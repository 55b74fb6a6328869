"""reprobe: rebuild IO-processing code and BP-enabled models, then probe robustness."""

__version__ = "0.1.0"
