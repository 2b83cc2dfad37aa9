"""Circuit-level trainer for time-varying analog networks with fractional dynamics."""

__version__ = "0.1.0"
