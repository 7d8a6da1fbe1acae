"""p-index risk measurement, empirical efficient frontiers and factor tests."""

__version__ = "0.1.0"
