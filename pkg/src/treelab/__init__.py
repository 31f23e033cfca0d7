"""Tree learners, importance measures and synthetic feature-selection benchmarks."""

__version__ = "0.1.0"
