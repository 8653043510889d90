"""Model-free price bounds for discretely monitored path-dependent options."""

__version__ = "0.1.0"
