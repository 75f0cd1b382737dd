"""Two-stage fleet dispatch with constrained spatio-temporal value tables."""

__version__ = "0.1.0"
