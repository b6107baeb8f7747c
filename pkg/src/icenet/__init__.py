"""Interactive contrast enhancement: a trainable per-pixel gamma estimator
driven by an exposure level and darken/brighten scribbles."""

__version__ = "0.1.0"
