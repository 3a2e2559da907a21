"""Gene-guided multiple-instance transformer for discrete-time survival from patch bags and gene sets."""

__version__ = "0.1.0"
