"""Self-supervised fitting of mixed continuous/discrete avatar parameters."""

__version__ = "0.1.0"
