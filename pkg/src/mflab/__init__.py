"""Local join-the-shortest-queue balancing on a ring and its mean-field limit."""

__version__ = "0.1.0"
