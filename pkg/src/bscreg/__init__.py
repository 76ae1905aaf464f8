"""Lipschitz regularity toolkit for degenerate convex variational problems."""

__version__ = "0.1.0"
