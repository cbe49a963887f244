"""Disentangled skill discovery on small factored MDPs."""

__version__ = "0.1.0"
