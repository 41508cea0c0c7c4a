"""Desk-scale end-to-end e-commerce search benchmark with AI components in the serving path."""

__version__ = "0.1.0"
