"""Dialect-enhanced tri-modal sentence representations for poetry sentiment classification."""

__version__ = "0.1.0"
