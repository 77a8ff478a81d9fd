"""Streaming active learning strategies for credit-card fraud detection."""

__version__ = "0.1.0"
