"""Complaint-hotspot prediction from signalling records."""

__version__ = "0.1.0"
