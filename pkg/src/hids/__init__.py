"""Hierarchical intrusion detection for IoMT flow records."""

__version__ = "0.1.0"
