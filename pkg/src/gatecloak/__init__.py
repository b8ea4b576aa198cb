"""Layout rasterization, gate recognition, and DRC-compliant noise injection."""

__version__ = "0.1.0"
