"""Desk-scale multiview two-task recursive attention segmentation."""

__version__ = "0.1.0"
