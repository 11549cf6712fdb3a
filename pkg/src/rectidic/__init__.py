"""SIFT-aided rectified 2D digital image correlation."""

__version__ = "0.1.0"
